#pragma once
/**
 * HTTP/JSON service over the labeling loop.
 *
 * Workspace owns everything the service touches (datasets, the label store,
 * the round controller, analysis and thumbnail caches, background jobs) and
 * is usable without HTTP; the CLI loop commands drive it directly. Service
 * binds a Workspace to the /api routes.
 */

#include "scatgate/analysis.hpp"
#include "scatgate/loop.hpp"
#include "scatgate/store.hpp"

#include "json.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace scatgate::gateway {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path data_root;
    int thumb_side = 128;
    std::optional<std::string> auth_token;
    std::vector<std::string> cors_allowlist;  // "*" allows any origin
    // Datasets: every <data_root>/datasets/<name>/manifest.jsonl plus these.
    std::vector<std::filesystem::path> dataset_dirs;
    std::optional<std::string> loop_dataset;  // default: first dataset by name
    std::optional<PatternClass> loop_pattern;
    double search_window = 40.0;  // center search half-width, px
    bool normalize_on_all = false;  // z-score reference: experimental only unless set

    /// Throws InvalidArgument for a bad port or side, Io for an unusable data root.
    void validate() const;
};

/// Reads [server] and [loop] tables; relative paths resolve against the file.
ServiceConfig load_service_config(const std::filesystem::path& path);
ServiceConfig parse_service_config(const std::string& toml_text,
                                   const std::filesystem::path& base = std::filesystem::current_path());

/// Log-scaled, area-downsampled 8-bit grayscale PNG of side x side pixels.
std::vector<std::uint8_t> render_thumbnail(const ScatterFrame& frame, int side);

struct Dataset {
    std::string name;
    std::filesystem::path dir;
    DatasetManifest manifest;
};

enum class JobStatus { Queued, Running, Done, Failed };
const char* to_string(JobStatus s) noexcept;

struct Job {
    std::string id;
    std::string kind;
    JobStatus status = JobStatus::Queued;
    nlohmann::json result;
    std::string error;
    std::string error_kind;
    Timestamp created{};
    Timestamp finished{};
};

nlohmann::json to_json(const Job& job);

/// Single worker thread running jobs in submission order.
class JobRunner {
public:
    using Task = std::function<nlohmann::json()>;

    JobRunner();
    ~JobRunner();
    JobRunner(const JobRunner&) = delete;
    JobRunner& operator=(const JobRunner&) = delete;

    std::string submit(const std::string& kind, Task task);
    std::optional<Job> get(const std::string& id) const;
    /// Blocks until the job leaves Queued/Running.
    Job wait(const std::string& id) const;
    void shutdown();

private:
    void worker();

    mutable std::mutex mutex_;
    mutable std::condition_variable cv_;
    std::map<std::string, Job> jobs_;
    std::deque<std::pair<std::string, Task>> pending_;
    std::uint64_t next_ = 1;
    bool stopping_ = false;
    std::thread thread_;
};

/// Stored responses keyed by (method, path, idempotency key).
class IdempotencyCache {
public:
    struct Response {
        int status = 200;
        std::string body;
    };
    /// Runs `produce` once per key; concurrent retries wait for the first.
    Response run(const std::string& key, const std::function<Response()>& produce);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<std::string, std::optional<Response>> entries_;
};

struct ImageQuery {
    std::optional<std::string> dataset;
    int page = 1;
    int page_size = 50;
    std::vector<std::string> filters;  // realistic, fake, unlabeled, labeled, experimental, generated, <pattern>
};

struct SeedRequest {
    double scale = 1.0;
    std::optional<double> validation_scale;
    std::uint64_t seed = 0;
};

struct BuildRequest {
    std::optional<loop::Targets> targets;
    double scale = 1.0;  // of the next-round targets when `targets` is unset
    bool retain_previous = true;
    std::uint64_t seed = 0;
};

struct TrainRequest {
    loop::PanelSpec panel = loop::default_panel();
    std::uint64_t seed = 0;
};

struct ProposeRequest {
    std::size_t batch = 100;
    std::optional<ensemble::Strategy> strategy;  // default: soft-weighted with fitted weights
    double threshold = 0.5;
};

struct LabelRequest {
    std::string image_id;
    Verdict verdict = Verdict::Fake;
    std::string annotator = "operator";
};

class Workspace {
public:
    explicit Workspace(ServiceConfig config);
    ~Workspace();

    const ServiceConfig& config() const noexcept { return config_; }

    // datasets and images
    std::vector<std::string> dataset_names() const;
    const Dataset& dataset(const std::string& name) const;
    /// Throws NotFound for unknown ids.
    const Dataset& dataset_of(const std::string& image_id) const;
    const ManifestEntry& entry(const std::string& image_id) const;
    bool has_image(const std::string& image_id) const;
    ScatterFrame frame(const std::string& image_id) const;
    std::filesystem::path image_path(const std::string& image_id) const;

    nlohmann::json datasets_json() const;
    nlohmann::json images_json(const ImageQuery& query) const;
    std::shared_ptr<const std::vector<std::uint8_t>> thumbnail(const std::string& image_id, int side);
    std::size_t thumbnail_cache_size() const;
    nlohmann::json realism_json(const std::string& image_id);

    // loop
    loop::Controller& controller() noexcept { return *controller_; }
    analysis::SampleTable& samples() noexcept { return *samples_; }
    const Dataset& loop_dataset() const;
    /// Fits the feature normalizer on the reference ids once.
    void ensure_normalizer();
    loop::SampleLookup lookup();

    loop::RoundState seed(const SeedRequest& request);
    loop::RoundState train(const TrainRequest& request);
    std::vector<loop::ReviewQueueItem> propose(int round, const ProposeRequest& request);
    loop::RoundState build_next(int round, const BuildRequest& request);
    /// Queue item -> review of the current round; before any round -> round-0
    /// human label; otherwise Conflict. Unknown ids are NotFound.
    nlohmann::json label(const LabelRequest& request);

    nlohmann::json rounds_json() const;
    nlohmann::json round_json(int index) const;
    nlohmann::json queue_json(int index) const;
    nlohmann::json projection_json(const std::string& model);

    JobRunner& jobs() noexcept { return jobs_; }
    IdempotencyCache& idempotency() noexcept { return idempotency_; }

private:
    void index_dataset(const std::string& name, const std::filesystem::path& dir);
    const loop::RoundState& require_round(const std::vector<loop::RoundState>& rounds, int index) const;

    ServiceConfig config_;
    std::map<std::string, Dataset> datasets_;
    std::map<std::string, std::string> image_dataset_;  // id -> dataset name
    std::string loop_dataset_;
    std::unique_ptr<LabelStore> labels_;
    std::unique_ptr<loop::Controller> controller_;
    std::unique_ptr<analysis::SampleTable> samples_;
    std::mutex normalizer_mutex_;

    mutable std::mutex thumb_mutex_;
    std::map<std::pair<std::string, int>, std::shared_ptr<const std::vector<std::uint8_t>>> thumbs_;

    std::mutex projection_mutex_;
    std::map<std::string, nlohmann::json> projections_;  // keyed by model name + round

    JobRunner jobs_;
    IdempotencyCache idempotency_;
};

/// HTTP status for an error kind.
int http_status(ErrorKind kind) noexcept;

class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket; returns the bound port. Throws Io when busy.
    int bind();
    /// Serves until stop(); binds first if needed.
    void run();
    /// Serves on a background thread.
    void start();
    void stop();
    int port() const noexcept { return port_; }
    Workspace& workspace() noexcept { return *workspace_; }

private:
    struct Impl;
    std::unique_ptr<Workspace> workspace_;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
    std::atomic<int> port_{0};
    bool bound_ = false;
};

}  // namespace scatgate::gateway
