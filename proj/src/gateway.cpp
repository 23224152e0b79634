#include "scatgate/gateway.hpp"

#include "scatgate/synth.hpp"
#include "scatgate/toml_lite.hpp"

#include "httplib.h"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace scatgate::gateway {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

json label_json(const std::optional<LabelRecord>& rec) {
    if (!rec) return nullptr;
    return {{"verdict", to_string(rec->verdict)},
            {"source", to_string(rec->source)},
            {"round", rec->round},
            {"annotator", rec->annotator},
            {"timestamp", format_timestamp(rec->timestamp)}};
}

json composition_json(const loop::Composition& c) {
    return {{"experimental_realistic", c.experimental_realistic},
            {"generated_realistic", c.generated_realistic},
            {"generated_fake", c.generated_fake},
            {"experimental_fake", c.experimental_fake},
            {"realistic", c.realistic()},
            {"fake", c.fake()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void ServiceConfig::validate() const {
    require(port >= 0 && port <= 65535, "port must lie in [0, 65535], got " + std::to_string(port));
    require(thumb_side >= 1 && thumb_side <= 4096, "thumbnail side must lie in [1, 4096]");
    require(search_window > 0.0, "center search window must be positive");
    require(!data_root.empty(), "data root is required");
    std::error_code ec;
    fs::create_directories(data_root, ec);
    if (ec || !fs::is_directory(data_root)) fail(ErrorKind::Io, "data root is not a directory: " + data_root.string());
    const auto probe = data_root / ".write-probe";
    {
        std::ofstream out(probe);
        if (!out) fail(ErrorKind::Io, "data root is not writable: " + data_root.string());
    }
    fs::remove(probe, ec);
}

ServiceConfig parse_service_config(const std::string& toml_text, const fs::path& base) {
    const auto doc = config::parse_toml(toml_text);
    ServiceConfig c;
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    try {
        if (doc.contains("server")) {
            const auto& s = doc.at("server");
            c.host = s.value("host", c.host);
            c.port = s.value("port", c.port);
            if (s.contains("data_root")) c.data_root = resolve(s.at("data_root").get<std::string>());
            c.thumb_side = s.value("thumb_side", c.thumb_side);
            if (s.contains("auth_token")) c.auth_token = s.at("auth_token").get<std::string>();
            if (s.contains("cors_allowlist")) s.at("cors_allowlist").get_to(c.cors_allowlist);
            if (s.contains("datasets"))
                for (const auto& d : s.at("datasets")) c.dataset_dirs.push_back(resolve(d.get<std::string>()));
        }
        if (doc.contains("loop")) {
            const auto& l = doc.at("loop");
            if (l.contains("dataset")) c.loop_dataset = l.at("dataset").get<std::string>();
            if (l.contains("pattern")) c.loop_pattern = parse_pattern(l.at("pattern").get<std::string>());
            c.search_window = l.value("search_window", c.search_window);
            c.normalize_on_all = l.value("normalize_on_all", c.normalize_on_all);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("bad service config: ") + e.what());
    }
    return c;
}

ServiceConfig load_service_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_service_config(ss.str(), path.parent_path());
}

std::vector<std::uint8_t> render_thumbnail(const ScatterFrame& frame, int side) {
    require(side >= 1 && side <= 4096, "thumbnail side must lie in [1, 4096], got " + std::to_string(side));
    const auto values = area_downsample(log_scale(frame), side, side);
    return encode_png(side, side, values, 8);
}

// ---------------------------------------------------------------------------
// jobs

const char* to_string(JobStatus s) noexcept {
    switch (s) {
        case JobStatus::Queued: return "queued";
        case JobStatus::Running: return "running";
        case JobStatus::Done: return "done";
        case JobStatus::Failed: return "failed";
    }
    return "?";
}

json to_json(const Job& job) {
    json j{{"id", job.id}, {"kind", job.kind}, {"status", to_string(job.status)},
           {"created", format_timestamp(job.created)}};
    if (job.status == JobStatus::Done) j["result"] = job.result;
    if (job.status == JobStatus::Failed) j["error"] = {{"error", job.error}, {"kind", job.error_kind}};
    if (job.status == JobStatus::Done || job.status == JobStatus::Failed) j["finished"] = format_timestamp(job.finished);
    return j;
}

JobRunner::JobRunner() : thread_([this] { worker(); }) {}

JobRunner::~JobRunner() { shutdown(); }

void JobRunner::shutdown() {
    {
        std::lock_guard lock(mutex_);
        if (stopping_ && !thread_.joinable()) return;
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

std::string JobRunner::submit(const std::string& kind, Task task) {
    std::lock_guard lock(mutex_);
    require(!stopping_, "job runner is shutting down", ErrorKind::Conflict);
    const std::string id = "job-" + std::to_string(next_++);
    Job job;
    job.id = id;
    job.kind = kind;
    job.created = now_utc();
    jobs_[id] = job;
    pending_.emplace_back(id, std::move(task));
    cv_.notify_all();
    return id;
}

std::optional<Job> JobRunner::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    if (auto it = jobs_.find(id); it != jobs_.end()) return it->second;
    return std::nullopt;
}

Job JobRunner::wait(const std::string& id) const {
    std::unique_lock lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorKind::NotFound, "no job " + id);
    cv_.wait(lock, [&] { return it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed; });
    return it->second;
}

void JobRunner::worker() {
    for (;;) {
        std::pair<std::string, Task> next;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
            // Queued work still runs on shutdown so accepted jobs are never dropped.
            if (pending_.empty()) return;
            next = std::move(pending_.front());
            pending_.pop_front();
            jobs_[next.first].status = JobStatus::Running;
        }
        json result;
        std::string error, kind;
        try {
            result = next.second();
        } catch (const Error& e) {
            error = e.what();
            kind = to_string(e.kind());
        } catch (const std::exception& e) {
            error = e.what();
            kind = "internal";
        }
        {
            std::lock_guard lock(mutex_);
            auto& job = jobs_[next.first];
            job.finished = now_utc();
            if (kind.empty()) {
                job.status = JobStatus::Done;
                job.result = std::move(result);
            } else {
                job.status = JobStatus::Failed;
                job.error = error;
                job.error_kind = kind;
            }
        }
        cv_.notify_all();
    }
}

IdempotencyCache::Response IdempotencyCache::run(const std::string& key, const std::function<Response()>& produce) {
    {
        std::unique_lock lock(mutex_);
        for (;;) {
            auto it = entries_.find(key);
            if (it == entries_.end()) {
                entries_.emplace(key, std::nullopt);  // claim
                break;
            }
            if (it->second) return *it->second;
            cv_.wait(lock);
        }
    }
    Response r;
    try {
        r = produce();
    } catch (...) {
        std::lock_guard lock(mutex_);
        entries_.erase(key);
        cv_.notify_all();
        throw;
    }
    std::lock_guard lock(mutex_);
    // Server faults are not replayed; a retry gets a fresh attempt.
    if (r.status >= 500) entries_.erase(key);
    else entries_[key] = r;
    cv_.notify_all();
    return r;
}

std::size_t IdempotencyCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// workspace

Workspace::Workspace(ServiceConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto root = config_.data_root / "datasets";
    if (fs::is_directory(root)) {
        std::vector<fs::path> dirs;
        for (const auto& d : fs::directory_iterator(root))
            if (d.is_directory() && fs::exists(d.path() / "manifest.jsonl")) dirs.push_back(d.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) index_dataset(d.filename().string(), d);
    }
    for (const auto& d : config_.dataset_dirs) {
        auto name = fs::weakly_canonical(d).filename().string();
        if (name.empty()) name = "dataset";
        index_dataset(name, d);
    }
    if (config_.loop_dataset) {
        require(datasets_.count(*config_.loop_dataset), "unknown loop dataset: " + *config_.loop_dataset,
                ErrorKind::NotFound);
        loop_dataset_ = *config_.loop_dataset;
    } else if (!datasets_.empty()) {
        loop_dataset_ = datasets_.begin()->first;
    }

    labels_ = std::make_unique<LabelStore>(config_.data_root / "labels.jsonl");
    loop::Pools pools;
    if (!loop_dataset_.empty()) pools = loop::pools_from_manifest(datasets_.at(loop_dataset_).manifest, config_.loop_pattern);
    controller_ = std::make_unique<loop::Controller>(std::move(pools), *labels_, config_.data_root);
    controller_->load();

    analysis::AnalysisOptions options;
    options.realism.search.window = config_.search_window;
    options.features.search.window = config_.search_window;
    samples_ = std::make_unique<analysis::SampleTable>(
        [this](const std::string& id) {
            return analysis::LoadedFrame{frame(id), entry(id).pattern};
        },
        options);
}

Workspace::~Workspace() { jobs_.shutdown(); }

void Workspace::index_dataset(const std::string& name, const fs::path& dir) {
    require(!datasets_.count(name), "duplicate dataset name: " + name, ErrorKind::Conflict);
    Dataset d{name, dir, read_manifest(dir / "manifest.jsonl")};
    for (const auto& e : d.manifest.entries()) {
        const auto [it, fresh] = image_dataset_.emplace(e.id(), name);
        if (!fresh)
            fail(ErrorKind::Conflict, "image id " + e.id() + " appears in datasets " + it->second + " and " + name);
    }
    datasets_.emplace(name, std::move(d));
}

std::vector<std::string> Workspace::dataset_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : datasets_) out.push_back(name);
    return out;
}

const Dataset& Workspace::dataset(const std::string& name) const {
    const auto it = datasets_.find(name);
    if (it == datasets_.end()) fail(ErrorKind::NotFound, "unknown dataset: " + name);
    return it->second;
}

const Dataset& Workspace::dataset_of(const std::string& image_id) const {
    const auto it = image_dataset_.find(image_id);
    if (it == image_dataset_.end()) fail(ErrorKind::NotFound, "unknown image: " + image_id);
    return datasets_.at(it->second);
}

const ManifestEntry& Workspace::entry(const std::string& image_id) const {
    return *dataset_of(image_id).manifest.find_id(image_id);
}

bool Workspace::has_image(const std::string& image_id) const { return image_dataset_.count(image_id) > 0; }

ScatterFrame Workspace::frame(const std::string& image_id) const {
    const auto& d = dataset_of(image_id);
    return synth::load_corpus_frame(d.dir, *d.manifest.find_id(image_id));
}

fs::path Workspace::image_path(const std::string& image_id) const {
    const auto& d = dataset_of(image_id);
    return d.dir / d.manifest.find_id(image_id)->path;
}

const Dataset& Workspace::loop_dataset() const {
    if (loop_dataset_.empty()) fail(ErrorKind::NotFound, "no dataset is configured for the labeling loop");
    return datasets_.at(loop_dataset_);
}

json Workspace::datasets_json() const {
    json out = json::array();
    for (const auto& [name, d] : datasets_) {
        std::map<std::string, int> by_origin, by_pattern;
        for (const auto& e : d.manifest.entries()) {
            by_origin[to_string(e.origin)]++;
            by_pattern[to_string(e.pattern)]++;
        }
        out.push_back({{"name", name},
                       {"size", d.manifest.size()},
                       {"origins", by_origin},
                       {"patterns", by_pattern},
                       {"loop", name == loop_dataset_}});
    }
    return {{"datasets", out}};
}

json Workspace::images_json(const ImageQuery& q) const {
    require(q.page >= 1, "page must be >= 1");
    require(q.page_size >= 1 && q.page_size <= 1000, "page_size must lie in [1, 1000]");
    std::vector<std::string> names;
    if (q.dataset) names.push_back(dataset(*q.dataset).name);
    else names = dataset_names();

    std::set<std::string> verdicts, origins, patterns;
    bool want_unlabeled = false, want_labeled = false;
    for (const auto& raw : q.filters) {
        const auto f = lower(raw);
        if (f == "realistic" || f == "fake") verdicts.insert(f);
        else if (f == "experimental" || f == "generated") origins.insert(f);
        else if (f == "rings" || f == "peaks" || f == "background") patterns.insert(f);
        else if (f == "unlabeled") want_unlabeled = true;
        else if (f == "labeled") want_labeled = true;
        else fail(ErrorKind::InvalidArgument, "unknown image filter: " + raw);
    }

    json items = json::array();
    std::size_t total = 0;
    const std::size_t first = static_cast<std::size_t>(q.page - 1) * q.page_size;
    for (const auto& name : names) {
        const auto& d = datasets_.at(name);
        for (const auto& e : d.manifest.entries()) {
            if (!origins.empty() && !origins.count(to_string(e.origin))) continue;
            if (!patterns.empty() && !patterns.count(to_string(e.pattern))) continue;
            const auto id = e.id();
            const auto label = controller_->effective_label(id);
            if (want_unlabeled && label) continue;
            if (want_labeled && !label) continue;
            if (!verdicts.empty() && (!label || !verdicts.count(to_string(label->verdict)))) continue;
            if (total >= first && items.size() < static_cast<std::size_t>(q.page_size)) {
                json item{{"id", id},
                          {"dataset", name},
                          {"origin", to_string(e.origin)},
                          {"pattern", to_string(e.pattern)},
                          {"label", label_json(label)},
                          {"thumb_url", "/api/images/" + id + "/thumb"},
                          {"raw_url", "/api/images/" + id + "/raw"}};
                if (e.caption) item["caption"] = *e.caption;
                items.push_back(item);
            }
            ++total;
        }
    }
    return {{"page", q.page}, {"page_size", q.page_size}, {"total", total}, {"items", items}};
}

std::shared_ptr<const std::vector<std::uint8_t>> Workspace::thumbnail(const std::string& image_id, int side) {
    require(side >= 1 && side <= 4096, "thumbnail side must lie in [1, 4096], got " + std::to_string(side));
    dataset_of(image_id);
    const auto key = std::make_pair(image_id, side);
    {
        std::lock_guard lock(thumb_mutex_);
        if (auto it = thumbs_.find(key); it != thumbs_.end()) return it->second;
    }
    auto bytes = std::make_shared<const std::vector<std::uint8_t>>(render_thumbnail(frame(image_id), side));
    std::lock_guard lock(thumb_mutex_);
    return thumbs_.try_emplace(key, std::move(bytes)).first->second;
}

std::size_t Workspace::thumbnail_cache_size() const {
    std::lock_guard lock(thumb_mutex_);
    return thumbs_.size();
}

json Workspace::realism_json(const std::string& image_id) {
    dataset_of(image_id);
    const auto& a = samples_->analyzed(image_id);
    auto j = physics::to_json(a.realism);
    j["id"] = image_id;
    j["center_fallback"] = a.center_fallback;
    return j;
}

void Workspace::ensure_normalizer() {
    std::lock_guard lock(normalizer_mutex_);
    if (samples_->has_normalizer()) return;
    const auto& pools = controller_->pools();
    std::vector<std::string> ref = pools.experimental;
    if (config_.normalize_on_all || ref.size() < 2) ref.insert(ref.end(), pools.generated.begin(), pools.generated.end());
    require(ref.size() >= 2, "the loop dataset has too few images to fit a feature normalizer", ErrorKind::Insufficient);
    samples_->fit_normalizer(ref);
}

loop::SampleLookup Workspace::lookup() {
    ensure_normalizer();
    return samples_->lookup();
}

loop::RoundState Workspace::seed(const SeedRequest& r) {
    require(r.scale > 0.0, "scale must be positive");
    loop::SeedOptions options;
    options.training = loop::kSeedTargets.scaled(r.scale);
    options.validation = loop::kSeedTargets.scaled(r.validation_scale.value_or(r.scale));
    options.seed = r.seed;
    return controller_->seed(options);
}

loop::RoundState Workspace::train(const TrainRequest& r) {
    auto samples = lookup();
    const auto current = controller_->current();
    if (!current) fail(ErrorKind::Conflict, "no round has been seeded");
    // Warm the analysis cache before the controller needs the samples.
    for (const auto* set : {&current->training, &current->validation})
        for (const auto& e : *set) samples(e.id);
    return controller_->train(r.panel, samples, r.seed);
}

std::vector<loop::ReviewQueueItem> Workspace::propose(int round, const ProposeRequest& r) {
    require(r.batch >= 1, "batch must be >= 1");
    auto samples = lookup();
    const auto current = controller_->current();
    if (!current) fail(ErrorKind::Conflict, "no round has been seeded");
    if (current->index != round)
        fail(ErrorKind::Conflict, "round " + std::to_string(round) + " is not the current round (" +
                                      std::to_string(current->index) + ")");
    auto vote = controller_->weighted_vote(round);
    if (r.strategy) vote.strategy = *r.strategy;
    vote.threshold = r.threshold;
    // Analysis runs here, outside the controller lock.
    samples_->analyze_all(controller_->pools().generated);
    return controller_->propose(vote, samples, r.batch, round);
}

loop::RoundState Workspace::build_next(int round, const BuildRequest& r) {
    const auto current = controller_->current();
    if (!current) fail(ErrorKind::Conflict, "no round has been seeded");
    if (current->index != round)
        fail(ErrorKind::Conflict, "round " + std::to_string(round) + " is not the current round (" +
                                      std::to_string(current->index) + ")");
    loop::BuildOptions options;
    options.targets = r.targets ? *r.targets : loop::kNextTargets.scaled(r.scale);
    options.retain_previous = r.retain_previous;
    options.seed = r.seed;
    return controller_->build_next(options);
}

json Workspace::label(const LabelRequest& r) {
    dataset_of(r.image_id);
    require(!r.annotator.empty(), "annotator must not be empty");
    const auto current = controller_->current();
    if (!current) {
        const auto rec = controller_->label_initial(r.image_id, r.verdict, r.annotator);
        return {{"id", r.image_id}, {"round", 0}, {"label", label_json(rec)}};
    }
    const bool queued = std::any_of(current->queue.begin(), current->queue.end(),
                                    [&](const loop::ReviewQueueItem& q) { return q.id == r.image_id; });
    if (!queued)
        fail(ErrorKind::Conflict, "image " + r.image_id + " is not in the review queue of round " +
                                      std::to_string(current->index));
    const auto after = controller_->review({{r.image_id, r.verdict}}, r.annotator, current->index);
    return {{"id", r.image_id},
            {"round", after.index},
            {"status", loop::to_string(after.status)},
            {"reviewed", after.reviewed.size()},
            {"queue_size", after.queue.size()},
            {"label", label_json(controller_->effective_label(r.image_id))}};
}

const loop::RoundState& Workspace::require_round(const std::vector<loop::RoundState>& rounds, int index) const {
    for (const auto& r : rounds)
        if (r.index == index) return r;
    fail(ErrorKind::NotFound, "no round " + std::to_string(index));
}

json Workspace::rounds_json() const {
    json out = json::array();
    for (const auto& r : controller_->rounds())
        out.push_back({{"index", r.index},
                       {"status", loop::to_string(r.status)},
                       {"trained", r.trained()},
                       {"training", composition_json(r.training_composition())},
                       {"validation", composition_json(r.validation_composition())},
                       {"queue_size", r.queue.size()},
                       {"reviewed", r.reviewed.size()}});
    return {{"rounds", out}};
}

json Workspace::round_json(int index) const {
    const auto rounds = controller_->rounds();
    return loop::to_json(require_round(rounds, index));
}

json Workspace::queue_json(int index) const {
    const auto rounds = controller_->rounds();
    const auto& r = require_round(rounds, index);
    json items = json::array();
    for (const auto& q : r.queue) {
        json item{{"id", q.id},
                  {"model_verdict", to_string(q.model_verdict)},
                  {"p_realistic", q.p_realistic},
                  {"physics_composite", q.physics_composite},
                  {"round", q.round},
                  {"reviewed", r.reviewed.count(q.id) > 0},
                  {"thumb_url", "/api/images/" + q.id + "/thumb"}};
        if (has_image(q.id)) item["pattern"] = to_string(entry(q.id).pattern);
        items.push_back(item);
    }
    return {{"round", r.index},
            {"status", loop::to_string(r.status)},
            {"reviewed", r.reviewed.size()},
            {"items", items}};
}

json Workspace::projection_json(const std::string& model) {
    const std::string name = model.empty() ? "pca" : model;
    if (name != "pca") fail(ErrorKind::NotFound, "unknown projection model: " + name + " (available: pca)");
    json cached;
    {
        std::lock_guard lock(projection_mutex_);
        if (auto it = projections_.find(name); it != projections_.end()) cached = it->second;
    }
    if (cached.is_null()) {
        auto samples = lookup();
        const auto& d = loop_dataset();
        std::vector<std::string> ids;
        std::vector<FeatureVector> vectors;
        for (const auto& e : d.manifest.entries()) {
            if (config_.loop_pattern && e.pattern != *config_.loop_pattern) continue;
            ids.push_back(e.id());
            vectors.push_back({samples(e.id()).features, "normalized"});
        }
        const auto pm = embed::fit_projection(vectors, 2);
        json points = json::array();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto xy = embed::project(pm, vectors[i].values);
            points.push_back({{"id", ids[i]}, {"x", xy[0]}, {"y", xy[1]}});
        }
        cached = {{"model", name}, {"dataset", d.name}, {"explained_ratio", pm.explained_ratio}, {"points", points}};
        std::lock_guard lock(projection_mutex_);
        projections_[name] = cached;
    }
    // Coordinates are cached; labels are read fresh.
    for (auto& p : cached["points"]) {
        const auto id = p.at("id").get<std::string>();
        const auto& e = entry(id);
        const auto label = controller_->effective_label(id);
        p["origin"] = to_string(e.origin);
        p["pattern"] = to_string(e.pattern);
        p["verdict"] = label ? json(to_string(label->verdict)) : json(nullptr);
    }
    return cached;
}

// ---------------------------------------------------------------------------
// HTTP

int http_status(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return 400;
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Conflict:
        case ErrorKind::Insufficient: return 409;
        case ErrorKind::Numerical: return 422;
        case ErrorKind::Io: return 500;
    }
    return 500;
}

namespace {

using Reply = IdempotencyCache::Response;

Reply json_reply(int status, const json& body) { return {status, body.dump()}; }

Reply error_reply(int status, const std::string& message, const std::string& kind) {
    return json_reply(status, {{"error", message}, {"kind", kind}});
}

// Runs a handler body and maps failures onto JSON errors.
Reply guarded(const std::function<Reply()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        return error_reply(http_status(e.kind()), e.what(), to_string(e.kind()));
    } catch (const json::exception& e) {
        return error_reply(400, std::string("malformed request: ") + e.what(), "invalid_argument");
    } catch (const std::exception& e) {
        return error_reply(500, e.what(), "internal");
    }
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j;
    try {
        j = json::parse(req.body);
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("request body is not JSON: ") + e.what());
    }
    require(j.is_object(), "request body must be a JSON object");
    return j;
}

int int_param(const httplib::Request& req, const std::string& name, int fallback) {
    if (!req.has_param(name)) return fallback;
    const auto v = req.get_param_value(name);
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, "query parameter " + name + " must be an integer, got '" + v + "'");
}

int path_int(const httplib::Request& req, const std::string& name) {
    const auto v = req.path_params.at(name);
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, name + " must be an integer, got '" + v + "'");
}

std::uint64_t seed_of(const json& body) { return body.value("seed", std::uint64_t{0}); }

}  // namespace

struct Service::Impl {
    httplib::Server server;
};

Service::Service(ServiceConfig config)
    : workspace_(std::make_unique<Workspace>(std::move(config))), impl_(std::make_unique<Impl>()) {
    auto& svr = impl_->server;
    auto& ws = *workspace_;
    const auto cfg = ws.config();
    // SO_REUSEADDR only: the library default adds SO_REUSEPORT, which lets a
    // second instance share a busy port silently.
    svr.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });

    auto send = [](httplib::Response& res, const Reply& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    auto get = [&svr, send](const std::string& pattern, std::function<Reply(const httplib::Request&)> fn) {
        svr.Get(pattern, [fn, send](const httplib::Request& req, httplib::Response& res) {
            send(res, guarded([&] { return fn(req); }));
        });
    };
    // Mutating routes replay the stored response for a repeated idempotency key.
    auto post = [&svr, &ws, send](const std::string& pattern,
                                   std::function<Reply(const httplib::Request&, const json&)> fn) {
        svr.Post(pattern, [&ws, fn, send](const httplib::Request& req, httplib::Response& res) {
            json body;
            std::string key = req.get_header_value("Idempotency-Key");
            const auto parsed = guarded([&] {
                body = body_json(req);
                if (key.empty() && body.contains("idempotency_key"))
                    key = body.at("idempotency_key").get<std::string>();
                return Reply{};
            });
            if (parsed.status != 200) return send(res, parsed);
            auto produce = [&] { return guarded([&] { return fn(req, body); }); };
            if (key.empty()) return send(res, produce());
            const auto r = ws.idempotency().run(req.method + " " + req.path + " " + key, produce);
            res.set_header("Idempotency-Key", key);
            send(res, r);
        });
    };

    svr.set_pre_routing_handler([cfg, send](const httplib::Request& req, httplib::Response& res) {
        if (!cfg.auth_token || req.method == "OPTIONS") return httplib::Server::HandlerResponse::Unhandled;
        if (req.path.rfind("/api/", 0) != 0 || req.path == "/api/health")
            return httplib::Server::HandlerResponse::Unhandled;
        const auto bearer = req.get_header_value("Authorization");
        const bool ok = bearer == "Bearer " + *cfg.auth_token || req.get_header_value("X-Auth-Token") == *cfg.auth_token;
        if (ok) return httplib::Server::HandlerResponse::Unhandled;
        send(res, error_reply(401, "missing or invalid auth token", "unauthorized"));
        return httplib::Server::HandlerResponse::Handled;
    });
    svr.set_post_routing_handler([cfg](const httplib::Request& req, httplib::Response& res) {
        const auto origin = req.get_header_value("Origin");
        if (origin.empty()) return;
        const bool any = std::find(cfg.cors_allowlist.begin(), cfg.cors_allowlist.end(), "*") != cfg.cors_allowlist.end();
        const bool listed =
            std::find(cfg.cors_allowlist.begin(), cfg.cors_allowlist.end(), origin) != cfg.cors_allowlist.end();
        if (!any && !listed) return;
        res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization, X-Auth-Token, Idempotency-Key");
    });
    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    svr.set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty() || req.path.rfind("/api/", 0) != 0) return;
        send(res, error_reply(res.status, "no route for " + req.method + " " + req.path,
                              res.status == 404 ? "not_found" : "http"));
    });

    get("/api/health", [](const httplib::Request&) {
        return json_reply(200, {{"status", "ok"}, {"version", kVersion}});
    });
    get("/api/datasets", [&ws](const httplib::Request&) { return json_reply(200, ws.datasets_json()); });
    get("/api/images", [&ws](const httplib::Request& req) {
        ImageQuery q;
        if (req.has_param("dataset")) q.dataset = req.get_param_value("dataset");
        q.page = int_param(req, "page", 1);
        q.page_size = int_param(req, "page_size", 50);
        if (req.has_param("filter")) q.filters = split_csv(req.get_param_value("filter"));
        for (const char* extra : {"pattern", "origin"})
            if (req.has_param(extra))
                for (auto& f : split_csv(req.get_param_value(extra))) q.filters.push_back(f);
        return json_reply(200, ws.images_json(q));
    });
    svr.Get("/api/images/:id/thumb", [&ws, send](const httplib::Request& req, httplib::Response& res) {
        std::shared_ptr<const std::vector<std::uint8_t>> png;
        const auto r = guarded([&] {
            png = ws.thumbnail(req.path_params.at("id"), int_param(req, "side", ws.config().thumb_side));
            return Reply{};
        });
        if (!png) return send(res, r);
        res.set_header("Cache-Control", "max-age=3600");
        res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
    });
    svr.Get("/api/images/:id/raw", [&ws, send](const httplib::Request& req, httplib::Response& res) {
        std::string bytes;
        std::string name;
        const auto r = guarded([&] {
            const auto path = ws.image_path(req.path_params.at("id"));
            std::ifstream in(path, std::ios::binary);
            if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
            std::stringstream ss;
            ss << in.rdbuf();
            bytes = ss.str();
            name = path.filename().string();
            return Reply{};
        });
        if (name.empty()) return send(res, r);
        res.set_header("Content-Disposition", "attachment; filename=\"" + name + "\"");
        res.set_content(bytes, "image/png");
    });
    get("/api/images/:id/realism",
        [&ws](const httplib::Request& req) { return json_reply(200, ws.realism_json(req.path_params.at("id"))); });

    get("/api/rounds", [&ws](const httplib::Request&) { return json_reply(200, ws.rounds_json()); });
    get("/api/rounds/:n", [&ws](const httplib::Request& req) { return json_reply(200, ws.round_json(path_int(req, "n"))); });
    get("/api/rounds/:n/queue",
        [&ws](const httplib::Request& req) { return json_reply(200, ws.queue_json(path_int(req, "n"))); });
    get("/api/reports/rounds", [&ws](const httplib::Request&) { return json_reply(200, ws.controller().report()); });
    get("/api/projection", [&ws](const httplib::Request& req) {
        return json_reply(200, ws.projection_json(req.has_param("model") ? req.get_param_value("model") : "pca"));
    });
    get("/api/jobs/:id", [&ws](const httplib::Request& req) {
        const auto id = req.path_params.at("id");
        const auto job = ws.jobs().get(id);
        if (!job) fail(ErrorKind::NotFound, "no job " + id);
        return json_reply(200, to_json(*job));
    });

    post("/api/rounds/seed", [&ws](const httplib::Request&, const json& body) {
        SeedRequest r;
        r.scale = body.value("scale", 1.0);
        if (body.contains("validation_scale")) r.validation_scale = body.at("validation_scale").get<double>();
        r.seed = seed_of(body);
        return json_reply(201, loop::to_json(ws.seed(r)));
    });
    post("/api/rounds/:n/propose", [&ws](const httplib::Request& req, const json& body) {
        const int n = path_int(req, "n");
        ProposeRequest r;
        r.batch = body.value("batch", std::size_t{100});
        if (body.contains("strategy")) r.strategy = ensemble::parse_strategy(body.at("strategy").get<std::string>());
        r.threshold = body.value("threshold", 0.5);
        const auto id = ws.jobs().submit("propose", [&ws, n, r] {
            const auto queue = ws.propose(n, r);
            return json{{"round", n}, {"queue_size", queue.size()}};
        });
        return json_reply(202, {{"job", id}, {"status_url", "/api/jobs/" + id}});
    });
    post("/api/rounds/:n/build-next", [&ws](const httplib::Request& req, const json& body) {
        BuildRequest r;
        if (body.contains("targets")) {
            const auto& t = body.at("targets");
            r.targets = loop::Targets{t.at("experimental").get<int>(), t.at("generated_realistic").get<int>(),
                                      t.at("fake").get<int>()};
        }
        r.scale = body.value("scale", 1.0);
        r.retain_previous = body.value("retain_previous", true);
        r.seed = seed_of(body);
        return json_reply(201, loop::to_json(ws.build_next(path_int(req, "n"), r)));
    });
    post("/api/labels", [&ws](const httplib::Request&, const json& body) {
        LabelRequest r;
        r.image_id = body.at("image_id").get<std::string>();
        r.verdict = parse_verdict(body.at("verdict").get<std::string>());
        r.annotator = body.value("annotator", r.annotator);
        return json_reply(201, ws.label(r));
    });
    post("/api/jobs/train", [&ws](const httplib::Request&, const json& body) {
        TrainRequest r;
        r.seed = seed_of(body);
        if (body.contains("classifiers")) {
            r.panel.classifiers.clear();
            for (const auto& s : body.at("classifiers")) r.panel.classifiers.push_back(classify::spec_from_json(s));
        }
        r.panel.warm_start = body.value("warm_start", r.panel.warm_start);
        r.panel.threshold = body.value("threshold", r.panel.threshold);
        for (const auto& s : r.panel.classifiers) s.validate();
        const auto id = ws.jobs().submit("train", [&ws, r] {
            const auto round = ws.train(r);
            json out{{"round", round.index}, {"classifier_ids", round.classifier_ids}, {"weights", round.weights}};
            out["report"] = round.report ? ensemble::to_json(*round.report) : json(nullptr);
            return out;
        });
        return json_reply(202, {{"job", id}, {"status_url", "/api/jobs/" + id}});
    });

    const auto static_dir = cfg.data_root / "static";
    if (fs::is_directory(static_dir)) svr.set_mount_point("/", static_dir.string());
}

Service::~Service() { stop(); }

int Service::bind() {
    if (bound_) return port_;
    const auto& cfg = workspace_->config();
    int port = cfg.port;
    if (port == 0) port = impl_->server.bind_to_any_port(cfg.host);
    else if (!impl_->server.bind_to_port(cfg.host, port)) port = -1;
    if (port <= 0)
        fail(ErrorKind::Io, "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port) + " (port in use?)");
    port_ = port;
    bound_ = true;
    return port;
}

void Service::run() {
    bind();
    impl_->server.listen_after_bind();
}

void Service::start() {
    bind();
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void Service::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
    if (thread_.joinable()) thread_.join();
    // Finish accepted jobs so their state reaches disk.
    if (workspace_) workspace_->jobs().shutdown();
}

}  // namespace scatgate::gateway
