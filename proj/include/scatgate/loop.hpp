#pragma once
/**
 * Human-in-the-loop labeling rounds.
 *
 * A round owns a training set (Realistic = experimental + human-approved
 * generated in a 4:6 mix, balanced against human-confirmed Fake) and a
 * validation set frozen at the seed round. Each round trains a classifier
 * panel, proposes verdicts for the unlabeled pool, collects human review and
 * assembles the next, larger round.
 */

#include "scatgate/classify.hpp"
#include "scatgate/ensemble.hpp"
#include "scatgate/frame.hpp"
#include "scatgate/store.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace scatgate::loop {

enum class RoundStatus { Collecting, Training, Proposing, Reviewing, Closed };

const char* to_string(RoundStatus s) noexcept;
RoundStatus parse_round_status(const std::string& s);

/// Realistic = experimental + generated_realistic; Fake = fake.
struct Targets {
    int experimental = 40;
    int generated_realistic = 60;
    int fake = 100;

    int realistic() const noexcept { return experimental + generated_realistic; }
    /// Scales the Realistic total and Fake count, then re-splits Realistic 4:6.
    Targets scaled(double factor) const;
    void validate() const;
    friend bool operator==(const Targets&, const Targets&) = default;
};

inline constexpr Targets kSeedTargets{40, 60, 100};
inline constexpr Targets kNextTargets{400, 600, 1000};

struct TrainingEntry {
    std::string id;
    Verdict verdict = Verdict::Realistic;
    Origin origin = Origin::Generated;
    friend bool operator==(const TrainingEntry&, const TrainingEntry&) = default;
};

/// Counts per (verdict, origin).
struct Composition {
    int experimental_realistic = 0;
    int generated_realistic = 0;
    int generated_fake = 0;
    int experimental_fake = 0;

    int realistic() const noexcept { return experimental_realistic + generated_realistic; }
    int fake() const noexcept { return generated_fake + experimental_fake; }
};

Composition composition_of(const std::vector<TrainingEntry>& entries);

/// Throws Conflict unless experimental:generated within Realistic is 4:6
/// within one item and Realistic/Fake sizes differ by at most one.
void check_composition(const std::vector<TrainingEntry>& entries, const std::string& what);

struct ReviewQueueItem {
    std::string id;
    Verdict model_verdict = Verdict::Fake;
    double p_realistic = 0.5;
    double physics_composite = 0.0;
    int round = 0;
};

struct AuditEntry {
    std::string id;
    Verdict model_verdict = Verdict::Fake;
    Verdict human_verdict = Verdict::Fake;
    double p_realistic = 0.5;
    std::string annotator;
};

struct RoundState {
    int index = 1;
    RoundStatus status = RoundStatus::Collecting;
    std::vector<TrainingEntry> training;
    std::vector<TrainingEntry> validation;
    std::vector<std::string> classifier_ids;  // trained panel, empty until trained
    std::vector<double> weights;              // fitted weighted-soft-voting weights
    std::optional<ensemble::EnsembleReport> report;
    std::vector<ReviewQueueItem> queue;
    std::set<std::string> reviewed;
    std::vector<AuditEntry> audit;

    bool trained() const noexcept { return !classifier_ids.empty(); }
    Composition training_composition() const { return composition_of(training); }
    Composition validation_composition() const { return composition_of(validation); }
};

nlohmann::json to_json(const RoundState& r);
RoundState round_from_json(const nlohmann::json& j);

/// Candidate items of one pattern class.
struct Pools {
    std::vector<std::string> experimental;  // realistic by definition
    std::vector<std::string> generated;
};

Pools pools_from_manifest(const DatasetManifest& manifest, std::optional<PatternClass> pattern = std::nullopt);

struct SeedOptions {
    Targets training = kSeedTargets;
    Targets validation = kSeedTargets;
    std::uint64_t seed = 0;
};

/// Round 1 from experimental items and human-labeled generated items.
/// Validation is drawn first from a disjoint slice with the same composition.
RoundState seed_round(const Pools& pools, const LabelStore& labels, const SeedOptions& options);

struct BuildOptions {
    Targets targets = kNextTargets;
    bool retain_previous = true;  // D(n+1) contains D(n)
    std::uint64_t seed = 0;
};

/// Closes `current` and assembles round index+1. Generated items are drawn
/// preferring the most recently human-confirmed ones; validation is copied.
RoundState build_next_round(RoundState& current, const Pools& pools, const LabelStore& labels,
                            const BuildOptions& options);

/// Classifier panel of a round plus the samples the panel reads.
using SampleLookup = std::function<classify::Sample(const std::string& id)>;

struct PanelSpec {
    std::vector<classify::ClassifierSpec> classifiers;
    bool warm_start = true;  // Logistic continues from the previous round's model
    double threshold = 0.5;
};

/// Logistic on all features, 5-NN on all features, physics rule.
PanelSpec default_panel();

struct TrainedPanel {
    std::vector<classify::TrainedClassifier> classifiers;
    ensemble::WeightFit weights;
    ensemble::EnsembleReport report;
};

/// Trains every classifier on the round's training set, fits voting weights
/// and evaluates all strategies on the validation set.
TrainedPanel train_panel(const RoundState& round, const PanelSpec& spec, const SampleLookup& samples,
                         std::uint64_t seed, const std::vector<classify::TrainedClassifier>* previous = nullptr);

/// Stores a trained panel's identifiers, weights and report into `round`.
void commit_panel(RoundState& round, const TrainedPanel& panel);

/// Uncertainty-first queue (|p - 0.5| ascending, then id) over `pool`,
/// truncated to `batch`. Moves the round to Proposing.
std::vector<ReviewQueueItem> propose_labels(RoundState& round, const std::vector<classify::TrainedClassifier>& panel,
                                            const ensemble::VoteConfig& vote, const std::vector<std::string>& pool,
                                            const SampleLookup& samples, std::size_t batch);

struct ReviewDecision {
    std::string image_id;
    Verdict verdict = Verdict::Fake;
};

/// Appends one Human label per decision (this round) and the audit trail.
void apply_review(RoundState& round, const std::vector<ReviewDecision>& decisions, LabelStore& labels,
                  const std::string& annotator, Timestamp when);

/// Generated ids that have no human label and are not in any training or validation set.
std::vector<std::string> unlabeled_pool(const Pools& pools, const LabelStore& labels,
                                        const std::vector<RoundState>& rounds);

/// Metric trajectory over rounds that carry a report, plus compositions.
nlohmann::json round_report(const std::vector<RoundState>& rounds);

/// Answers from ground truth, flipping each answer with probability
/// `error_rate`. The flip depends only on (seed, image id).
class SimulatedAnnotator {
public:
    SimulatedAnnotator(std::map<std::string, Verdict> truth, double error_rate = 0.05, std::uint64_t seed = 0);

    Verdict answer(const std::string& image_id) const;
    std::vector<ReviewDecision> review(const std::vector<ReviewQueueItem>& queue) const;
    std::vector<ReviewDecision> review_ids(const std::vector<std::string>& ids) const;

private:
    std::map<std::string, Verdict> truth_;
    double error_rate_;
    std::uint64_t seed_;
};

/**
 * Single-writer owner of the round history.
 *
 * Every mutation takes the exclusive lock; snapshots take the shared lock.
 * Training runs on a snapshot without the lock and commits only if the round
 * has not moved in the meantime. State is persisted under
 * <root>/rounds/<n>/round.json with models in <root>/rounds/<n>/models/.
 */
class Controller {
public:
    Controller(Pools pools, LabelStore& labels, std::optional<std::filesystem::path> root = std::nullopt);

    /// Reloads persisted rounds (replay) when `root` holds any.
    void load();

    RoundState seed(const SeedOptions& options);
    RoundState train(const PanelSpec& spec, const SampleLookup& samples, std::uint64_t seed);
    std::vector<ReviewQueueItem> propose(const ensemble::VoteConfig& vote, const SampleLookup& samples,
                                         std::size_t batch, std::optional<int> round = std::nullopt);
    RoundState review(const std::vector<ReviewDecision>& decisions, const std::string& annotator,
                      std::optional<int> round = std::nullopt);
    RoundState build_next(const BuildOptions& options);

    /// Human label outside any review queue; only before the first round
    /// (the initial labeling of the seed pools), stored as round 0.
    LabelRecord label_initial(const std::string& image_id, Verdict verdict, const std::string& annotator);
    std::optional<LabelRecord> effective_label(const std::string& image_id) const;
    std::vector<LabelRecord> label_history(const std::string& image_id) const;

    /// Convenience: the vote config of the latest trained round (weighted soft voting).
    ensemble::VoteConfig weighted_vote(std::optional<int> round = std::nullopt) const;

    std::vector<RoundState> rounds() const;
    std::optional<RoundState> round(int index) const;
    std::optional<RoundState> current() const;
    std::vector<classify::TrainedClassifier> models(int index) const;
    nlohmann::json report() const;
    const Pools& pools() const noexcept { return pools_; }

private:
    RoundState& latest_locked();
    RoundState& round_locked(std::optional<int> index);
    void persist_locked(const RoundState& r) const;
    void persist_models_locked(int index) const;

    Pools pools_;
    LabelStore& labels_;
    std::optional<std::filesystem::path> root_;
    mutable std::shared_mutex mutex_;
    std::vector<RoundState> rounds_;
    std::map<int, std::vector<classify::TrainedClassifier>> models_;
};

}  // namespace scatgate::loop
