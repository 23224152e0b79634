#include "scatgate/loop.hpp"

#include "scatgate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace scatgate::loop {

using nlohmann::json;

namespace {

template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::shuffle(v.begin(), v.end(), rng);
}

std::string shortfall(const std::string& what, std::size_t need, std::size_t have) {
    return "need " + std::to_string(need) + " " + what + ", only " + std::to_string(have) + " available";
}

json entries_to_json(const std::vector<TrainingEntry>& entries) {
    json a = json::array();
    for (const auto& e : entries)
        a.push_back({{"id", e.id}, {"verdict", to_string(e.verdict)}, {"origin", to_string(e.origin)}});
    return a;
}

std::vector<TrainingEntry> entries_from_json(const json& a) {
    std::vector<TrainingEntry> out;
    for (const auto& e : a)
        out.push_back({e.at("id").get<std::string>(), parse_verdict(e.at("verdict").get<std::string>()),
                       parse_origin(e.at("origin").get<std::string>())});
    return out;
}

json composition_json(const Composition& c) {
    return {{"experimental_realistic", c.experimental_realistic},
            {"generated_realistic", c.generated_realistic},
            {"generated_fake", c.generated_fake},
            {"experimental_fake", c.experimental_fake},
            {"realistic", c.realistic()},
            {"fake", c.fake()}};
}

std::set<std::string> ids_of(const std::vector<TrainingEntry>& entries) {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.id);
    return s;
}

// Generated ids whose latest human verdict is `v`, most recently confirmed
// first (round, then timestamp, then id).
std::vector<std::string> confirmed(const Pools& pools, const LabelStore& labels, Verdict v) {
    std::vector<std::pair<LabelRecord, std::string>> hits;
    for (const auto& id : pools.generated)
        if (auto rec = labels.latest_human(id); rec && rec->verdict == v) hits.emplace_back(*rec, id);
    std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
        if (a.first.round != b.first.round) return a.first.round > b.first.round;
        if (a.first.timestamp != b.first.timestamp) return a.first.timestamp > b.first.timestamp;
        return a.second < b.second;
    });
    std::vector<std::string> out;
    for (auto& h : hits) out.push_back(std::move(h.second));
    return out;
}

}  // namespace

const char* to_string(RoundStatus s) noexcept {
    switch (s) {
        case RoundStatus::Collecting: return "collecting";
        case RoundStatus::Training: return "training";
        case RoundStatus::Proposing: return "proposing";
        case RoundStatus::Reviewing: return "reviewing";
        case RoundStatus::Closed: return "closed";
    }
    return "?";
}

RoundStatus parse_round_status(const std::string& s) {
    for (auto st : {RoundStatus::Collecting, RoundStatus::Training, RoundStatus::Proposing, RoundStatus::Reviewing,
                    RoundStatus::Closed})
        if (s == to_string(st)) return st;
    fail(ErrorKind::InvalidArgument, "unknown round status: " + s);
}

Targets Targets::scaled(double factor) const {
    require(factor > 0.0 && std::isfinite(factor), "scale factor must be positive");
    const int real = static_cast<int>(std::lround(realistic() * factor));
    const int exp = realistic() == 0 ? 0 : static_cast<int>(std::lround(real * static_cast<double>(experimental) / realistic()));
    return {exp, real - exp, static_cast<int>(std::lround(fake * factor))};
}

void Targets::validate() const {
    require(experimental >= 0 && generated_realistic >= 0 && fake >= 0, "targets must be non-negative");
    require(realistic() >= 1 && fake >= 1, "targets must request both classes", ErrorKind::InvalidArgument);
    const long want_exp = std::lround(0.4 * realistic());
    if (std::abs(experimental - want_exp) > 1)
        fail(ErrorKind::Conflict, "ratio unreachable: " + std::to_string(experimental) + " experimental of " +
                                      std::to_string(realistic()) + " realistic is not 4:6");
    if (std::abs(realistic() - fake) > 1)
        fail(ErrorKind::Conflict, "class balance unreachable: " + std::to_string(realistic()) + " realistic vs " +
                                      std::to_string(fake) + " fake");
}

Composition composition_of(const std::vector<TrainingEntry>& entries) {
    Composition c;
    for (const auto& e : entries) {
        const bool exp = e.origin == Origin::Experimental;
        if (e.verdict == Verdict::Realistic) (exp ? c.experimental_realistic : c.generated_realistic)++;
        else (exp ? c.experimental_fake : c.generated_fake)++;
    }
    return c;
}

void check_composition(const std::vector<TrainingEntry>& entries, const std::string& what) {
    const auto c = composition_of(entries);
    const long want_exp = std::lround(0.4 * c.realistic());
    if (std::abs(c.experimental_realistic - want_exp) > 1)
        fail(ErrorKind::Conflict, what + ": experimental:generated " + std::to_string(c.experimental_realistic) + ":" +
                                      std::to_string(c.generated_realistic) + " violates the 4:6 ratio");
    if (std::abs(c.realistic() - c.fake()) > 1)
        fail(ErrorKind::Conflict, what + ": " + std::to_string(c.realistic()) + " realistic vs " +
                                      std::to_string(c.fake()) + " fake is unbalanced");
}

json to_json(const RoundState& r) {
    json queue = json::array();
    for (const auto& q : r.queue)
        queue.push_back({{"id", q.id},
                         {"model_verdict", to_string(q.model_verdict)},
                         {"p_realistic", q.p_realistic},
                         {"physics_composite", q.physics_composite},
                         {"round", q.round}});
    json audit = json::array();
    for (const auto& a : r.audit)
        audit.push_back({{"id", a.id},
                         {"model_verdict", to_string(a.model_verdict)},
                         {"human_verdict", to_string(a.human_verdict)},
                         {"p_realistic", a.p_realistic},
                         {"annotator", a.annotator}});
    json j{{"index", r.index},
           {"status", to_string(r.status)},
           {"training", entries_to_json(r.training)},
           {"validation", entries_to_json(r.validation)},
           {"composition",
            {{"training", composition_json(r.training_composition())},
             {"validation", composition_json(r.validation_composition())}}},
           {"classifier_ids", r.classifier_ids},
           {"weights", r.weights},
           {"queue", queue},
           {"reviewed", r.reviewed},
           {"audit", audit}};
    j["report"] = r.report ? ensemble::to_json(*r.report) : json(nullptr);
    return j;
}

RoundState round_from_json(const json& j) {
    RoundState r;
    try {
        r.index = j.at("index").get<int>();
        r.status = parse_round_status(j.at("status").get<std::string>());
        r.training = entries_from_json(j.at("training"));
        r.validation = entries_from_json(j.at("validation"));
        j.at("classifier_ids").get_to(r.classifier_ids);
        j.at("weights").get_to(r.weights);
        for (const auto& q : j.at("queue"))
            r.queue.push_back({q.at("id").get<std::string>(), parse_verdict(q.at("model_verdict").get<std::string>()),
                               q.at("p_realistic").get<double>(), q.at("physics_composite").get<double>(),
                               q.at("round").get<int>()});
        for (const auto& id : j.at("reviewed")) r.reviewed.insert(id.get<std::string>());
        for (const auto& a : j.at("audit"))
            r.audit.push_back({a.at("id").get<std::string>(), parse_verdict(a.at("model_verdict").get<std::string>()),
                               parse_verdict(a.at("human_verdict").get<std::string>()), a.at("p_realistic").get<double>(),
                               a.at("annotator").get<std::string>()});
        if (!j.at("report").is_null()) r.report = ensemble::ensemble_report_from_json(j.at("report"));
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed round state: ") + e.what());
    }
    return r;
}

Pools pools_from_manifest(const DatasetManifest& manifest, std::optional<PatternClass> pattern) {
    Pools p;
    for (const auto& e : manifest.entries()) {
        if (pattern && e.pattern != *pattern) continue;
        (e.origin == Origin::Experimental ? p.experimental : p.generated).push_back(e.id());
    }
    return p;
}

RoundState seed_round(const Pools& pools, const LabelStore& labels, const SeedOptions& options) {
    options.training.validate();
    options.validation.validate();
    auto exp = pools.experimental;
    std::sort(exp.begin(), exp.end());
    seeded_shuffle(exp, derive_seed(options.seed, 1));
    auto real = confirmed(pools, labels, Verdict::Realistic);
    auto fake = confirmed(pools, labels, Verdict::Fake);
    std::sort(real.begin(), real.end());
    std::sort(fake.begin(), fake.end());
    seeded_shuffle(real, derive_seed(options.seed, 2));
    seeded_shuffle(fake, derive_seed(options.seed, 3));

    const auto& t = options.training;
    const auto& v = options.validation;
    const auto need_exp = static_cast<std::size_t>(t.experimental + v.experimental);
    const auto need_real = static_cast<std::size_t>(t.generated_realistic + v.generated_realistic);
    const auto need_fake = static_cast<std::size_t>(t.fake + v.fake);
    if (exp.size() < need_exp) fail(ErrorKind::Insufficient, shortfall("experimental items", need_exp, exp.size()));
    if (real.size() < need_real)
        fail(ErrorKind::Insufficient, shortfall("human-approved realistic generated items", need_real, real.size()));
    if (fake.size() < need_fake)
        fail(ErrorKind::Insufficient, shortfall("human-confirmed fake generated items", need_fake, fake.size()));

    RoundState r;
    r.index = 1;
    auto take = [](std::vector<TrainingEntry>& out, const std::vector<std::string>& src, std::size_t from,
                   std::size_t n, Verdict verdict, Origin origin) {
        for (std::size_t i = from; i < from + n; ++i) out.push_back({src[i], verdict, origin});
    };
    take(r.validation, exp, 0, v.experimental, Verdict::Realistic, Origin::Experimental);
    take(r.validation, real, 0, v.generated_realistic, Verdict::Realistic, Origin::Generated);
    take(r.validation, fake, 0, v.fake, Verdict::Fake, Origin::Generated);
    take(r.training, exp, v.experimental, t.experimental, Verdict::Realistic, Origin::Experimental);
    take(r.training, real, v.generated_realistic, t.generated_realistic, Verdict::Realistic, Origin::Generated);
    take(r.training, fake, v.fake, t.fake, Verdict::Fake, Origin::Generated);
    check_composition(r.training, "seed round training set");
    check_composition(r.validation, "seed round validation set");
    r.status = RoundStatus::Training;
    return r;
}

RoundState build_next_round(RoundState& current, const Pools& pools, const LabelStore& labels,
                            const BuildOptions& options) {
    require(current.status != RoundStatus::Closed, "round " + std::to_string(current.index) + " is already closed",
            ErrorKind::Conflict);
    options.targets.validate();
    const auto validation = ids_of(current.validation);
    const auto& t = options.targets;

    std::vector<TrainingEntry> training;
    std::set<std::string> used;
    auto add = [&](const std::string& id, Verdict v, Origin o) {
        if (validation.count(id) || !used.insert(id).second) return false;
        training.push_back({id, v, o});
        return true;
    };

    // Experimental: retained items first, then a seeded draw from the rest.
    std::vector<std::string> exp_order;
    if (options.retain_previous)
        for (const auto& e : current.training)
            if (e.origin == Origin::Experimental && e.verdict == Verdict::Realistic) exp_order.push_back(e.id);
    auto rest = pools.experimental;
    std::sort(rest.begin(), rest.end());
    seeded_shuffle(rest, derive_seed(options.seed, static_cast<std::uint64_t>(current.index)));
    exp_order.insert(exp_order.end(), rest.begin(), rest.end());

    // Generated: retained items still carrying the same human verdict, then
    // the most recently confirmed.
    auto ordered = [&](Verdict v) {
        std::vector<std::string> order;
        const auto recent = confirmed(pools, labels, v);
        if (options.retain_previous) {
            const std::set<std::string> still(recent.begin(), recent.end());
            for (const auto& e : current.training)
                if (e.origin == Origin::Generated && e.verdict == v && still.count(e.id)) order.push_back(e.id);
        }
        order.insert(order.end(), recent.begin(), recent.end());
        return order;
    };
    const auto real_order = ordered(Verdict::Realistic);
    const auto fake_order = ordered(Verdict::Fake);

    auto fill = [&](const std::vector<std::string>& order, int target, Verdict v, Origin o, const std::string& what) {
        int have = 0;
        for (const auto& id : order) {
            if (have == target) break;
            if (add(id, v, o)) ++have;
        }
        if (have < target)
            fail(ErrorKind::Insufficient, "targets unreachable: " + shortfall(what, target, have));
    };
    fill(exp_order, t.experimental, Verdict::Realistic, Origin::Experimental, "experimental items");
    fill(real_order, t.generated_realistic, Verdict::Realistic, Origin::Generated,
         "human-approved realistic generated items");
    fill(fake_order, t.fake, Verdict::Fake, Origin::Generated, "human-confirmed fake generated items");
    check_composition(training, "round " + std::to_string(current.index + 1) + " training set");

    RoundState next;
    next.index = current.index + 1;
    next.status = RoundStatus::Training;
    next.training = std::move(training);
    next.validation = current.validation;
    current.status = RoundStatus::Closed;
    return next;
}

PanelSpec default_panel() {
    PanelSpec p;
    classify::ClassifierSpec logistic;
    logistic.kind = classify::ClassifierKind::Logistic;
    logistic.id = "logistic";
    classify::ClassifierSpec knn;
    knn.kind = classify::ClassifierKind::KNearest;
    knn.id = "knearest";
    classify::ClassifierSpec rule;
    rule.kind = classify::ClassifierKind::PhysicsRule;
    rule.id = "physics-rule";
    p.classifiers = {logistic, knn, rule};
    return p;
}

TrainedPanel train_panel(const RoundState& round, const PanelSpec& spec, const SampleLookup& samples,
                         std::uint64_t seed, const std::vector<classify::TrainedClassifier>* previous) {
    require(!spec.classifiers.empty(), "classifier panel is empty");
    require(!round.training.empty() && !round.validation.empty(), "round has no training or validation items",
            ErrorKind::Insufficient);
    std::vector<classify::LabeledSample> train_set, val_set;
    for (const auto& e : round.training) train_set.push_back({samples(e.id), e.verdict});
    for (const auto& e : round.validation) val_set.push_back({samples(e.id), e.verdict});

    TrainedPanel out;
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < spec.classifiers.size(); ++i) {
        auto cs = spec.classifiers[i];
        if (cs.id.empty()) cs.id = classify::to_string(cs.kind);
        require(seen.insert(cs.id).second, "duplicate classifier id " + cs.id);
        const classify::TrainedClassifier* warm = nullptr;
        if (spec.warm_start && previous && cs.kind == classify::ClassifierKind::Logistic)
            for (const auto& p : *previous)
                if (p.id() == cs.id && p.spec.kind == cs.kind) warm = &p;
        out.classifiers.push_back(classify::train(cs, train_set, val_set, derive_seed(seed, i), warm, round.index));
        names.push_back(cs.id);
    }

    ensemble::PredictionPanel panel;
    std::vector<Verdict> labels;
    for (const auto& v : val_set) labels.push_back(v.verdict);
    for (const auto& c : out.classifiers) {
        std::vector<ProbabilityVector> row;
        for (const auto& v : val_set) row.push_back(classify::predict_proba(c, v.sample));
        panel.push_back(std::move(row));
    }
    if (panel.size() >= 2) {
        out.weights = ensemble::fit_weights(panel, labels, spec.threshold);
    } else {
        out.weights.weights = {1.0};
        out.weights.initial = {1.0};
    }
    out.report = ensemble::evaluate_grid(names, panel, ensemble::standard_strategies(out.weights.weights, spec.threshold),
                                         labels, round.index);
    return out;
}

void commit_panel(RoundState& round, const TrainedPanel& panel) {
    require(round.status != RoundStatus::Closed, "cannot train a closed round", ErrorKind::Conflict);
    round.classifier_ids.clear();
    for (const auto& c : panel.classifiers) round.classifier_ids.push_back(c.id());
    round.weights = panel.weights.weights;
    round.report = panel.report;
}

std::vector<ReviewQueueItem> propose_labels(RoundState& round, const std::vector<classify::TrainedClassifier>& panel,
                                            const ensemble::VoteConfig& vote, const std::vector<std::string>& pool,
                                            const SampleLookup& samples, std::size_t batch) {
    require(round.status != RoundStatus::Closed && round.status != RoundStatus::Collecting,
            std::string("cannot propose labels in status ") + to_string(round.status), ErrorKind::Conflict);
    if (!round.trained() || panel.empty()) fail(ErrorKind::Conflict, "no trained classifiers for this round");
    vote.validate(panel.size());

    std::vector<ReviewQueueItem> queue;
    std::vector<ProbabilityVector> probs(panel.size());
    for (const auto& id : pool) {
        if (round.reviewed.count(id)) continue;
        const auto s = samples(id);
        for (std::size_t c = 0; c < panel.size(); ++c) probs[c] = classify::predict_proba(panel[c], s);
        const auto d = ensemble::combine(probs, vote);
        queue.push_back({id, d.verdict, d.p_realistic, s.physics, round.index});
    }
    std::sort(queue.begin(), queue.end(), [](const ReviewQueueItem& a, const ReviewQueueItem& b) {
        const double ua = std::abs(a.p_realistic - 0.5), ub = std::abs(b.p_realistic - 0.5);
        if (ua != ub) return ua < ub;
        return a.id < b.id;
    });
    if (queue.size() > batch) queue.resize(batch);
    round.queue = queue;
    round.status = RoundStatus::Proposing;
    return queue;
}

void apply_review(RoundState& round, const std::vector<ReviewDecision>& decisions, LabelStore& labels,
                  const std::string& annotator, Timestamp when) {
    if (decisions.empty()) return;
    require(round.status == RoundStatus::Proposing || round.status == RoundStatus::Reviewing,
            std::string("cannot review in status ") + to_string(round.status), ErrorKind::Conflict);
    std::map<std::string, const ReviewQueueItem*> in_queue;
    for (const auto& q : round.queue) in_queue[q.id] = &q;
    std::set<std::string> batch;
    for (const auto& d : decisions) {
        if (!in_queue.count(d.image_id)) fail(ErrorKind::NotFound, "image " + d.image_id + " is not in the review queue");
        if (!batch.insert(d.image_id).second || round.reviewed.count(d.image_id) ||
            labels.has_human(d.image_id, round.index))
            fail(ErrorKind::Conflict,
                 "image " + d.image_id + " already has a human verdict in round " + std::to_string(round.index));
    }
    for (const auto& d : decisions) {
        const auto* q = in_queue[d.image_id];
        labels.append({d.image_id, d.verdict, LabelSource::Human, round.index, annotator, when});
        round.reviewed.insert(d.image_id);
        round.audit.push_back({d.image_id, q->model_verdict, d.verdict, q->p_realistic, annotator});
    }
    round.status = RoundStatus::Reviewing;
}

std::vector<std::string> unlabeled_pool(const Pools& pools, const LabelStore& labels,
                                        const std::vector<RoundState>& rounds) {
    std::set<std::string> used;
    for (const auto& r : rounds) {
        for (const auto& e : r.training) used.insert(e.id);
        for (const auto& e : r.validation) used.insert(e.id);
    }
    std::vector<std::string> out;
    for (const auto& id : pools.generated)
        if (!used.count(id) && !labels.latest_human(id)) out.push_back(id);
    return out;
}

json round_report(const std::vector<RoundState>& rounds) {
    json series = json::array();
    for (const auto& r : rounds) {
        if (!r.report) continue;
        series.push_back({{"round", r.index},
                          {"status", to_string(r.status)},
                          {"composition",
                           {{"training", composition_json(r.training_composition())},
                            {"validation", composition_json(r.validation_composition())}}},
                          {"weights", r.weights},
                          {"classifier_ids", r.classifier_ids},
                          {"report", ensemble::to_json(*r.report)}});
    }
    return {{"rounds", series}};
}

SimulatedAnnotator::SimulatedAnnotator(std::map<std::string, Verdict> truth, double error_rate, std::uint64_t seed)
    : truth_(std::move(truth)), error_rate_(error_rate), seed_(seed) {
    require(error_rate >= 0.0 && error_rate <= 1.0, "annotator error rate must lie in [0,1]");
}

Verdict SimulatedAnnotator::answer(const std::string& image_id) const {
    const auto it = truth_.find(image_id);
    if (it == truth_.end()) fail(ErrorKind::NotFound, "annotator has no ground truth for " + image_id);
    const bool flip = unit_double(derive_seed(seed_, hash_string(image_id))) < error_rate_;
    if (!flip) return it->second;
    return it->second == Verdict::Realistic ? Verdict::Fake : Verdict::Realistic;
}

std::vector<ReviewDecision> SimulatedAnnotator::review(const std::vector<ReviewQueueItem>& queue) const {
    std::vector<ReviewDecision> out;
    for (const auto& q : queue) out.push_back({q.id, answer(q.id)});
    return out;
}

std::vector<ReviewDecision> SimulatedAnnotator::review_ids(const std::vector<std::string>& ids) const {
    std::vector<ReviewDecision> out;
    for (const auto& id : ids) out.push_back({id, answer(id)});
    return out;
}

// ---------------------------------------------------------------------------

Controller::Controller(Pools pools, LabelStore& labels, std::optional<std::filesystem::path> root)
    : pools_(std::move(pools)), labels_(labels), root_(std::move(root)) {}

void Controller::load() {
    std::unique_lock lock(mutex_);
    if (!root_) return;
    rounds_.clear();
    models_.clear();
    const auto dir = *root_ / "rounds";
    if (!std::filesystem::exists(dir)) return;
    std::vector<int> indices;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        try {
            indices.push_back(std::stoi(entry.path().filename().string()));
        } catch (const std::exception&) {
        }
    }
    std::sort(indices.begin(), indices.end());
    for (int n : indices) {
        const auto base = dir / std::to_string(n);
        std::ifstream in(base / "round.json");
        if (!in) fail(ErrorKind::Io, "missing round.json in " + base.string());
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail(ErrorKind::InvalidArgument, (base / "round.json").string() + ": " + e.what());
        }
        rounds_.push_back(round_from_json(j));
        for (const auto& id : rounds_.back().classifier_ids) {
            const auto path = base / "models" / (id + ".json");
            if (std::filesystem::exists(path)) models_[n].push_back(classify::load_model(path));
        }
    }
}

RoundState& Controller::latest_locked() {
    if (rounds_.empty()) fail(ErrorKind::Conflict, "no round has been seeded");
    return rounds_.back();
}

RoundState& Controller::round_locked(std::optional<int> index) {
    if (!index) return latest_locked();
    for (auto& r : rounds_)
        if (r.index == *index) return r;
    fail(ErrorKind::NotFound, "no round " + std::to_string(*index));
}

void Controller::persist_locked(const RoundState& r) const {
    if (!root_) return;
    const auto dir = *root_ / "rounds" / std::to_string(r.index);
    std::filesystem::create_directories(dir);
    // Write-then-rename keeps round.json whole if the process dies mid-write.
    const auto tmp = dir / "round.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
        out << to_json(r).dump(2) << '\n';
        if (!out) fail(ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, dir / "round.json");
    if (r.report) {
        std::ofstream rep(dir / "report.json");
        rep << ensemble::to_json(*r.report).dump(2) << '\n';
    }
}

void Controller::persist_models_locked(int index) const {
    if (!root_) return;
    const auto it = models_.find(index);
    if (it == models_.end()) return;
    const auto dir = *root_ / "rounds" / std::to_string(index) / "models";
    std::filesystem::create_directories(dir);
    for (const auto& m : it->second) classify::save_model(m, dir / (m.id() + ".json"));
}

RoundState Controller::seed(const SeedOptions& options) {
    std::unique_lock lock(mutex_);
    if (!rounds_.empty()) fail(ErrorKind::Conflict, "rounds already exist; seeding happens once");
    rounds_.push_back(seed_round(pools_, labels_, options));
    persist_locked(rounds_.back());
    return rounds_.back();
}

RoundState Controller::train(const PanelSpec& spec, const SampleLookup& samples, std::uint64_t seed) {
    RoundState snapshot;
    std::vector<classify::TrainedClassifier> previous;
    {
        std::shared_lock lock(mutex_);
        if (rounds_.empty()) fail(ErrorKind::Conflict, "no round has been seeded");
        snapshot = rounds_.back();
        if (auto it = models_.find(snapshot.index - 1); it != models_.end()) previous = it->second;
    }
    require(snapshot.status != RoundStatus::Closed, "cannot train a closed round", ErrorKind::Conflict);
    auto panel = train_panel(snapshot, spec, samples, seed, previous.empty() ? nullptr : &previous);

    std::unique_lock lock(mutex_);
    auto& live = latest_locked();
    if (live.index != snapshot.index || live.status == RoundStatus::Closed || live.training != snapshot.training)
        fail(ErrorKind::Conflict, "round " + std::to_string(snapshot.index) + " changed while training");
    commit_panel(live, panel);
    models_[live.index] = std::move(panel.classifiers);
    persist_models_locked(live.index);
    persist_locked(live);
    return live;
}

std::vector<ReviewQueueItem> Controller::propose(const ensemble::VoteConfig& vote, const SampleLookup& samples,
                                                 std::size_t batch, std::optional<int> index) {
    std::unique_lock lock(mutex_);
    auto& r = round_locked(index);
    const auto it = models_.find(r.index);
    if (it == models_.end() || it->second.empty()) fail(ErrorKind::Conflict, "no trained classifiers for this round");
    const auto pool = unlabeled_pool(pools_, labels_, rounds_);
    auto queue = propose_labels(r, it->second, vote, pool, samples, batch);
    for (const auto& q : queue)
        labels_.append({q.id, q.model_verdict, LabelSource::Model, r.index, "ensemble", now_utc()});
    persist_locked(r);
    return queue;
}

RoundState Controller::review(const std::vector<ReviewDecision>& decisions, const std::string& annotator,
                              std::optional<int> index) {
    std::unique_lock lock(mutex_);
    auto& r = round_locked(index);
    apply_review(r, decisions, labels_, annotator, now_utc());
    persist_locked(r);
    return r;
}

RoundState Controller::build_next(const BuildOptions& options) {
    std::unique_lock lock(mutex_);
    auto& cur = latest_locked();
    auto next = build_next_round(cur, pools_, labels_, options);
    persist_locked(cur);
    rounds_.push_back(std::move(next));
    persist_locked(rounds_.back());
    return rounds_.back();
}

LabelRecord Controller::label_initial(const std::string& image_id, Verdict verdict, const std::string& annotator) {
    std::unique_lock lock(mutex_);
    if (!rounds_.empty())
        fail(ErrorKind::Conflict, "image " + image_id + " is not in the review queue of round " +
                                      std::to_string(rounds_.back().index));
    LabelRecord rec{image_id, verdict, LabelSource::Human, 0, annotator, now_utc()};
    labels_.append(rec);
    return rec;
}

std::optional<LabelRecord> Controller::effective_label(const std::string& image_id) const {
    std::shared_lock lock(mutex_);
    return labels_.effective(image_id);
}

std::vector<LabelRecord> Controller::label_history(const std::string& image_id) const {
    std::shared_lock lock(mutex_);
    return labels_.history(image_id);
}

ensemble::VoteConfig Controller::weighted_vote(std::optional<int> index) const {
    std::shared_lock lock(mutex_);
    const RoundState* r = nullptr;
    for (const auto& x : rounds_)
        if ((!index && x.trained()) || (index && x.index == *index)) r = &x;
    if (!r || !r->trained()) fail(ErrorKind::Conflict, "no trained round");
    return {ensemble::Strategy::SoftWeighted, r->weights, 0.5, Verdict::Fake};
}

std::vector<RoundState> Controller::rounds() const {
    std::shared_lock lock(mutex_);
    return rounds_;
}

std::optional<RoundState> Controller::round(int index) const {
    std::shared_lock lock(mutex_);
    for (const auto& r : rounds_)
        if (r.index == index) return r;
    return std::nullopt;
}

std::optional<RoundState> Controller::current() const {
    std::shared_lock lock(mutex_);
    if (rounds_.empty()) return std::nullopt;
    return rounds_.back();
}

std::vector<classify::TrainedClassifier> Controller::models(int index) const {
    std::shared_lock lock(mutex_);
    const auto it = models_.find(index);
    return it == models_.end() ? std::vector<classify::TrainedClassifier>{} : it->second;
}

json Controller::report() const {
    std::shared_lock lock(mutex_);
    return round_report(rounds_);
}

}  // namespace scatgate::loop
