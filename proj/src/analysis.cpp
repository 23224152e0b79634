#include "scatgate/analysis.hpp"

namespace scatgate::analysis {

AnalyzedFrame analyze(const ScatterFrame& frame, const AnalysisOptions& options, std::optional<PatternClass> pattern) {
    AnalyzedFrame a;
    a.id = frame.id();
    auto ro = options.realism;
    if (pattern) ro.pattern = pattern;
    a.realism = physics::realism_report(frame, ro);
    a.center_fallback = !a.realism.errors.empty() && a.realism.errors.front().first == "center";
    a.raw = embed::extract_features(frame, options.features, {}, a.realism.center).features;
    return a;
}

SampleTable::SampleTable(Loader loader, AnalysisOptions options)
    : loader_(std::move(loader)), options_(std::move(options)) {}

const AnalyzedFrame& SampleTable::analyzed(const std::string& id) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = frames_.find(id); it != frames_.end()) return it->second;
    }
    const auto loaded = loader_(id);
    auto a = analyze(loaded.frame, options_, loaded.pattern);
    a.id = id;
    std::lock_guard lock(mutex_);
    return frames_.try_emplace(id, std::move(a)).first->second;
}

void SampleTable::analyze_all(const std::vector<std::string>& ids) {
    for (const auto& id : ids) analyzed(id);
}

void SampleTable::fit_normalizer(const std::vector<std::string>& reference_ids) {
    std::vector<FeatureVector> ref;
    for (const auto& id : reference_ids) ref.push_back(analyzed(id).raw);
    auto norm = embed::fit_normalizer(ref);
    std::lock_guard lock(mutex_);
    normalizer_ = std::move(norm);
}

bool SampleTable::has_normalizer() const {
    std::lock_guard lock(mutex_);
    return !normalizer_.empty();
}

classify::Sample SampleTable::sample(const std::string& id) {
    const auto& a = analyzed(id);
    std::lock_guard lock(mutex_);
    require(!normalizer_.empty(), "feature normalizer has not been fitted", ErrorKind::Conflict);
    return {id, normalizer_.apply(a.raw.values), a.realism.composite};
}

loop::SampleLookup SampleTable::lookup() {
    return [this](const std::string& id) { return sample(id); };
}

}  // namespace scatgate::analysis
