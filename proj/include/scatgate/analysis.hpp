#pragma once
// Per-frame analysis cache: realism report + raw features -> classifier samples.

#include "scatgate/classify.hpp"
#include "scatgate/embed.hpp"
#include "scatgate/loop.hpp"
#include "scatgate/physics.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace scatgate::analysis {

struct AnalysisOptions {
    embed::FeatureConfig features;
    physics::RealismOptions realism;
};

struct AnalyzedFrame {
    std::string id;
    FeatureVector raw;
    physics::RealismReport realism;
    bool center_fallback = false;
};

/// One center search shared by the realism report and the feature blocks.
AnalyzedFrame analyze(const ScatterFrame& frame, const AnalysisOptions& options,
                      std::optional<PatternClass> pattern = std::nullopt);

struct LoadedFrame {
    ScatterFrame frame;
    std::optional<PatternClass> pattern;
};

/**
 * Lazily analyzed frames keyed by id. Features handed to classifiers are
 * z-normalized with statistics fitted on a reference id set (experimental
 * frames by default). Thread-safe; analysis runs outside the lock.
 */
class SampleTable {
public:
    using Loader = std::function<LoadedFrame(const std::string& id)>;

    SampleTable(Loader loader, AnalysisOptions options = {});

    const AnalyzedFrame& analyzed(const std::string& id);
    void analyze_all(const std::vector<std::string>& ids);

    void fit_normalizer(const std::vector<std::string>& reference_ids);
    bool has_normalizer() const;
    const embed::FeatureNormalizer& normalizer() const { return normalizer_; }

    /// Normalized features + composite score. Requires a fitted normalizer.
    classify::Sample sample(const std::string& id);
    loop::SampleLookup lookup();

private:
    Loader loader_;
    AnalysisOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, AnalyzedFrame> frames_;  // node-based: references stay valid
    embed::FeatureNormalizer normalizer_;
};

}  // namespace scatgate::analysis
