// scatgate command line: one subcommand per module operation.
// Exit status: 0 ok, 1 domain error, 2 usage error.

#include "scatgate/analysis.hpp"
#include "scatgate/classify.hpp"
#include "scatgate/embed.hpp"
#include "scatgate/ensemble.hpp"
#include "scatgate/gateway.hpp"
#include "scatgate/loop.hpp"
#include "scatgate/metrics.hpp"
#include "scatgate/physics.hpp"
#include "scatgate/rng.hpp"
#include "scatgate/store.hpp"
#include "scatgate/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scatgate;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// input helpers

struct FrameInput {
    fs::path image;
    fs::path mask;
    std::optional<PatternClass> pattern;
};

// Files or directories of PNGs. Frames inside a corpus pick up the gap-mask
// sidecar and the manifest's pattern class.
std::vector<FrameInput> collect_frames(const std::vector<std::string>& inputs) {
    std::vector<FrameInput> out;
    std::map<fs::path, std::map<std::string, PatternClass>> manifests;
    auto pattern_of = [&](const fs::path& image) -> std::optional<PatternClass> {
        for (auto dir = image.parent_path(); !dir.empty(); dir = dir.parent_path()) {
            const auto m = dir / "manifest.jsonl";
            if (fs::exists(m)) {
                auto it = manifests.find(dir);
                if (it == manifests.end()) {
                    std::map<std::string, PatternClass> by_id;
                    for (const auto& e : read_manifest(m).entries()) by_id[e.id()] = e.pattern;
                    it = manifests.emplace(dir, std::move(by_id)).first;
                }
                if (auto p = it->second.find(image.stem().string()); p != it->second.end()) return p->second;
                return std::nullopt;
            }
            if (dir == dir.parent_path()) break;
        }
        return std::nullopt;
    };
    auto add = [&](const fs::path& p) {
        const auto abs = fs::absolute(p);
        out.push_back({p, abs.parent_path().parent_path() / "masks" / p.filename(), pattern_of(abs)});
    };
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& f : fs::directory_iterator(p))
                if (f.is_regular_file() && f.path().extension() == ".png") files.push_back(f.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) add(f);
        } else if (fs::exists(p)) {
            add(p);
        } else {
            fail(ErrorKind::NotFound, "no such file or directory: " + in);
        }
    }
    return out;
}

ScatterFrame load(const FrameInput& in) { return load_frame_with_mask(in.image, in.mask); }

Point2 parse_point(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw UsageError("--center: expected x,y, got '" + s + "'");
    try {
        return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw UsageError("--center: expected x,y, got '" + s + "'");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
}

void emit_json(const json& j, const std::string& out_path) {
    if (out_path.empty()) std::cout << j.dump(2) << "\n";
    else write_text(out_path, j.dump(2) + "\n");
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
    }
}

// Effective verdicts from a label JSONL file (LabelStore replay, read only).
std::map<std::string, Verdict> read_verdicts(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorKind::NotFound, "cannot read " + path.string());
    std::map<std::string, Verdict> out;
    std::set<std::string> ids;
    std::vector<LabelRecord> records;
    for (const auto& row : read_jsonl(path)) records.push_back(label_from_json(row));
    LabelStore store;
    store.append_all(records);
    for (const auto& r : records) ids.insert(r.image_id);
    for (const auto& id : ids)
        if (auto e = store.effective(id)) out[id] = e->verdict;
    return out;
}

std::map<std::string, double> read_composites(const fs::path& path) {
    std::map<std::string, double> out;
    for (const auto& row : read_jsonl(path)) out[row.at("id").get<std::string>()] = row.at("composite").get<double>();
    return out;
}

std::vector<double> read_weights(const fs::path& path) {
    const auto j = read_json_file(path);
    const auto& w = j.is_object() ? j.at("weights") : j;
    return w.get<std::vector<double>>();
}

// ---------------------------------------------------------------------------
// options shared by the loop subcommands

struct LoopArgs {
    std::string root;
    std::string dataset;
    std::string pattern;
    double window = 40.0;
    std::uint64_t seed = 0;
};

void add_loop_args(CLI::App* cmd, LoopArgs& a) {
    cmd->add_option("--root", a.root, "loop state directory (rounds/, labels.jsonl)")->required();
    cmd->add_option("--dataset", a.dataset, "corpus directory with manifest.jsonl")->required();
    cmd->add_option("--pattern", a.pattern, "restrict the pools to one pattern class");
    cmd->add_option("--window", a.window, "center search half-width, px");
    cmd->add_option("--seed", a.seed, "random seed");
}

std::unique_ptr<gateway::Workspace> open_workspace(const LoopArgs& a) {
    gateway::ServiceConfig c;
    c.data_root = a.root;
    c.dataset_dirs = {a.dataset};
    c.loop_dataset = fs::weakly_canonical(a.dataset).filename().string();
    if (!a.pattern.empty()) c.loop_pattern = parse_pattern(a.pattern);
    c.search_window = a.window;
    return std::make_unique<gateway::Workspace>(c);
}

json round_summary(const loop::RoundState& r) {
    auto j = loop::to_json(r);
    j.erase("training");
    j.erase("validation");
    j.erase("queue");
    j.erase("audit");
    j.erase("reviewed");
    j["queue_size"] = r.queue.size();
    j["reviewed"] = r.reviewed.size();
    return j;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
    CLI::App app{"scatgate: synthetic scattering frames, physics scoring and human-in-the-loop labeling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", gateway::kVersion);

    std::function<void()> action;

    // synth
    std::string synth_config, synth_out;
    std::uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
    synth->add_option("--config", synth_config, "corpus TOML")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "random seed");
    synth->callback([&] {
        action = [&] {
            const auto cfg = synth::load_corpus_config(synth_config);
            const auto corpus = synth::generate_corpus(cfg, synth_out, synth_seed);
            std::cout << json{{"out", synth_out}, {"images", corpus.manifest.size()}, {"seed", synth_seed}}.dump()
                      << "\n";
        };
    });

    // score
    std::vector<std::string> score_inputs;
    std::string score_json, score_pattern;
    double score_window = 40.0;
    auto* score = app.add_subcommand("score", "physics realism report per frame (JSON lines)");
    score->add_option("inputs", score_inputs, "PNG files or directories")->required();
    score->add_option("--json", score_json, "write JSON lines here instead of stdout");
    score->add_option("--pattern", score_pattern, "pattern class for frames outside a corpus");
    score->add_option("--window", score_window, "center search half-width, px");
    score->callback([&] {
        action = [&] {
            std::ofstream file;
            if (!score_json.empty()) {
                file.open(score_json);
                if (!file) fail(ErrorKind::Io, "cannot write " + score_json);
            }
            std::ostream& out = score_json.empty() ? std::cout : file;
            for (const auto& in : collect_frames(score_inputs)) {
                physics::RealismOptions o;
                o.search.window = score_window;
                o.pattern = in.pattern;
                if (!score_pattern.empty()) o.pattern = parse_pattern(score_pattern);
                out << physics::to_json(physics::realism_report(load(in), o)).dump() << "\n";
            }
        };
    });

    // warp
    std::string warp_image, warp_center, warp_out;
    int warp_theta = 360, warp_r = 0;
    double warp_window = 40.0;
    auto* warp = app.add_subcommand("warp", "polar warp around the (detected or given) center");
    warp->add_option("image", warp_image, "PNG frame")->required()->check(CLI::ExistingFile);
    warp->add_option("--center", warp_center, "x,y; detected when omitted");
    warp->add_option("--n-theta", warp_theta, "angular bins")->check(CLI::PositiveNumber);
    warp->add_option("--n-r", warp_r, "radial bins (0: half the short side)")->check(CLI::NonNegativeNumber);
    warp->add_option("--window", warp_window, "center search half-width, px");
    warp->add_option("--out", warp_out, "write the polar image (rows = angle) as 16-bit PNG");
    warp->callback([&] {
        action = [&] {
            const auto frame = load(collect_frames({warp_image}).front());
            Point2 c;
            if (!warp_center.empty()) {
                c = parse_point(warp_center);
            } else {
                physics::CenterSearchOptions o;
                o.window = warp_window;
                c = physics::find_center(frame, physics::fit_search_window(frame, o)).center;
            }
            const auto polar = physics::warp_polar(frame, c, warp_theta, warp_r);
            if (!warp_out.empty()) {
                const auto png = encode_png(polar.n_r, polar.n_theta, polar.values, 16);
                write_text(warp_out, std::string(png.begin(), png.end()));
            }
            std::cout << json{{"id", frame.id()},
                              {"center", {c.x, c.y}},
                              {"n_theta", polar.n_theta},
                              {"n_r", polar.n_r},
                              {"max_radius", polar.max_radius}}
                             .dump()
                      << "\n";
        };
    });

    // center
    std::string center_image;
    physics::CenterSearchOptions center_opts;
    auto* center = app.add_subcommand("center", "beam center search");
    center->add_option("image", center_image, "PNG frame")->required()->check(CLI::ExistingFile);
    center->add_option("--window", center_opts.window, "half-width around the midpoint, px");
    center->add_option("--step", center_opts.coarse_step, "coarse grid step, px")->check(CLI::PositiveNumber);
    center->callback([&] {
        action = [&] {
            const auto frame = load(collect_frames({center_image}).front());
            const auto r = physics::find_center(frame, physics::fit_search_window(frame, center_opts));
            std::cout << json{{"id", frame.id()}, {"x", r.center.x}, {"y", r.center.y}, {"objective", r.objective}}
                             .dump()
                      << "\n";
        };
    });

    // features
    std::vector<std::string> feat_inputs;
    std::string feat_out, feat_reference;
    embed::FeatureConfig feat_cfg;
    bool no_radial = false, no_angular = false, no_thumb = false;
    auto* features = app.add_subcommand("features", "feature vectors per frame (CSV)");
    features->add_option("inputs", feat_inputs, "PNG files or directories")->required();
    features->add_option("--out", feat_out, "feature CSV")->required();
    features->add_option("--radial-bins", feat_cfg.radial_bins)->check(CLI::PositiveNumber);
    features->add_option("--angular-bins", feat_cfg.angular_bins)->check(CLI::PositiveNumber);
    features->add_option("--thumb-side", feat_cfg.thumb_side)->check(CLI::PositiveNumber);
    features->add_flag("--no-radial", no_radial);
    features->add_flag("--no-angular", no_angular);
    features->add_flag("--no-thumb", no_thumb);
    features->add_option("--window", feat_cfg.search.window, "center search half-width, px");
    features->add_option("--normalize-with", feat_reference, "z-score with statistics of this feature CSV");
    features->callback([&] {
        action = [&] {
            feat_cfg.radial = !no_radial;
            feat_cfg.angular = !no_angular;
            feat_cfg.thumb = !no_thumb;
            embed::FeatureNormalizer norm;
            if (!feat_reference.empty())
                norm = embed::fit_normalizer(embed::vectors_of(embed::read_feature_csv(feat_reference)));
            std::vector<embed::FeatureRow> rows;
            int fallbacks = 0;
            for (const auto& in : collect_frames(feat_inputs)) {
                const auto frame = load(in);
                auto ex = embed::extract_features(frame, feat_cfg, norm);
                if (ex.center_fallback) {
                    ++fallbacks;
                    std::cerr << "warning: " << frame.id() << ": " << ex.warning << "\n";
                }
                rows.push_back({frame.id(), std::move(ex.features)});
            }
            embed::write_feature_csv(rows, feat_out);
            std::cout << json{{"out", feat_out},
                              {"rows", rows.size()},
                              {"length", feat_cfg.length()},
                              {"extractor_id", feat_cfg.extractor_id()},
                              {"center_fallbacks", fallbacks}}
                             .dump()
                      << "\n";
        };
    });

    // metrics
    std::string met_real, met_gen, met_probs, met_out;
    metrics::MetricConfig met_cfg;
    int met_subset = 0;
    auto* met = app.add_subcommand("metrics", "FID / KID / IS between two feature CSVs");
    met->add_option("--real", met_real, "reference feature CSV")->required()->check(CLI::ExistingFile);
    met->add_option("--generated", met_gen, "generated feature CSV")->required()->check(CLI::ExistingFile);
    met->add_option("--probs", met_probs, "class probability CSV (id,p_realistic,p_fake) for IS");
    met->add_option("--subset-size", met_subset, "KID subset size (default min(100, n))")->check(CLI::PositiveNumber);
    met->add_option("--subsets", met_cfg.n_subsets, "KID subsets")->check(CLI::PositiveNumber);
    met->add_option("--splits", met_cfg.n_splits, "IS splits")->check(CLI::PositiveNumber);
    met->add_option("--seed", met_cfg.seed, "random seed");
    met->add_option("--out", met_out, "write the report here instead of stdout");
    met->callback([&] {
        action = [&] {
            if (met_subset > 0) met_cfg.subset_size = met_subset;
            const auto real = embed::read_feature_csv(met_real);
            const auto gen = embed::read_feature_csv(met_gen);
            std::vector<std::vector<double>> probs;
            if (!met_probs.empty())
                for (const auto& r : classify::ingest_external(met_probs))
                    probs.push_back({r.probs.p_realistic(), r.probs.p_fake()});
            const auto report = metrics::metric_report(embed::vectors_of(real), embed::vectors_of(gen),
                                                       met_probs.empty() ? nullptr : &probs, met_cfg);
            emit_json(metrics::to_json(report), met_out);
        };
    });

    // train
    std::string tr_features, tr_labels, tr_kind = "logistic", tr_out, tr_scores, tr_external, tr_predict, tr_probs_out,
                                        tr_id;
    double tr_fraction = 0.2;
    classify::LogisticParams tr_params;
    int tr_k = 5;
    std::uint64_t tr_seed = 0;
    auto* tr = app.add_subcommand("train", "train one classifier on labeled feature rows");
    tr->add_option("--features", tr_features, "feature CSV")->required()->check(CLI::ExistingFile);
    tr->add_option("--labels", tr_labels, "label JSONL (effective verdict per id)")->required()->check(CLI::ExistingFile);
    tr->add_option("--kind", tr_kind, "logistic | knearest | physics-rule | external");
    tr->add_option("--id", tr_id, "classifier id");
    tr->add_option("--scores", tr_scores, "score JSONL from `score` (physics composite per id)");
    tr->add_option("--external", tr_external, "probability CSV for --kind external");
    tr->add_option("--validation-fraction", tr_fraction, "stratified hold-out fraction")->check(CLI::Range(0.0, 0.9));
    tr->add_option("--lr", tr_params.learning_rate)->check(CLI::PositiveNumber);
    tr->add_option("--batch", tr_params.batch_size)->check(CLI::PositiveNumber);
    tr->add_option("--epochs", tr_params.epochs)->check(CLI::PositiveNumber);
    tr->add_option("--l2", tr_params.l2)->check(CLI::NonNegativeNumber);
    tr->add_option("-k", tr_k, "neighbours for knearest (odd)")->check(CLI::PositiveNumber);
    tr->add_option("--seed", tr_seed, "random seed");
    tr->add_option("--out", tr_out, "model JSON")->required();
    tr->add_option("--predict", tr_predict, "feature CSV to score with the trained model");
    tr->add_option("--probs-out", tr_probs_out, "probability CSV for --predict");
    tr->callback([&] {
        action = [&] {
            if (!tr_predict.empty() && tr_probs_out.empty()) throw UsageError("--predict requires --probs-out");
            classify::ClassifierSpec spec;
            spec.kind = classify::parse_classifier_kind(tr_kind);
            spec.id = tr_id.empty() ? std::string(classify::to_string(spec.kind)) : tr_id;
            spec.logistic = tr_params;
            spec.k = tr_k;
            spec.external_path = tr_external;
            spec.validate();
            const auto verdicts = read_verdicts(tr_labels);
            std::map<std::string, double> composite;
            if (!tr_scores.empty()) composite = read_composites(tr_scores);
            if (spec.kind == classify::ClassifierKind::PhysicsRule && tr_scores.empty())
                throw UsageError("--kind physics-rule requires --scores");
            auto sample_of = [&](const embed::FeatureRow& row) {
                double phys = 0.0;
                if (!composite.empty()) {
                    const auto it = composite.find(row.id);
                    if (it == composite.end()) fail(ErrorKind::NotFound, "no physics score for " + row.id);
                    phys = it->second;
                }
                return classify::Sample{row.id, row.features.values, phys};
            };
            std::vector<classify::LabeledSample> data;
            for (const auto& row : embed::read_feature_csv(tr_features))
                if (auto it = verdicts.find(row.id); it != verdicts.end())
                    data.push_back({sample_of(row), it->second});
            std::vector<classify::LabeledSample> train_set = data, validation;
            if (tr_fraction > 0.0 && spec.kind != classify::ClassifierKind::External)
                std::tie(train_set, validation) = classify::split_train_validation(data, tr_fraction, tr_seed);
            const auto model = classify::train(spec, train_set, validation, tr_seed);
            classify::save_model(model, tr_out);
            json summary{{"id", model.id()}, {"kind", tr_kind}, {"train", train_set.size()},
                         {"validation", validation.size()}, {"out", tr_out}};
            if (model.validation) summary["validation_metrics"] = metrics::to_json(*model.validation);
            if (!tr_predict.empty()) {
                std::vector<classify::ExternalRow> rows;
                for (const auto& row : embed::read_feature_csv(tr_predict))
                    rows.push_back({row.id, classify::predict_proba(model, sample_of(row))});
                classify::write_probability_csv(rows, tr_probs_out);
                summary["predictions"] = rows.size();
            }
            std::cout << summary.dump() << "\n";
        };
    });

    // vote
    std::vector<std::string> vote_probs;
    std::string vote_strategy = "soft-average", vote_weights, vote_labels, vote_out, vote_report, vote_tie = "fake",
                vote_fit_out;
    double vote_threshold = 0.5;
    bool vote_fit = false;
    auto* vote = app.add_subcommand("vote", "combine classifier probability CSVs");
    vote->add_option("--probs", vote_probs, "probability CSV (repeatable)")->required();
    vote->add_option("--strategy", vote_strategy, "hard | soft-average | soft-weighted");
    vote->add_option("--weights", vote_weights, "weights JSON (array or {\"weights\": [...]})");
    vote->add_option("--threshold", vote_threshold)->check(CLI::Range(0.0, 1.0));
    vote->add_option("--tie-break", vote_tie, "hard-vote tie verdict: fake | realistic");
    vote->add_option("--labels", vote_labels, "label JSONL; enables the ensemble report");
    vote->add_flag("--fit-weights", vote_fit, "fit soft-weighted weights on --labels");
    vote->add_option("--weights-out", vote_fit_out, "write fitted weights JSON");
    vote->add_option("--out", vote_out, "decisions CSV (default stdout)");
    vote->add_option("--report", vote_report, "EnsembleReport JSON");
    vote->callback([&] {
        action = [&] {
            if ((vote_fit || !vote_report.empty()) && vote_labels.empty())
                throw UsageError(vote_fit ? "--fit-weights requires --labels" : "--report requires --labels");
            std::vector<std::string> names, ids;
            ensemble::PredictionPanel panel;
            for (const auto& path : vote_probs) {
                const auto rows = classify::ingest_external(path);
                std::map<std::string, ProbabilityVector> by_id;
                for (const auto& r : rows) by_id[r.id] = r.probs;
                if (ids.empty())
                    for (const auto& r : rows) ids.push_back(r.id);
                require(by_id.size() == ids.size(), path + ": " + std::to_string(by_id.size()) + " rows, expected " +
                                                        std::to_string(ids.size()));
                std::vector<ProbabilityVector> col;
                for (const auto& id : ids) {
                    const auto it = by_id.find(id);
                    if (it == by_id.end()) fail(ErrorKind::NotFound, path + " has no row for " + id);
                    col.push_back(it->second);
                }
                panel.push_back(std::move(col));
                names.push_back(fs::path(path).stem().string());
            }
            ensemble::VoteConfig cfg;
            cfg.strategy = ensemble::parse_strategy(vote_strategy);
            cfg.threshold = vote_threshold;
            cfg.tie_break = parse_verdict(vote_tie);
            if (!vote_weights.empty()) cfg.weights = read_weights(vote_weights);

            std::vector<std::size_t> labeled;
            std::vector<Verdict> truth;
            if (!vote_labels.empty()) {
                const auto verdicts = read_verdicts(vote_labels);
                for (std::size_t i = 0; i < ids.size(); ++i)
                    if (auto it = verdicts.find(ids[i]); it != verdicts.end()) {
                        labeled.push_back(i);
                        truth.push_back(it->second);
                    }
            }
            ensemble::PredictionPanel labeled_panel(panel.size());
            for (std::size_t c = 0; c < panel.size(); ++c)
                for (auto i : labeled) labeled_panel[c].push_back(panel[c][i]);
            json fit_json;
            if (vote_fit) {
                const auto fit = ensemble::fit_weights(labeled_panel, truth, vote_threshold);
                for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
                cfg.weights = fit.weights;
                fit_json = {{"weights", fit.weights}, {"initial", fit.initial}, {"precision", fit.precision}};
                if (!vote_fit_out.empty()) write_text(vote_fit_out, fit_json.dump(2) + "\n");
            }
            if (cfg.strategy == ensemble::Strategy::SoftWeighted && cfg.weights.empty())
                throw UsageError("--strategy soft-weighted requires --weights or --fit-weights");

            const auto decisions = ensemble::combine_all(panel, cfg);
            std::ostringstream csv;
            csv << "id,verdict,p_realistic\n";
            char buf[64];
            for (std::size_t i = 0; i < ids.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g", decisions[i].p_realistic);
                csv << ids[i] << "," << to_string(decisions[i].verdict) << "," << buf << "\n";
            }
            if (vote_out.empty()) std::cout << csv.str();
            else write_text(vote_out, csv.str());

            if (!vote_report.empty()) {
                std::vector<ensemble::NamedStrategy> strategies;
                const auto uniform = std::vector<double>(panel.size(), 1.0 / static_cast<double>(panel.size()));
                for (auto& s : ensemble::standard_strategies(cfg.weights.empty() ? uniform : cfg.weights,
                                                              vote_threshold))
                    strategies.push_back(s);
                const auto report = ensemble::evaluate_grid(names, labeled_panel, strategies, truth, 0);
                auto j = ensemble::to_json(report);
                j["selected"] = ensemble::to_string(cfg.strategy);
                if (!fit_json.is_null()) j["weight_fit"] = fit_json;
                write_text(vote_report, j.dump(2) + "\n");
            }
        };
    });

    // loop-seed
    LoopArgs seed_args;
    double seed_scale = 1.0, seed_vscale = 0.0;
    std::string seed_import;
    int seed_import_n = 0;
    auto* lseed = app.add_subcommand("loop-seed", "assemble round 1 from experimental and human-labeled frames");
    add_loop_args(lseed, seed_args);
    lseed->add_option("--scale", seed_scale, "fraction of the 40+60 vs 100 seed targets")->check(CLI::PositiveNumber);
    lseed->add_option("--validation-scale", seed_vscale, "validation scale (default: --scale)");
    lseed->add_option("--import-labels", seed_import, "label JSONL with initial human verdicts to import");
    lseed->add_option("--import-count", seed_import_n, "import a seeded random subset of this many generated labels");
    lseed->callback([&] {
        action = [&] {
            auto ws = open_workspace(seed_args);
            if (!seed_import.empty()) {
                std::vector<LabelRecord> recs;
                for (const auto& row : read_jsonl(seed_import)) {
                    auto r = label_from_json(row);
                    if (r.source == LabelSource::Human && ws->has_image(r.image_id) &&
                        ws->entry(r.image_id).origin == Origin::Generated)
                        recs.push_back(r);
                }
                std::sort(recs.begin(), recs.end(),
                          [](const LabelRecord& a, const LabelRecord& b) { return a.image_id < b.image_id; });
                if (seed_import_n > 0 && static_cast<std::size_t>(seed_import_n) < recs.size()) {
                    std::mt19937_64 rng(derive_seed(seed_args.seed, hash_string("import")));
                    std::shuffle(recs.begin(), recs.end(), rng);
                    recs.resize(seed_import_n);
                }
                int imported = 0;
                for (const auto& r : recs)
                    if (!ws->controller().effective_label(r.image_id)) {
                        ws->controller().label_initial(r.image_id, r.verdict, r.annotator);
                        ++imported;
                    }
                std::cerr << "imported " << imported << " labels\n";
            }
            gateway::SeedRequest req;
            req.scale = seed_scale;
            if (seed_vscale > 0.0) req.validation_scale = seed_vscale;
            req.seed = seed_args.seed;
            std::cout << round_summary(ws->seed(req)).dump(2) << "\n";
        };
    });

    // loop-propose
    LoopArgs prop_args;
    std::size_t prop_batch = 100;
    std::string prop_strategy;
    bool prop_retrain = false;
    auto* lprop = app.add_subcommand("loop-propose", "train the current round (if needed) and propose labels");
    add_loop_args(lprop, prop_args);
    lprop->add_option("--batch", prop_batch, "review queue size")->check(CLI::PositiveNumber);
    lprop->add_option("--strategy", prop_strategy, "voting strategy (default soft-weighted)");
    lprop->add_flag("--retrain", prop_retrain, "retrain even when the round already has a panel");
    lprop->callback([&] {
        action = [&] {
            auto ws = open_workspace(prop_args);
            const auto cur = ws->controller().current();
            if (!cur) fail(ErrorKind::Conflict, "no round has been seeded");
            if (!cur->trained() || prop_retrain) {
                gateway::TrainRequest tr_req;
                tr_req.seed = prop_args.seed;
                ws->train(tr_req);
            }
            gateway::ProposeRequest pr;
            pr.batch = prop_batch;
            if (!prop_strategy.empty()) pr.strategy = ensemble::parse_strategy(prop_strategy);
            ws->propose(cur->index, pr);
            std::cout << ws->queue_json(cur->index).dump(2) << "\n";
        };
    });

    // loop-review
    LoopArgs rev_args;
    std::string rev_decisions, rev_truth, rev_annotator = "operator";
    double rev_error = 0.05;
    auto* lrev = app.add_subcommand("loop-review", "record human verdicts for the review queue");
    add_loop_args(lrev, rev_args);
    lrev->add_option("--decisions", rev_decisions, "CSV id,verdict");
    lrev->add_option("--simulate", rev_truth, "truth.jsonl: answer from ground truth with --error-rate noise");
    lrev->add_option("--error-rate", rev_error)->check(CLI::Range(0.0, 1.0));
    lrev->add_option("--annotator", rev_annotator);
    lrev->callback([&] {
        action = [&] {
            if (rev_decisions.empty() == rev_truth.empty()) throw UsageError("give exactly one of --decisions, --simulate");
            auto ws = open_workspace(rev_args);
            const auto cur = ws->controller().current();
            if (!cur) fail(ErrorKind::Conflict, "no round has been seeded");
            std::vector<loop::ReviewDecision> decisions;
            if (!rev_truth.empty()) {
                std::map<std::string, Verdict> truth;
                for (const auto& t : synth::read_truth(rev_truth)) truth[t.id] = t.verdict;
                const loop::SimulatedAnnotator annotator(truth, rev_error, rev_args.seed);
                std::vector<std::string> pending;
                for (const auto& q : cur->queue)
                    if (!cur->reviewed.count(q.id)) pending.push_back(q.id);
                decisions = annotator.review_ids(pending);
                if (rev_annotator == "operator") rev_annotator = "simulated";
            } else {
                std::ifstream in(rev_decisions);
                if (!in) fail(ErrorKind::NotFound, "cannot read " + rev_decisions);
                std::string line;
                bool header = true;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    if (header) {
                        header = false;
                        if (line.rfind("id,", 0) == 0) continue;
                    }
                    const auto comma = line.find(',');
                    if (comma == std::string::npos) fail(ErrorKind::InvalidArgument, "bad decision line: " + line);
                    auto verdict = line.substr(comma + 1);
                    if (const auto c2 = verdict.find(','); c2 != std::string::npos) verdict.resize(c2);
                    decisions.push_back({line.substr(0, comma), parse_verdict(verdict)});
                }
            }
            const auto r = ws->controller().review(decisions, rev_annotator, cur->index);
            std::cout << round_summary(r).dump(2) << "\n";
        };
    });

    // loop-build
    LoopArgs build_args;
    double build_scale = 1.0;
    int build_exp = -1, build_gen = -1, build_fake = -1;
    bool build_no_retain = false;
    auto* lbuild = app.add_subcommand("loop-build", "close the current round and assemble the next");
    add_loop_args(lbuild, build_args);
    lbuild->add_option("--scale", build_scale, "fraction of the 400+600 vs 1000 targets")->check(CLI::PositiveNumber);
    lbuild->add_option("--experimental", build_exp)->check(CLI::NonNegativeNumber);
    lbuild->add_option("--generated-realistic", build_gen)->check(CLI::NonNegativeNumber);
    lbuild->add_option("--fake", build_fake)->check(CLI::NonNegativeNumber);
    lbuild->add_flag("--no-retain", build_no_retain, "do not carry the previous training set over");
    lbuild->callback([&] {
        action = [&] {
            const int given = (build_exp >= 0) + (build_gen >= 0) + (build_fake >= 0);
            if (given != 0 && given != 3)
                throw UsageError("--experimental, --generated-realistic and --fake go together");
            auto ws = open_workspace(build_args);
            const auto cur = ws->controller().current();
            if (!cur) fail(ErrorKind::Conflict, "no round has been seeded");
            gateway::BuildRequest br;
            if (given == 3) br.targets = loop::Targets{build_exp, build_gen, build_fake};
            br.scale = build_scale;
            br.retain_previous = !build_no_retain;
            br.seed = build_args.seed;
            std::cout << round_summary(ws->build_next(cur->index, br)).dump(2) << "\n";
        };
    });

    // report
    std::string rep_root, rep_out;
    auto* rep = app.add_subcommand("report", "metric trajectory and compositions over rounds");
    rep->add_option("--root", rep_root, "loop state directory")->required()->check(CLI::ExistingDirectory);
    rep->add_option("--out", rep_out, "write the report here instead of stdout");
    rep->callback([&] {
        action = [&] {
            std::vector<loop::RoundState> rounds;
            const auto dir = fs::path(rep_root) / "rounds";
            if (fs::is_directory(dir))
                for (const auto& d : fs::directory_iterator(dir))
                    if (fs::exists(d.path() / "round.json"))
                        rounds.push_back(loop::round_from_json(read_json_file(d.path() / "round.json")));
            std::sort(rounds.begin(), rounds.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
            emit_json(loop::round_report(rounds), rep_out);
        };
    });

    // serve
    std::string srv_config;
    gateway::ServiceConfig srv;
    std::string srv_root, srv_token, srv_pattern, srv_loop;
    std::vector<std::string> srv_datasets;
    auto* serve = app.add_subcommand("serve", "run the HTTP/JSON service");
    serve->add_option("--config", srv_config, "service TOML ([server], [loop])")->check(CLI::ExistingFile);
    serve->add_option("--root", srv_root, "data root");
    serve->add_option("--host", srv.host);
    serve->add_option("--port", srv.port)->check(CLI::Range(0, 65535));
    serve->add_option("--thumb-side", srv.thumb_side)->check(CLI::Range(1, 4096));
    serve->add_option("--token", srv_token, "shared auth token");
    serve->add_option("--cors", srv.cors_allowlist, "allowed origin (repeatable, * for any)");
    serve->add_option("--dataset", srv_datasets, "extra corpus directory (repeatable)");
    serve->add_option("--loop-dataset", srv_loop, "dataset name the labeling loop runs on");
    serve->add_option("--pattern", srv_pattern, "restrict the loop pools to one pattern class");
    serve->callback([&] {
        action = [&] {
            gateway::ServiceConfig cfg = srv_config.empty() ? srv : gateway::load_service_config(srv_config);
            if (!srv_config.empty()) {
                // Flags given on the command line override the file.
                if (serve->count("--host")) cfg.host = srv.host;
                if (serve->count("--port")) cfg.port = srv.port;
                if (serve->count("--thumb-side")) cfg.thumb_side = srv.thumb_side;
                if (serve->count("--cors")) cfg.cors_allowlist = srv.cors_allowlist;
            }
            if (!srv_root.empty()) cfg.data_root = srv_root;
            if (cfg.data_root.empty()) throw UsageError("--root (or [server] data_root) is required");
            if (!srv_token.empty()) cfg.auth_token = srv_token;
            for (const auto& d : srv_datasets) cfg.dataset_dirs.push_back(d);
            if (!srv_loop.empty()) cfg.loop_dataset = srv_loop;
            if (!srv_pattern.empty()) cfg.loop_pattern = parse_pattern(srv_pattern);

            // Block the stop signals before any thread starts, then wait for one here.
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, nullptr);
            gateway::Service service(cfg);
            service.start();
            std::cerr << "listening on http://" << cfg.host << ":" << service.port() << "\n";
            int sig = 0;
            sigwait(&set, &sig);
            std::cerr << "signal " << sig << ", shutting down\n";
            service.stop();
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }
    try {
        action();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const scatgate::Error& e) {
        std::cerr << "error (" << scatgate::to_string(e.kind()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
