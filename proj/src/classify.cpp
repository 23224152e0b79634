#include "scatgate/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace scatgate::classify {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double target(Verdict v) { return v == Verdict::Realistic ? 1.0 : 0.0; }

std::span<const double> slice(const ClassifierSpec& spec, const std::vector<double>& features) {
    require(spec.slice_begin <= features.size(), "feature slice starts beyond the feature vector");
    const std::size_t n = spec.slice_count == 0 ? features.size() - spec.slice_begin : spec.slice_count;
    require(spec.slice_begin + n <= features.size(),
            "feature vector of length " + std::to_string(features.size()) + " is shorter than the classifier slice");
    return std::span<const double>(features).subspan(spec.slice_begin, n);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_classes(std::span<const LabeledSample> data) {
    bool real = false, fake = false;
    for (const auto& d : data) (d.verdict == Verdict::Realistic ? real : fake) = true;
    require(real && fake, "training data must contain both classes", ErrorKind::Insufficient);
}

void train_logistic(TrainedClassifier& c, std::span<const LabeledSample> data, std::uint64_t seed,
                    const TrainedClassifier* warm) {
    const auto& p = c.spec.logistic;
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& d : data) {
        const auto s = slice(c.spec, d.sample.features);
        x.emplace_back(s.begin(), s.end());
        y.push_back(target(d.verdict));
    }
    const std::size_t dim = x.front().size();
    for (const auto& row : x) require(row.size() == dim, "training features differ in length");
    if (warm) {
        require(warm->spec.kind == ClassifierKind::Logistic && warm->weights.size() == dim,
                "warm start needs a Logistic model of the same dimension");
        c.weights = warm->weights;
        c.bias = warm->bias;
    } else {
        c.weights.assign(dim, 0.0);
        c.bias = 0.0;
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = static_cast<std::size_t>(p.batch_size);
    std::vector<double> gw(dim);
    for (int epoch = 1; epoch <= p.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto i = order[k];
                const double err = sigmoid(dot(c.weights, x[i]) + c.bias) - y[i];
                for (std::size_t j = 0; j < dim; ++j) gw[j] += err * x[i][j];
                gb += err;
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t j = 0; j < dim; ++j) c.weights[j] -= p.learning_rate * (gw[j] * inv + p.l2 * c.weights[j]);
            c.bias -= p.learning_rate * gb * inv;
        }
        const double loss = logistic_loss(c.weights, c.bias, x, y, p.l2);
        if (!std::isfinite(loss)) fail(ErrorKind::Numerical, "logistic training diverged at epoch " + std::to_string(epoch));
        c.loss_history.push_back(loss);
    }
}

void train_physics_rule(TrainedClassifier& c, std::span<const LabeledSample> data) {
    // Newton's method on the 1-D logistic likelihood. The small ridge on the
    // slope keeps the optimum finite on perfectly separable data.
    constexpr double ridge = 1e-3;
    double a = 0.0, b = 0.0;
    for (int it = 0; it < 100; ++it) {
        double ga = -ridge * a, gb = 0.0, haa = ridge, hab = 0.0, hbb = 0.0;
        for (const auto& d : data) {
            const double s = d.sample.physics, pr = sigmoid(a * s + b), r = target(d.verdict) - pr;
            const double w = pr * (1.0 - pr);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        const double det = haa * hbb - hab * hab;
        if (!(std::abs(det) > 1e-300)) break;
        const double da = (hbb * ga - hab * gb) / det, db = (haa * gb - hab * ga) / det;
        a += da;
        b += db;
        if (!std::isfinite(a) || !std::isfinite(b))
            fail(ErrorKind::Numerical, "physics-rule calibration diverged at iteration " + std::to_string(it + 1));
        if (std::abs(da) + std::abs(db) < 1e-12) break;
    }
    c.slope = a;
    c.intercept = b;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_prob(const std::string& cell, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    require(used > 0 && used == cell.size() && std::isfinite(v), where + ": not a number: '" + cell + "'");
    require(v >= 0.0 && v <= 1.0, where + ": probability outside [0,1]: " + cell);
    return v;
}

}  // namespace

const char* to_string(ClassifierKind k) noexcept {
    switch (k) {
        case ClassifierKind::Logistic: return "logistic";
        case ClassifierKind::KNearest: return "knearest";
        case ClassifierKind::PhysicsRule: return "physics-rule";
        case ClassifierKind::External: return "external";
    }
    return "?";
}

ClassifierKind parse_classifier_kind(const std::string& s) {
    if (s == "logistic") return ClassifierKind::Logistic;
    if (s == "knearest" || s == "knn") return ClassifierKind::KNearest;
    if (s == "physics-rule" || s == "physics") return ClassifierKind::PhysicsRule;
    if (s == "external") return ClassifierKind::External;
    fail(ErrorKind::InvalidArgument, "unknown classifier kind: " + s);
}

void ClassifierSpec::validate() const {
    require(logistic.learning_rate > 0.0, "learning rate must be positive");
    require(logistic.batch_size >= 1, "batch size must be at least 1");
    require(logistic.epochs >= 1, "epochs must be at least 1");
    require(logistic.l2 >= 0.0, "L2 strength must be non-negative");
    require(k >= 1 && k % 2 == 1, "k must be a positive odd number");
    require(kind != ClassifierKind::External || !external_path.empty(), "external classifier needs a CSV path");
}

std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>> split_train_validation(
    std::span<const LabeledSample> data, double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction < 1.0, "validation fraction must lie in (0, 1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].verdict == Verdict::Realistic].push_back(i);
    for (const auto& c : by_class)
        require(c.size() >= 5, "split needs at least 5 labeled items per class", ErrorKind::Insufficient);

    std::mt19937_64 rng(seed);
    std::vector<bool> in_val(data.size(), false);
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < n_val; ++k) in_val[idx[k]] = true;
    }
    std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>> out;
    for (std::size_t i = 0; i < data.size(); ++i) (in_val[i] ? out.second : out.first).push_back(data[i]);
    return out;
}

double logistic_loss(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                     std::span<const double> y, double l2) {
    require(!x.empty() && x.size() == y.size(), "loss needs matching non-empty inputs");
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = dot(w, x[i]) + b;
        loss += softplus(z) - y[i] * z;
    }
    return loss / static_cast<double>(x.size()) + 0.5 * l2 * dot(w, w);
}

std::vector<double> logistic_gradient(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                                      std::span<const double> y, double l2) {
    require(!x.empty() && x.size() == y.size(), "gradient needs matching non-empty inputs");
    std::vector<double> g(w.size() + 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double err = sigmoid(dot(w, x[i]) + b) - y[i];
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += err * x[i][j];
        g.back() += err;
    }
    for (auto& v : g) v /= static_cast<double>(x.size());
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += l2 * w[j];
    return g;
}

TrainedClassifier train(const ClassifierSpec& spec, std::span<const LabeledSample> train_set,
                        std::span<const LabeledSample> validation, std::uint64_t seed, const TrainedClassifier* warm,
                        int round) {
    spec.validate();
    TrainedClassifier c;
    c.spec = spec;
    if (c.spec.id.empty()) c.spec.id = to_string(spec.kind);
    c.round = round;
    switch (spec.kind) {
        case ClassifierKind::Logistic:
            check_classes(train_set);
            train_logistic(c, train_set, seed, warm);
            break;
        case ClassifierKind::KNearest:
            check_classes(train_set);
            for (const auto& d : train_set) {
                const auto s = slice(spec, d.sample.features);
                c.points.emplace_back(s.begin(), s.end());
                c.point_labels.push_back(d.verdict);
            }
            for (const auto& p : c.points)
                require(p.size() == c.points.front().size(), "training features differ in length");
            break;
        case ClassifierKind::PhysicsRule:
            check_classes(train_set);
            train_physics_rule(c, train_set);
            break;
        case ClassifierKind::External:
            for (auto& row : ingest_external(spec.external_path)) c.table.emplace(row.id, row.probs);
            break;
    }
    if (!validation.empty()) c.validation = evaluate(c, validation);
    return c;
}

ProbabilityVector predict_proba(const TrainedClassifier& c, const Sample& s) {
    switch (c.spec.kind) {
        case ClassifierKind::Logistic: {
            require(!c.weights.empty(), "classifier " + c.id() + " is untrained");
            const auto x = slice(c.spec, s.features);
            require(x.size() == c.weights.size(), "feature length " + std::to_string(x.size()) +
                                                      " does not match model dimension " +
                                                      std::to_string(c.weights.size()));
            return ProbabilityVector::from_realistic(sigmoid(dot(c.weights, x) + c.bias));
        }
        case ClassifierKind::KNearest: {
            require(!c.points.empty(), "classifier " + c.id() + " is untrained");
            const auto x = slice(c.spec, s.features);
            require(x.size() == c.points.front().size(), "feature length does not match the neighbour store");
            std::vector<std::pair<double, std::size_t>> dist;
            dist.reserve(c.points.size());
            for (std::size_t i = 0; i < c.points.size(); ++i) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - c.points[i][j]) * (x[j] - c.points[i][j]);
                dist.emplace_back(d2, i);
            }
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(c.spec.k), dist.size());
            std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
            std::size_t real = 0;
            for (std::size_t i = 0; i < k; ++i) real += c.point_labels[dist[i].second] == Verdict::Realistic;
            return ProbabilityVector::from_realistic(static_cast<double>(real) / static_cast<double>(k));
        }
        case ClassifierKind::PhysicsRule:
            require(std::isfinite(s.physics), "physics score must be finite");
            return ProbabilityVector::from_realistic(sigmoid(c.slope * s.physics + c.intercept));
        case ClassifierKind::External: {
            const auto it = c.table.find(s.id);
            if (it == c.table.end()) fail(ErrorKind::NotFound, "no external probability for image " + s.id);
            return it->second;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown classifier kind");
}

Verdict predict(const TrainedClassifier& c, const Sample& s, double threshold) {
    return predict_proba(c, s).p_realistic() >= threshold ? Verdict::Realistic : Verdict::Fake;
}

metrics::ClassificationMetrics evaluate(const TrainedClassifier& c, std::span<const LabeledSample> data,
                                        double threshold) {
    std::vector<Verdict> pred, truth;
    for (const auto& d : data) {
        pred.push_back(predict(c, d.sample, threshold));
        truth.push_back(d.verdict);
    }
    return metrics::classification_report(metrics::confusion(pred, truth));
}

std::vector<ExternalRow> ingest_external(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open probability file " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), path.string() + ": empty probability file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "id,p_realistic,p_fake", path.string() + ": header must be id,p_realistic,p_fake");

    std::vector<ExternalRow> rows;
    std::set<std::string> seen;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto cells = split_line(line);
        require(cells.size() == 3 && !cells[0].empty(), where + ": malformed row");
        require(seen.insert(cells[0]).second, where + ": duplicate id " + cells[0]);
        double pr = parse_prob(cells[1], where), pf = parse_prob(cells[2], where);
        const double sum = pr + pf;
        require(std::abs(sum - 1.0) <= 1e-3 + 1e-12, where + ": probabilities sum to " + std::to_string(sum));
        pr /= sum;
        pf /= sum;
        rows.push_back({cells[0], ProbabilityVector(pr, pf)});
    }
    return rows;
}

void write_probability_csv(std::span<const ExternalRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "id,p_realistic,p_fake\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", r.probs.p_realistic(), r.probs.p_fake());
        out << r.id << buf;
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

nlohmann::json to_json(const ClassifierSpec& s) {
    return {{"kind", to_string(s.kind)},
            {"id", s.id},
            {"learning_rate", s.logistic.learning_rate},
            {"batch_size", s.logistic.batch_size},
            {"epochs", s.logistic.epochs},
            {"l2", s.logistic.l2},
            {"k", s.k},
            {"external_path", s.external_path},
            {"slice_begin", s.slice_begin},
            {"slice_count", s.slice_count}};
}

ClassifierSpec spec_from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    try {
        s.kind = parse_classifier_kind(j.at("kind").get<std::string>());
        s.id = j.value("id", std::string());
        s.logistic.learning_rate = j.value("learning_rate", s.logistic.learning_rate);
        s.logistic.batch_size = j.value("batch_size", s.logistic.batch_size);
        s.logistic.epochs = j.value("epochs", s.logistic.epochs);
        s.logistic.l2 = j.value("l2", s.logistic.l2);
        s.k = j.value("k", s.k);
        s.external_path = j.value("external_path", std::string());
        s.slice_begin = j.value("slice_begin", std::size_t{0});
        s.slice_count = j.value("slice_count", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed classifier spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const TrainedClassifier& c) {
    nlohmann::json params;
    switch (c.spec.kind) {
        case ClassifierKind::Logistic:
            params = {{"weights", c.weights}, {"bias", c.bias}, {"loss_history", c.loss_history}};
            break;
        case ClassifierKind::KNearest: {
            std::vector<std::string> labels;
            for (auto v : c.point_labels) labels.emplace_back(to_string(v));
            params = {{"points", c.points}, {"labels", labels}};
            break;
        }
        case ClassifierKind::PhysicsRule:
            params = {{"slope", c.slope}, {"intercept", c.intercept}};
            break;
        case ClassifierKind::External: {
            nlohmann::json table = nlohmann::json::object();
            for (const auto& [id, p] : c.table) table[id] = {p.p_realistic(), p.p_fake()};
            params = {{"table", table}};
            break;
        }
    }
    nlohmann::json j{{"format_version", kModelFormatVersion},
                     {"spec", to_json(c.spec)},
                     {"round", c.round},
                     {"parameters", params}};
    j["validation"] = c.validation ? metrics::to_json(*c.validation) : nlohmann::json(nullptr);
    return j;
}

TrainedClassifier classifier_from_json(const nlohmann::json& j) {
    TrainedClassifier c;
    try {
        const int version = j.at("format_version").get<int>();
        require(version == kModelFormatVersion, "unsupported model format version " + std::to_string(version));
        c.spec = spec_from_json(j.at("spec"));
        c.round = j.value("round", 0);
        const auto& p = j.at("parameters");
        switch (c.spec.kind) {
            case ClassifierKind::Logistic:
                p.at("weights").get_to(c.weights);
                c.bias = p.at("bias").get<double>();
                c.loss_history = p.value("loss_history", std::vector<double>{});
                break;
            case ClassifierKind::KNearest:
                p.at("points").get_to(c.points);
                for (const auto& l : p.at("labels")) c.point_labels.push_back(parse_verdict(l.get<std::string>()));
                require(c.points.size() == c.point_labels.size(), "neighbour store and labels differ in size");
                break;
            case ClassifierKind::PhysicsRule:
                c.slope = p.at("slope").get<double>();
                c.intercept = p.at("intercept").get<double>();
                break;
            case ClassifierKind::External:
                for (const auto& [id, v] : p.at("table").items())
                    c.table.emplace(id, ProbabilityVector(v.at(0).get<double>(), v.at(1).get<double>()));
                break;
        }
        if (j.contains("validation") && !j["validation"].is_null()) {
            const auto& v = j["validation"];
            c.validation = metrics::ClassificationMetrics{v.at("accuracy").get<double>(), v.at("precision").get<double>(),
                                                          v.at("recall").get<double>(), v.at("f1").get<double>(),
                                                          v.value("degenerate", false)};
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed model file: ") + e.what());
    }
    for (double w : c.weights) require(std::isfinite(w), "model parameters must be finite");
    return c;
}

void save_model(const TrainedClassifier& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << to_json(c).dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

TrainedClassifier load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open model " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
    }
    return classifier_from_json(j);
}

}  // namespace scatgate::classify
