#include "nullboost/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nb::svm {

Standardizer Standardizer::fit(const FeatureMatrix& x) {
    Standardizer s;
    s.mean.assign(x.cols, 0.0);
    s.scale.assign(x.cols, 1.0);
    if (x.rows == 0) return s;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const float* row = x.row(r);
        for (std::size_t c = 0; c < x.cols; ++c) s.mean[c] += row[c];
    }
    for (auto& m : s.mean) m /= static_cast<double>(x.rows);
    std::vector<double> var(x.cols, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const float* row = x.row(r);
        for (std::size_t c = 0; c < x.cols; ++c) {
            const double d = row[c] - s.mean[c];
            var[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < x.cols; ++c) {
        const double sd = std::sqrt(var[c] / static_cast<double>(x.rows));
        s.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(std::size_t cols) {
    Standardizer s;
    s.mean.assign(cols, 0.0);
    s.scale.assign(cols, 1.0);
    return s;
}

// ---------------------------------------------------------------------------
// Objective

static double squared_hinge_sum(const std::vector<double>& m, const std::vector<double>& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = 1.0 - y[i] * m[i];
        if (v > 0.0) acc += v * v;
    }
    return acc;
}

double class_objective(const FeatureMatrix& features, std::span<const int> labels, int cls,
                       double C, const Margins* frozen, const Standardizer& stats,
                       const double* w, double b, double a) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    double reg = 0.0;
    for (std::size_t j = 0; j < d; ++j) reg += w[j] * w[j];
    reg = 0.5 * reg + 0.5 * a * a;
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = b;
        const float* row = features.row(i);
        for (std::size_t j = 0; j < d; ++j) m += w[j] * stats.apply(row[j], j);
        if (frozen) m += a * frozen->at(i, cls);
        const double y = labels[i] == cls ? 1.0 : -1.0;
        const double v = 1.0 - y * m;
        if (v > 0.0) hinge += v * v;
    }
    return reg + C * hinge;
}

// ---------------------------------------------------------------------------
// Coordinate descent solver (per class).
//
// Each coordinate takes a Newton step on the piecewise-quadratic objective,
// backed by an Armijo line search; margins are maintained incrementally so
// one epoch costs O(n * d).

namespace {

struct ClassProblem {
    std::size_t n, d;
    const std::vector<float>* cols;  // column-major standardized features
    std::vector<double> y;           // +-1
    std::vector<double> z;           // frozen margins for this class (may be empty)
    double C;

    std::vector<double> w;
    double b = 0.0;
    double a = 0.0;
    std::vector<double> m;   // current margins, maintained incrementally
    double reg_quad = 0.0;   // ||w||^2 + a^2
    double hinge = 0.0;      // sum of squared hinge terms at current m

    double objective() const { return 0.5 * reg_quad + C * hinge; }

    template <typename Feature>
    void update_coord(double& coord, Feature f, bool regularized) {
        double g = regularized ? coord : 0.0;
        double h = regularized ? 1.0 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = 1.0 - y[i] * m[i];
            if (v <= 0.0) continue;
            const double fi = f(i);
            g -= 2.0 * C * y[i] * fi * v;
            h += 2.0 * C * fi * fi;
        }
        if (h < 1e-12 || std::abs(g) <= 1e-14 * (1.0 + std::abs(coord))) return;
        double step = -g / h;
        const double obj0 = objective();
        const double sigma = 0.01;
        for (int half = 0; half < 30; ++half) {
            double hinge_t = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = 1.0 - y[i] * (m[i] + step * f(i));
                if (v > 0.0) hinge_t += v * v;
            }
            double reg_t = reg_quad;
            if (regularized) reg_t += (coord + step) * (coord + step) - coord * coord;
            const double trial_obj = 0.5 * reg_t + C * hinge_t;
            if (trial_obj <= obj0 + sigma * step * g) {
                coord += step;
                for (std::size_t i = 0; i < n; ++i) m[i] += step * f(i);
                reg_quad = reg_t;
                hinge = hinge_t;
                return;
            }
            step *= 0.5;
        }
    }

    ClassSolveInfo solve(double tol, int max_epochs, bool record_trace) {
        hinge = squared_hinge_sum(m, y);
        ClassSolveInfo info;
        double prev = objective();
        if (record_trace) info.trace.push_back(prev);
        for (int epoch = 0; epoch < max_epochs; ++epoch) {
            for (std::size_t j = 0; j < d; ++j) {
                const float* col = cols[j].data();
                update_coord(
                    w[j], [col](std::size_t i) { return static_cast<double>(col[i]); }, true);
            }
            update_coord(
                b, [](std::size_t) { return 1.0; }, false);
            if (!z.empty()) {
                const double* zp = z.data();
                update_coord(
                    a, [zp](std::size_t i) { return zp[i]; }, true);
            }
            const double cur = objective();
            info.epochs = epoch + 1;
            if (record_trace) info.trace.push_back(cur);
            const double rel = (prev - cur) / std::max(std::abs(prev), 1e-12);
            prev = cur;
            if (rel < tol) break;
        }
        info.objective = prev;
        return info;
    }
};

}  // namespace

FitResult fit(const FeatureMatrix& features, std::span<const int> labels, const FitParams& params,
              const Margins* frozen) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (labels.size() != n)
        throw DimensionMismatch("fit: labels length " + std::to_string(labels.size()) +
                                " != feature rows " + std::to_string(n));
    if (frozen && frozen->rows != n)
        throw DimensionMismatch("fit: frozen margin rows " + std::to_string(frozen->rows) +
                                " != feature rows " + std::to_string(n));
    if (!(params.C > 0.0)) throw ConfigError("fit: C must be positive");
    for (const float v : features.data)
        if (!std::isfinite(v)) throw ConfigError("non-finite-input: feature matrix");

    int k = params.class_count;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0) throw ConfigError("fit: negative class label");
        k = std::max(k, labels[i] + 1);
    }
    if (params.class_count > 0 && k > params.class_count)
        throw ConfigError("fit: label exceeds class_count");
    k = std::max(k, 2);
    if (frozen && frozen->classes != static_cast<std::size_t>(k))
        throw DimensionMismatch("fit: frozen margin classes " + std::to_string(frozen->classes) +
                                " != class count " + std::to_string(k));

    SvmModel model;
    model.class_count = k;
    model.n_features = d;
    model.has_alpha = frozen != nullptr;
    model.stats = params.standardize ? Standardizer::fit(features) : Standardizer::identity(d);
    model.bias.assign(k, 0.0);
    model.alpha.assign(model.has_alpha ? k : 0, 0.0);
    model.weights.assign(static_cast<std::size_t>(k) * d, 0.0);

    // Column-major standardized copy shared by every class.
    std::vector<std::vector<float>> cols(d, std::vector<float>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = features.row(i);
        for (std::size_t j = 0; j < d; ++j)
            cols[j][i] = static_cast<float>(model.stats.apply(row[j], j));
    }

    FitResult result;
    result.info.resize(k);
    result.model = std::move(model);
    SvmModel& mdl = result.model;

#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < k; ++c) {
        ClassProblem prob;
        prob.n = n;
        prob.d = d;
        prob.cols = cols.data();
        prob.C = params.C;
        prob.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) prob.y[i] = labels[i] == c ? 1.0 : -1.0;
        if (frozen) {
            prob.z.resize(n);
            for (std::size_t i = 0; i < n; ++i) prob.z[i] = frozen->at(i, c);
        }
        prob.w.assign(d, 0.0);
        prob.m.assign(n, 0.0);
        result.info[c] = prob.solve(params.tol, params.max_epochs, params.record_trace);
        for (std::size_t j = 0; j < d; ++j) mdl.weights[c * d + j] = prob.w[j];
        mdl.bias[c] = prob.b;
        if (frozen) mdl.alpha[c] = prob.a;
    }
    return result;
}

// ---------------------------------------------------------------------------

Margins margins(const SvmModel& model, const FeatureMatrix& features, const Margins* frozen) {
    if (features.cols != model.n_features)
        throw DimensionMismatch("margins: feature count " + std::to_string(features.cols) +
                                " != model features " + std::to_string(model.n_features));
    if (frozen && (frozen->rows != features.rows ||
                   frozen->classes != static_cast<std::size_t>(model.class_count)))
        throw DimensionMismatch("margins: frozen margin shape mismatch");
    if (model.has_alpha && !frozen)
        throw DimensionMismatch("margins: model was fit with frozen margins but none given");
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    const int k = model.class_count;
    Margins out(n, static_cast<std::size_t>(k));
#pragma omp parallel for schedule(static)
    for (long ii = 0; ii < static_cast<long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const float* row = features.row(i);
        for (int c = 0; c < k; ++c) {
            double m = model.bias[c];
            const double* w = model.weights.data() + static_cast<std::size_t>(c) * d;
            for (std::size_t j = 0; j < d; ++j) m += w[j] * model.stats.apply(row[j], j);
            if (model.has_alpha) m += model.alpha[c] * frozen->at(i, c);
            out.at(i, c) = m;
        }
    }
    return out;
}

std::vector<int> predict(const SvmModel& model, const FeatureMatrix& features,
                         const Margins* frozen) {
    const Margins m = margins(model, features, frozen);
    std::vector<int> pred(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        int best = 0;
        for (int c = 1; c < model.class_count; ++c)
            if (m.at(i, c) > m.at(i, best)) best = c;  // ties keep the lowest index
        pred[i] = best;
    }
    return pred;
}

double zero_one_loss(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw DimensionMismatch("zero_one_loss: length mismatch");
    if (predictions.empty()) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] != labels[i]) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Serialization

static constexpr int kModelVersion = 1;

json SvmModel::to_json() const {
    json j;
    j["format"] = "nullboost-svm";
    j["version"] = kModelVersion;
    j["class_count"] = class_count;
    j["n_features"] = n_features;
    j["has_alpha"] = has_alpha;
    j["alpha"] = alpha;
    j["bias"] = bias;
    j["weights"] = weights;
    j["mean"] = stats.mean;
    j["scale"] = stats.scale;
    return j;
}

SvmModel SvmModel::from_json(const json& j) {
    if (j.value("format", "") != "nullboost-svm")
        throw DataError("not a model file");
    if (j.value("version", -1) != kModelVersion)
        throw DataError("unsupported model version");
    SvmModel m;
    m.class_count = j.at("class_count").get<int>();
    m.n_features = j.at("n_features").get<std::size_t>();
    m.has_alpha = j.at("has_alpha").get<bool>();
    m.alpha = j.at("alpha").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.stats.mean = j.at("mean").get<std::vector<double>>();
    m.stats.scale = j.at("scale").get<std::vector<double>>();
    if (m.weights.size() != static_cast<std::size_t>(m.class_count) * m.n_features ||
        m.bias.size() != static_cast<std::size_t>(m.class_count) ||
        (m.has_alpha && m.alpha.size() != static_cast<std::size_t>(m.class_count)) ||
        m.stats.mean.size() != m.n_features || m.stats.scale.size() != m.n_features)
        throw DataError("model file is internally inconsistent");
    return m;
}

void SvmModel::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path + "'");
    out << to_json().dump();
    out << "\n";
}

SvmModel SvmModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("model file '" + path + "': " + e.what());
    }
    return from_json(j);
}

}  // namespace nb::svm
