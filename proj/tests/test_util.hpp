#pragma once

// Shared helpers for the test suites: a fuzzer for conditional search
// spaces, an independent gradient-descent oracle for the SVM objective, and
// small data constructors. Oracles here deliberately re-derive their math
// from the definitions instead of calling the library internals they check.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "nullboost/matrix.hpp"
#include "nullboost/common.hpp"

namespace testutil {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Random conditional space generator.

inline json fuzz_param(nb::Rng& rng, int& counter, int depth) {
    json p;
    p["name"] = "p" + std::to_string(counter++);
    const double roll = rng.uniform();
    const bool allow_choice = depth < 2;
    if (allow_choice && roll < 0.25) {
        p["kind"] = "choice";
        json branches = json::array();
        const int n_branches = 2 + static_cast<int>(rng.uniform_int(3));
        for (int b = 0; b < n_branches; ++b) {
            json br;
            br["label"] = "b" + std::to_string(b);
            json params = json::array();
            const int n_sub = static_cast<int>(rng.uniform_int(3));
            for (int s = 0; s < n_sub; ++s) params.push_back(fuzz_param(rng, counter, depth + 1));
            br["params"] = std::move(params);
            branches.push_back(std::move(br));
        }
        p["branches"] = std::move(branches);
    } else if (roll < 0.45) {
        p["kind"] = "categorical";
        json opts = json::array();
        const int n_opts = 2 + static_cast<int>(rng.uniform_int(6));
        for (int o = 0; o < n_opts; ++o) opts.push_back("opt" + std::to_string(o));
        p["options"] = std::move(opts);
    } else if (roll < 0.6) {
        const double lo = rng.uniform(-5.0, 5.0);
        p["kind"] = "uniform";
        p["lo"] = lo;
        p["hi"] = lo + rng.uniform(0.5, 10.0);
    } else if (roll < 0.75) {
        const double lo = std::exp(rng.uniform(-3.0, 0.0));
        p["kind"] = "loguniform";
        p["lo"] = lo;
        p["hi"] = lo * std::exp(rng.uniform(0.5, 3.0));
    } else if (roll < 0.9) {
        const double lo = rng.uniform(-5.0, 5.0);
        p["kind"] = "quniform";
        p["lo"] = lo;
        p["hi"] = lo + rng.uniform(0.5, 10.0);
        p["q"] = rng.uniform(0.05, 2.0);
    } else {
        const double lo = std::exp(rng.uniform(-2.0, 0.0));
        p["kind"] = "qloguniform";
        p["lo"] = lo;
        p["hi"] = lo * std::exp(rng.uniform(0.5, 3.0));
        p["q"] = rng.uniform(0.05, 0.5);
    }
    return p;
}

/// A random tree-structured conditional space with 3-8 root parameters.
inline json fuzz_space(nb::Rng& rng) {
    json spec;
    spec["name"] = "fuzz";
    json params = json::array();
    int counter = 0;
    const int n = 3 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < n; ++i) params.push_back(fuzz_param(rng, counter, 0));
    spec["params"] = std::move(params);
    return spec;
}

// ---------------------------------------------------------------------------
// Independent convex oracle for the per-class squared-hinge objective
//   F(w, b, a) = 1/2||w||^2 + 1/2 a^2 + C sum_i max(0, 1 - y_i m_i)^2,
//   m_i = w . x_i + b + a z_i
// solved by long-run full-batch gradient descent with backtracking.

struct OracleProblem {
    const nb::FeatureMatrix* x = nullptr;     // used as-is (no standardization)
    std::vector<double> y;                    // +-1
    std::vector<double> z;                    // empty when no frozen margins
    double C = 1.0;
};

inline double oracle_objective(const OracleProblem& p, const std::vector<double>& w, double b,
                               double a) {
    const std::size_t n = p.x->rows, d = p.x->cols;
    double reg = 0.5 * a * a;
    for (double v : w) reg += 0.5 * v * v;
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = b;
        const float* row = p.x->row(i);
        for (std::size_t j = 0; j < d; ++j) m += w[j] * row[j];
        if (!p.z.empty()) m += a * p.z[i];
        const double v = 1.0 - p.y[i] * m;
        if (v > 0.0) hinge += v * v;
    }
    return reg + p.C * hinge;
}

/// Returns the (near-)optimal objective value.
inline double oracle_solve(const OracleProblem& p, int max_iters = 20000) {
    const std::size_t n = p.x->rows, d = p.x->cols;
    std::vector<double> w(d, 0.0), gw(d);
    double b = 0.0, a = 0.0;
    double f = oracle_objective(p, w, b, a);
    double step = 1.0;
    for (int it = 0; it < max_iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0, ga = p.z.empty() ? 0.0 : a;
        for (std::size_t j = 0; j < d; ++j) gw[j] = w[j];
        for (std::size_t i = 0; i < n; ++i) {
            double m = b;
            const float* row = p.x->row(i);
            for (std::size_t j = 0; j < d; ++j) m += w[j] * row[j];
            if (!p.z.empty()) m += a * p.z[i];
            const double v = 1.0 - p.y[i] * m;
            if (v <= 0.0) continue;
            const double g = -2.0 * p.C * p.y[i] * v;
            for (std::size_t j = 0; j < d; ++j) gw[j] += g * row[j];
            gb += g;
            if (!p.z.empty()) ga += g * p.z[i];
        }
        double gnorm2 = gb * gb + ga * ga;
        for (double v : gw) gnorm2 += v * v;
        if (gnorm2 < 1e-22) break;

        std::vector<double> w2(d);
        double f2;
        for (;;) {
            for (std::size_t j = 0; j < d; ++j) w2[j] = w[j] - step * gw[j];
            const double b2 = b - step * gb;
            const double a2 = a - step * ga;
            f2 = oracle_objective(p, w2, b2, a2);
            if (f2 <= f - 0.25 * step * gnorm2 || step < 1e-18) {
                w.swap(w2);
                b = b2;
                a = a2;
                break;
            }
            step *= 0.5;
        }
        f = f2;
        step *= 1.3;
    }
    return f;
}

// ---------------------------------------------------------------------------

inline nb::FeatureMatrix random_features(nb::Rng& rng, std::size_t n, std::size_t d,
                                         double scale = 1.0) {
    nb::FeatureMatrix x(n, d);
    for (auto& v : x.data) v = static_cast<float>(scale * rng.normal());
    return x;
}

inline std::vector<int> random_labels(nb::Rng& rng, std::size_t n, int k) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform_int(k));
    return y;
}

}  // namespace testutil
