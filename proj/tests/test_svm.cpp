#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "nullboost/svm.hpp"
#include "test_util.hpp"

using namespace nb;
using namespace nb::svm;
using testutil::OracleProblem;
using testutil::oracle_solve;
using testutil::random_features;
using testutil::random_labels;

namespace {

SvmModel manual_model(int k, std::size_t d, bool has_alpha, double alpha_v, double bias_v,
                      double weight_v) {
    SvmModel m;
    m.class_count = k;
    m.n_features = d;
    m.has_alpha = has_alpha;
    if (has_alpha) m.alpha.assign(k, alpha_v);
    m.bias.assign(k, bias_v);
    m.weights.assign(static_cast<std::size_t>(k) * d, weight_v);
    m.stats = Standardizer::identity(d);
    return m;
}

}  // namespace

TEST_CASE("fit: separable pair reaches training accuracy 1") {
    FeatureMatrix x(2, 1);
    x.at(0, 0) = -1.0f;
    x.at(1, 0) = 1.0f;
    const std::vector<int> y{0, 1};
    FitParams p;
    p.C = 100.0;
    const FitResult r = fit(x, y, p);
    const auto pred = predict(r.model, x);
    CHECK(pred == y);
    CHECK(zero_one_loss(pred, y) == 0.0);
}

TEST_CASE("fit: C -> 0 shrinks weights and collapses to the bias-preferred class") {
    Rng rng(3);
    FeatureMatrix x = random_features(rng, 10, 4);
    const std::vector<int> y{1, 1, 1, 1, 1, 0, 0, 2, 2, 2};
    FitParams p;
    p.C = 1e-9;
    const FitResult r = fit(x, y, p);
    double wnorm = 0.0;
    for (double w : r.model.weights) wnorm += w * w;
    CHECK(std::sqrt(wnorm) < 1e-5);
    int bias_class = 0;
    for (int c = 1; c < 3; ++c)
        if (r.model.bias[c] > r.model.bias[bias_class]) bias_class = c;
    CHECK(bias_class == 1);  // most frequent label
    for (int pred : predict(r.model, x)) CHECK(pred == bias_class);
}

TEST_CASE("fit: objective matches the long-run convex oracle (random instance)") {
    Rng rng(17);
    const std::size_t n = 20, d = 5;
    const int k = 3;
    const FeatureMatrix x = random_features(rng, n, d);
    const std::vector<int> labels = random_labels(rng, n, k);
    FitParams p;
    p.C = 1.0;
    p.standardize = false;
    p.tol = 1e-10;
    p.max_epochs = 2000;
    const FitResult r = fit(x, labels, p);
    for (int c = 0; c < k; ++c) {
        OracleProblem prob;
        prob.x = &x;
        prob.C = p.C;
        prob.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) prob.y[i] = labels[i] == c ? 1.0 : -1.0;
        const double f_star = oracle_solve(prob);
        const double gap = (r.info[c].objective - f_star) / std::max(1e-12, std::abs(f_star));
        CHECK(gap < 1e-4);
        CHECK(gap > -1e-4);  // oracle ran long enough to be near-optimal
    }
}

TEST_CASE("fit: solver accounting agrees with the objective definition") {
    Rng rng(23);
    const FeatureMatrix x = random_features(rng, 15, 4);
    const std::vector<int> labels = random_labels(rng, 15, 3);
    FitParams p;
    p.C = 2.0;
    const FitResult r = fit(x, labels, p);
    for (int c = 0; c < 3; ++c) {
        const double direct =
            class_objective(x, labels, c, p.C, nullptr, r.model.stats,
                            r.model.weights.data() + c * x.cols, r.model.bias[c], 0.0);
        CHECK(direct == doctest::Approx(r.info[c].objective).epsilon(1e-6));
    }
}

TEST_CASE("fit: convexity and per-epoch monotonicity") {
    Rng rng(29);
    for (int rep = 0; rep < 8; ++rep) {
        const std::size_t n = 5 + rng.uniform_int(25);
        const std::size_t d = 1 + rng.uniform_int(7);
        const int k = 2 + static_cast<int>(rng.uniform_int(3));
        const FeatureMatrix x = random_features(rng, n, d);
        const std::vector<int> labels = random_labels(rng, n, k);
        Margins frozen(n, k);
        for (auto& v : frozen.data) v = rng.normal();
        FitParams p;
        p.C = std::exp(rng.uniform(-3.0, 3.0));
        p.record_trace = true;
        const bool use_frozen = rep % 2 == 0;
        const FitResult r = fit(x, labels, p, use_frozen ? &frozen : nullptr);
        for (int c = 0; c < k; ++c) {
            // objective at the zero model = C * n (all margins active at 1).
            const double zero_obj = p.C * static_cast<double>(n);
            CHECK(r.info[c].objective <= zero_obj + 1e-9);
            for (std::size_t e = 1; e < r.info[c].trace.size(); ++e)
                CHECK(r.info[c].trace[e] <= r.info[c].trace[e - 1] + 1e-9);
        }
    }
}

TEST_CASE("predict: bias-only model picks class 0 everywhere") {
    SvmModel m = manual_model(3, 2, false, 0.0, 0.0, 0.0);
    m.bias = {1.0, 0.0, 0.0};
    Rng rng(5);
    const FeatureMatrix x = random_features(rng, 6, 2);
    for (int p : predict(m, x)) CHECK(p == 0);
}

TEST_CASE("predict: ties break to the lowest class index") {
    const SvmModel m = manual_model(4, 2, false, 0.0, 0.5, 0.0);  // all margins equal
    FeatureMatrix x(3, 2);
    for (int p : predict(m, x)) CHECK(p == 0);
}

TEST_CASE("predict: carry-forward identity reproduces the previous model") {
    // Previous "perfect" model expressed as frozen margins; new block has
    // zero weights and alpha = 1, so predictions must not change.
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    Margins frozen(6, 3);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 3; ++c) frozen.at(i, c) = (static_cast<int>(c) == y[i]) ? 2.0 : -1.0;
    const SvmModel m = manual_model(3, 4, true, 1.0, 0.0, 0.0);
    Rng rng(7);
    const FeatureMatrix x = random_features(rng, 6, 4);
    CHECK(predict(m, x, &frozen) == y);
}

TEST_CASE("margins: arithmetic identities") {
    // Zero model: all margins equal the bias.
    SvmModel zero = manual_model(2, 3, false, 0.0, 0.75, 0.0);
    Rng rng(9);
    const FeatureMatrix x = random_features(rng, 4, 3);
    const Margins mz = margins(zero, x);
    for (double v : mz.data) CHECK(v == doctest::Approx(0.75));

    // Single feature = 1, weight 2, bias -1 -> margin 1.
    SvmModel lin = manual_model(2, 1, false, 0.0, -1.0, 2.0);
    FeatureMatrix one(1, 1);
    one.at(0, 0) = 1.0f;
    CHECK(margins(lin, one).at(0, 0) == doctest::Approx(1.0));

    // alpha = 1, w = 0: margins equal frozen + bias.
    SvmModel carry = manual_model(2, 1, true, 1.0, 0.25, 0.0);
    Margins f(1, 2);
    f.at(0, 0) = 3.0;
    f.at(0, 1) = -2.0;
    const Margins mc = margins(carry, one, &f);
    CHECK(mc.at(0, 0) == doctest::Approx(3.25));
    CHECK(mc.at(0, 1) == doctest::Approx(-1.75));
}

TEST_CASE("zero_one_loss basics") {
    const std::vector<int> a{1, 2, 3, 4};
    CHECK(zero_one_loss(a, a) == 0.0);
    const std::vector<int> b{2, 3, 4, 5};
    CHECK(zero_one_loss(a, b) == 1.0);
    const std::vector<int> c{1, 2, 3, 5};
    CHECK(zero_one_loss(a, c) == 0.25);
    const std::vector<int> shorter{1, 2};
    CHECK_THROWS_AS(zero_one_loss(a, shorter), DimensionMismatch);
}

TEST_CASE("errors: dimension mismatches and non-finite input") {
    Rng rng(1);
    const FeatureMatrix x = random_features(rng, 5, 3);
    const std::vector<int> y{0, 1, 0, 1, 0};
    Margins wrong_rows(4, 2);
    CHECK_THROWS_AS(fit(x, y, FitParams{}, &wrong_rows), DimensionMismatch);
    FeatureMatrix bad = x;
    bad.at(2, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(fit(bad, y, FitParams{}), ConfigError);
    const FitResult r = fit(x, y, FitParams{});
    const FeatureMatrix x2 = random_features(rng, 5, 4);
    CHECK_THROWS_AS(predict(r.model, x2), DimensionMismatch);
}

TEST_CASE("standardization: equivalent to manual pre-standardization") {
    Rng rng(41);
    FeatureMatrix x = random_features(rng, 30, 4);
    for (std::size_t i = 0; i < x.rows; ++i) x.at(i, 1) = 5.0f;  // constant column
    for (std::size_t i = 0; i < x.rows; ++i) x.at(i, 2) = 100.0f + 10.0f * x.at(i, 2);
    const std::vector<int> y = random_labels(rng, 30, 3);

    FitParams p;
    p.C = 1.0;
    const FitResult auto_std = fit(x, y, p);

    const Standardizer st = Standardizer::fit(x);
    CHECK(st.scale[1] == 1.0);  // constant column keeps scale 1
    FeatureMatrix xs(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            xs.at(i, j) = static_cast<float>(st.apply(x.at(i, j), j));
    FitParams p2 = p;
    p2.standardize = false;
    const FitResult manual_std = fit(xs, y, p2);
    for (int c = 0; c < 3; ++c)
        CHECK(auto_std.info[c].objective ==
              doctest::Approx(manual_std.info[c].objective).epsilon(1e-6));
    CHECK(predict(auto_std.model, x) == predict(manual_std.model, xs));
}

TEST_CASE("carry-forward: chained rounds equal the monolithic linear model") {
    Rng rng(53);
    const std::size_t n = 24;
    const int k = 3;
    const FeatureMatrix x1 = random_features(rng, n, 6);
    const FeatureMatrix x2 = random_features(rng, n, 4);
    const std::vector<int> labels = random_labels(rng, n, k);

    FitParams p;
    p.C = 2.0;
    const FitResult r1 = fit(x1, labels, p);
    const Margins m1 = margins(r1.model, x1);
    const FitResult r2 = fit(x2, labels, p, &m1);
    const Margins chained = margins(r2.model, x2, &m1);

    // Monolithic assembly: alpha-scaled previous block plus the new block.
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) {
            double m = r2.model.alpha[c] * r1.model.bias[c] + r2.model.bias[c];
            for (std::size_t j = 0; j < x1.cols; ++j)
                m += r2.model.alpha[c] * r1.model.w(c, j) *
                     r1.model.stats.apply(x1.at(i, j), j);
            for (std::size_t j = 0; j < x2.cols; ++j)
                m += r2.model.w(c, j) * r2.model.stats.apply(x2.at(i, j), j);
            CHECK(std::abs(chained.at(i, c) - m) < 1e-10);
        }
    }
}

TEST_CASE("model serialization round trip") {
    Rng rng(61);
    const FeatureMatrix x = random_features(rng, 20, 5);
    const std::vector<int> y = random_labels(rng, 20, 3);
    Margins frozen(20, 3);
    for (auto& v : frozen.data) v = rng.normal();
    FitParams p;
    p.C = 0.5;
    const FitResult r = fit(x, y, p, &frozen);

    const std::string path = (std::filesystem::temp_directory_path() / "nb_model.json").string();
    r.model.save(path);
    const SvmModel back = SvmModel::load(path);
    CHECK(back.has_alpha);
    CHECK(predict(back, x, &frozen) == predict(r.model, x, &frozen));
    const Margins a = margins(r.model, x, &frozen);
    const Margins b = margins(back, x, &frozen);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
    std::filesystem::remove(path);
}
