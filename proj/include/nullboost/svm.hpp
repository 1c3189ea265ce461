#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nullboost/common.hpp"
#include "nullboost/matrix.hpp"

namespace nb::svm {

using json = nlohmann::json;

/// Fit-split column statistics. New feature blocks are shifted and scaled to
/// zero mean, unit variance before training; the same transform applies at
/// validation and test time. Constant columns get scale 1.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const FeatureMatrix& x);
    static Standardizer identity(std::size_t cols);
    double apply(float v, std::size_t col) const { return (v - mean[col]) / scale[col]; }
};

/// Linear one-vs-rest multiclass L2-SVM over one feature block, optionally
/// joined to carried-forward margins of previous rounds through the trained
/// per-class scale alpha.
struct SvmModel {
    int class_count = 0;
    std::size_t n_features = 0;
    bool has_alpha = false;
    std::vector<double> alpha;    // class_count entries when has_alpha
    std::vector<double> bias;     // class_count entries
    std::vector<double> weights;  // class-major: weights[c * n_features + j]
    Standardizer stats;

    double w(int c, std::size_t j) const { return weights[c * n_features + j]; }

    json to_json() const;
    static SvmModel from_json(const json& j);
    void save(const std::string& path) const;
    static SvmModel load(const std::string& path);
};

struct FitParams {
    double C = 1.0;
    double tol = 1e-6;      // relative objective change per epoch
    int max_epochs = 1000;
    bool standardize = true;
    int class_count = 0;    // 0: derive as max(label) + 1
    bool record_trace = false;
};

struct ClassSolveInfo {
    int epochs = 0;
    double objective = 0.0;
    std::vector<double> trace;  // per-epoch objective when record_trace
};

struct FitResult {
    SvmModel model;
    std::vector<ClassSolveInfo> info;  // one entry per class
};

/// Per class c, minimizes
///   1/2 ||w||^2 + 1/2 alpha^2 + C * sum_i max(0, 1 - y_ic * m_ic)^2
/// with m_ic = w . f_i + b + alpha * frozen_ic (alpha term only when frozen
/// margins are given; the bias is unregularized). Deterministic coordinate
/// descent with Armijo line search; classes train in parallel.
FitResult fit(const FeatureMatrix& features, std::span<const int> labels, const FitParams& params,
              const Margins* frozen = nullptr);

/// Per example, argmax over classes of the decision margin; ties break to
/// the lowest class index.
std::vector<int> predict(const SvmModel& model, const FeatureMatrix& features,
                         const Margins* frozen = nullptr);

/// The decision margins exactly as used by predict. Feeding these out as the
/// next round's frozen margins chains the ensemble decision function.
Margins margins(const SvmModel& model, const FeatureMatrix& features,
                const Margins* frozen = nullptr);

/// Fraction mispredicted.
double zero_one_loss(std::span<const int> predictions, std::span<const int> labels);

/// Objective value of the per-class problem above for an arbitrary model;
/// shared by the solver, the tests and the convexity checks.
double class_objective(const FeatureMatrix& features, std::span<const int> labels, int cls,
                       double C, const Margins* frozen, const Standardizer& stats,
                       const double* w, double b, double a);

}  // namespace nb::svm
