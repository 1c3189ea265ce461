#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nullboost/cache.hpp"
#include "nullboost/optimizer.hpp"
#include "nullboost/pipeline.hpp"
#include "nullboost/svm.hpp"

namespace nb::hb {

/// One accepted ensemble round: the winning configuration, the piece of the
/// giant linear classifier trained for it, and the extractor that rebuilds
/// its features.
struct Round {
    space::Configuration config;
    svm::SvmModel model;
    pipe::FeatureExtractor extractor;
    double chosen_C = 1.0;
    double val_accuracy = 0.0;
};

/// Frozen per-class margins of all accepted rounds plus the bookkeeping
/// needed to extend the ensemble greedily.
struct EnsembleState {
    std::vector<Round> rounds;
    Margins fit_margins;    // rows = fit split size
    Margins valid_margins;  // rows = validation split size
    std::vector<double> history;  // validation accuracy per accepted round
    int class_count = 0;

    int J() const { return static_cast<int>(rounds.size()); }

    void save(const std::string& dir) const;
    /// Loads rounds and history; frozen margins are left empty (recompute
    /// with recompute_margins when the run resumes with its data splits).
    static EnsembleState load(const std::string& dir);
};

/// One labeled data split handed to the evaluator. `cache_id` keys the
/// optional feature cache; leave empty to bypass it.
struct SplitData {
    const std::vector<pipe::Image>* images = nullptr;
    std::span<const int> labels;
    std::string cache_id;
};

/// The regularization sweep run inside every candidate evaluation; the
/// candidate's own "C" hyperparameter joins the grid when present.
struct CSearch {
    std::vector<double> grid{0.01, 0.1, 1.0, 10.0};
    bool include_config_c = true;
};

struct EvalContext {
    SplitData fit;
    SplitData valid;
    int class_count = 0;
    CSearch c_search;
    svm::FitParams svm_params;  // C is overridden by the sweep
    std::size_t feature_cap = 9000;
    const FeatureCache* cache = nullptr;
};

struct EvalDiagnostics {
    int svm_fits = 0;
    double fit_accuracy = 0.0;
    double chosen_c = 0.0;
};

/// Winner materialization kept only when requested (run_round re-evaluates
/// the selected trial once instead of holding payloads for every candidate).
struct CandidatePayload {
    pipe::FeatureExtractor extractor;
    svm::SvmModel model;
    Margins fit_margins_next;
    Margins valid_margins_next;
};

struct EvalResult {
    opt::Trial trial;
    EvalDiagnostics diag;
    std::optional<CandidatePayload> payload;
};

/// Extracts the candidate's features on both splits, fits an SVM per C in
/// the sweep against the frozen fit margins, and scores 1 - best validation
/// accuracy. Degenerate configurations come back as degenerate trials
/// without any SVM work; other failures come back as failed trials.
EvalResult evaluate_candidate(const space::Configuration& config, const EnsembleState& state,
                              const EvalContext& ctx, std::uint64_t seed,
                              bool keep_payload = false);

struct RoundParams {
    int budget = 1;  // K non-degenerate trials
    int parallelism = 1;
    opt::Strategy strategy = opt::Strategy::Tpe;
    opt::TpeParams tpe;
    std::uint64_t seed = 0;
    int round_index = 0;  // 0: derive as J + 1
    int max_attempts_factor = 50;
    /// Observer fired (on the driving thread) for every trial record:
    /// once when suggested (pending) and once when finalized.
    std::function<void(const opt::Trial&)> on_trial;
    /// Round trial store; pre-populated entries are treated as resumed
    /// work (pending ones are re-evaluated under their recorded seeds).
    opt::TrialStore* store = nullptr;
};

struct RoundReport {
    int round_index = 0;
    int attempts = 0;
    int non_degenerate = 0;
    space::Configuration best_config;
    double best_accuracy = 0.0;
    double acc_min = 0.0, acc_median = 0.0, acc_max = 0.0;
    bool accepted = false;
};

/// Runs one greedy round: evaluates candidates until `budget` non-degenerate
/// trials complete, selects the best by validation accuracy (ties to the
/// earlier trial) and appends it to the ensemble iff it strictly improves
/// the history maximum. Throws ConfigError("budget-exhausted-all-degenerate")
/// when the attempt cap is hit first.
RoundReport run_round(EnsembleState& state, const space::SearchSpace& space,
                      const RoundParams& params, const EvalContext& ctx);

/// Recomputes each round's features on the given images, chains margins
/// through every round's alpha and weights, and takes the per-example
/// argmax. Throws ConfigError("empty-ensemble") when J = 0.
std::vector<int> predict_ensemble(const EnsembleState& state,
                                  const std::vector<pipe::Image>& images);

/// The chained decision margins behind predict_ensemble.
Margins ensemble_margins(const EnsembleState& state, const std::vector<pipe::Image>& images);

/// Rebuilds the frozen fit/valid margins of a loaded ensemble.
void recompute_margins(EnsembleState& state, const std::vector<pipe::Image>& fit_images,
                       const std::vector<pipe::Image>& valid_images);

}  // namespace nb::hb
