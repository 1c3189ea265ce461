#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nullboost/dataset.hpp"
#include "nullboost/hyperboost.hpp"

namespace nb::run {

using json = nlohmann::json;

struct RunConfig {
    std::string space_path;
    json dataset_spec;  // {"type":"csv","path":...} or {"type":"synthetic",...}
    int n_fit = 0;
    int n_valid = 0;
    int n_test = 0;
    int rounds = 1;  // J-max
    int budget = 1;  // K non-degenerate trials per round
    int parallelism = 1;
    std::uint64_t seed = 0;
    std::string out_dir;
    opt::Strategy strategy = opt::Strategy::Tpe;
    opt::TpeParams tpe;
    std::size_t feature_cap = 9000;
    std::vector<double> c_grid{0.01, 0.1, 1.0, 10.0};
    bool continue_after_reject = false;
    double svm_tol = 1e-6;
    int svm_max_epochs = 1000;

    static RunConfig from_json(const json& j);
    static RunConfig from_file(const std::string& path);
    json to_json() const;
};

struct RoundRow {
    int round = 0;
    int attempts = 0;
    int non_degenerate = 0;
    double best_accuracy = 0.0;
    bool accepted = false;
    double ensemble_accuracy = 0.0;
};

struct RunResult {
    std::string dir;
    hb::EnsembleState ensemble;
    std::vector<RoundRow> rounds;
};

/// Loads (or generates) the dataset named by the config according to its
/// seeded split, then executes HyperBoost rounds, persisting after every
/// trial: trials.jsonl (append-only log), rounds.csv (per-round accuracy
/// table), ensemble/ (serialized rounds + manifest), run_config.json, and
/// predictions.txt when a test split exists. Rerunning with the same output
/// directory resumes from the logs. The test split is never read until the
/// final prediction export (asserted at runtime).
RunResult run(const RunConfig& rc,
              const std::function<void(const opt::Trial&)>& observer = {});

/// One predicted class index per example, one per line, order preserved.
void export_predictions(const hb::EnsembleState& ensemble,
                        const std::vector<pipe::Image>& test_images, const std::string& path);

/// Returns the contents of a run directory's per-round accuracy table.
std::string report(const std::string& run_dir);

/// Builds the dataset (with partition applied) that a config describes.
data::Dataset load_run_dataset(const RunConfig& rc);

}  // namespace nb::run
