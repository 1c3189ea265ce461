#include "nullboost/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace nb::run {

namespace fs = std::filesystem;

RunConfig RunConfig::from_json(const json& j) {
    RunConfig rc;
    try {
        rc.space_path = j.at("space").get<std::string>();
        rc.dataset_spec = j.at("dataset");
        rc.n_fit = j.at("split").at("fit").get<int>();
        rc.n_valid = j.at("split").at("valid").get<int>();
        rc.n_test = j.at("split").value("test", 0);
        rc.rounds = j.value("rounds", 1);
        rc.budget = j.value("budget", 1);
        rc.parallelism = j.value("parallelism", 1);
        rc.seed = j.value("seed", 0ULL);
        rc.out_dir = j.at("out").get<std::string>();
        rc.strategy = opt::strategy_from_name(j.value("strategy", "tpe"));
        if (j.contains("tpe")) {
            const json& t = j["tpe"];
            rc.tpe.gamma = t.value("gamma", rc.tpe.gamma);
            rc.tpe.n_candidates = t.value("n_candidates", rc.tpe.n_candidates);
            rc.tpe.n_startup = t.value("n_startup", rc.tpe.n_startup);
        }
        rc.feature_cap = j.value("feature_cap", std::size_t{9000});
        if (j.contains("c_grid")) rc.c_grid = j["c_grid"].get<std::vector<double>>();
        rc.continue_after_reject = j.value("continue_after_reject", false);
        rc.svm_tol = j.value("svm_tol", 1e-6);
        rc.svm_max_epochs = j.value("svm_max_epochs", 1000);
    } catch (const json::exception& e) {
        throw ConfigError("run config: " + std::string(e.what()));
    }
    if (rc.budget < 1) throw ConfigError("run config: budget must be >= 1");
    if (rc.rounds < 1) throw ConfigError("run config: rounds must be >= 1");
    if (rc.n_fit < 1 || rc.n_valid < 1)
        throw ConfigError("run config: fit and valid split sizes must be >= 1");
    return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("run config '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    json j;
    j["space"] = space_path;
    j["dataset"] = dataset_spec;
    j["split"] = {{"fit", n_fit}, {"valid", n_valid}, {"test", n_test}};
    j["rounds"] = rounds;
    j["budget"] = budget;
    j["parallelism"] = parallelism;
    j["seed"] = seed;
    j["out"] = out_dir;
    j["strategy"] = opt::strategy_name(strategy);
    j["tpe"] = {{"gamma", tpe.gamma},
                {"n_candidates", tpe.n_candidates},
                {"n_startup", tpe.n_startup}};
    j["feature_cap"] = feature_cap;
    j["c_grid"] = c_grid;
    j["continue_after_reject"] = continue_after_reject;
    j["svm_tol"] = svm_tol;
    j["svm_max_epochs"] = svm_max_epochs;
    return j;
}

data::Dataset load_run_dataset(const RunConfig& rc) {
    if (!rc.dataset_spec.is_object() || !rc.dataset_spec.contains("type"))
        throw ConfigError("run config: dataset needs a 'type'");
    const std::string type = rc.dataset_spec["type"].get<std::string>();
    data::Dataset ds;
    if (type == "csv") {
        ds = data::load_expression_csv(rc.dataset_spec.at("path").get<std::string>(),
                                       rc.dataset_spec.value("side", 0));
        if (!ds.labeled()) throw DataError("run dataset must be labeled");
    } else if (type == "synthetic") {
        ds = data::make_synthetic(data::SynthSpec::from_json(rc.dataset_spec));
    } else {
        throw ConfigError("run config: unknown dataset type '" + type + "'");
    }
    data::split(ds, rc.n_fit, rc.n_valid, rc.seed, rc.n_test);
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::string rounds_csv_header() {
    return "round,attempts,non_degenerate,best_accuracy,accepted,ensemble_accuracy";
}

std::string round_row_line(const RoundRow& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << r.round << "," << r.attempts << "," << r.non_degenerate << "," << r.best_accuracy
       << "," << (r.accepted ? 1 : 0) << "," << r.ensemble_accuracy;
    return os.str();
}

std::vector<RoundRow> read_rounds_csv(const std::string& path) {
    std::vector<RoundRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    if (!std::getline(in, line)) return rows;  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        RoundRow r;
        int accepted = 0;
        if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%d,%lf", &r.round, &r.attempts,
                        &r.non_degenerate, &r.best_accuracy, &accepted,
                        &r.ensemble_accuracy) != 6)
            throw DataError("rounds.csv: malformed line '" + line + "'");
        r.accepted = accepted != 0;
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

void export_predictions(const hb::EnsembleState& ensemble,
                        const std::vector<pipe::Image>& test_images, const std::string& path) {
    const std::vector<int> pred = hb::predict_ensemble(ensemble, test_images);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions file '" + path + "'");
    for (int p : pred) out << p << "\n";
    if (!out) throw DataError("failed writing predictions file '" + path + "'");
}

std::string report(const std::string& run_dir) {
    std::ifstream in(run_dir + "/rounds.csv");
    if (!in) throw DataError("no rounds.csv in '" + run_dir + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

RunResult run(const RunConfig& rc, const std::function<void(const opt::Trial&)>& observer) {
    const space::SearchSpace space = space::SearchSpace::from_file(rc.space_path);
    data::Dataset ds = load_run_dataset(rc);
    if (ds.class_count < 2) throw DataError("run dataset needs at least 2 classes");

    fs::create_directories(rc.out_dir);
    {
        std::ofstream cfg_out(rc.out_dir + "/run_config.json");
        if (!cfg_out) throw DataError("cannot write into '" + rc.out_dir + "'");
        cfg_out << rc.to_json().dump(2) << "\n";
    }

    const std::vector<pipe::Image> fit_images = ds.gather_images(ds.fit_idx);
    const std::vector<int> fit_labels = ds.gather_labels(ds.fit_idx);
    const std::vector<pipe::Image> valid_images = ds.gather_images(ds.valid_idx);
    const std::vector<int> valid_labels = ds.gather_labels(ds.valid_idx);

    const FeatureCache cache = FeatureCache::from_env();
    const std::string ds_fp = hex64(ds.fingerprint());

    hb::EvalContext ctx;
    ctx.fit.images = &fit_images;
    ctx.fit.labels = fit_labels;
    ctx.fit.cache_id = "fit@" + ds_fp;
    ctx.valid.images = &valid_images;
    ctx.valid.labels = valid_labels;
    ctx.valid.cache_id = "valid@" + ds_fp;
    ctx.class_count = ds.class_count;
    ctx.c_search.grid = rc.c_grid;
    ctx.svm_params.tol = rc.svm_tol;
    ctx.svm_params.max_epochs = rc.svm_max_epochs;
    ctx.feature_cap = rc.feature_cap;
    ctx.cache = &cache;

    // Resume: reload accepted rounds and the per-round table, then rebuild
    // the frozen margins from the stored extractors.
    RunResult result;
    result.dir = rc.out_dir;
    const std::string ensemble_dir = rc.out_dir + "/ensemble";
    hb::EnsembleState state;
    state.class_count = ds.class_count;
    if (fs::exists(ensemble_dir + "/manifest.json")) {
        state = hb::EnsembleState::load(ensemble_dir);
        hb::recompute_margins(state, fit_images, valid_images);
    }
    result.rounds = read_rounds_csv(rc.out_dir + "/rounds.csv");
    const int first_round = result.rounds.empty() ? 1 : result.rounds.back().round + 1;

    const std::string trials_path = rc.out_dir + "/trials.jsonl";
    const std::string rounds_path = rc.out_dir + "/rounds.csv";
    if (!fs::exists(rounds_path)) {
        std::ofstream out(rounds_path);
        out << rounds_csv_header() << "\n";
    }

    bool stopped = false;
    for (int r = first_round; r <= rc.rounds && !stopped; ++r) {
        opt::TrialStore store;
        if (fs::exists(trials_path)) {
            std::ifstream in(trials_path);
            store = opt::TrialStore::from_jsonl(in, r);
        }

        std::ofstream trials_out(trials_path, std::ios::app);
        if (!trials_out) throw DataError("cannot append to '" + trials_path + "'");

        hb::RoundParams params;
        params.budget = rc.budget;
        params.parallelism = rc.parallelism;
        params.strategy = rc.strategy;
        params.tpe = rc.tpe;
        params.seed = rc.seed;
        params.round_index = r;
        params.store = &store;
        params.on_trial = [&](const opt::Trial& t) {
            trials_out << opt::TrialStore::trial_record(t).dump() << "\n";
            trials_out.flush();
            if (observer) observer(t);
        };

        const hb::RoundReport rep = hb::run_round(state, space, params, ctx);

        RoundRow row;
        row.round = r;
        row.attempts = rep.attempts;
        row.non_degenerate = rep.non_degenerate;
        row.best_accuracy = rep.best_accuracy;
        row.accepted = rep.accepted;
        row.ensemble_accuracy = state.history.empty() ? 0.0 : state.history.back();
        {
            std::ofstream out(rounds_path, std::ios::app);
            out << round_row_line(row) << "\n";
        }
        result.rounds.push_back(row);

        if (rep.accepted)
            state.save(ensemble_dir);
        else if (!rc.continue_after_reject)
            stopped = true;
    }

    // Prediction export happens strictly after selection; the counter
    // asserts no selection code path touched the test partition.
    if (!ds.test_idx.empty() && state.J() >= 1) {
        if (ds.test_access_count != 0)
            throw std::logic_error("test partition was accessed during selection");
        const std::vector<pipe::Image> test_images = ds.gather_images(ds.test_indices());
        export_predictions(state, test_images, rc.out_dir + "/predictions.txt");
    }

    result.ensemble = std::move(state);
    return result;
}

}  // namespace nb::run
