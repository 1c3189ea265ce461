// Command-line front end: `run` executes a full search/boosting run from a
// config file, `predict` applies a serialized ensemble to a CSV, `synth`
// writes a synthetic dataset, `report` prints a run's per-round table.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "nullboost/dataset.hpp"
#include "nullboost/runner.hpp"

namespace {

int cmd_run(const std::string& config_path, bool quiet) {
    const nb::run::RunConfig rc = nb::run::RunConfig::from_file(config_path);
    const auto observer = [&](const nb::opt::Trial& t) {
        if (quiet || t.status == nb::opt::Status::Pending) return;
        std::cout << "round " << t.round << " trial " << t.index << " "
                  << nb::opt::status_name(t.status);
        if (t.loss) std::cout << " acc=" << 1.0 - *t.loss;
        std::cout << " (" << t.wall_time << "s)\n";
    };
    const nb::run::RunResult res = nb::run::run(rc, observer);
    std::cout << "run directory: " << res.dir << "\n";
    for (const auto& row : res.rounds)
        std::cout << "round " << row.round << ": best=" << row.best_accuracy
                  << (row.accepted ? " accepted" : " rejected")
                  << " ensemble=" << row.ensemble_accuracy << "\n";
    return 0;
}

int cmd_predict(const std::string& ensemble_dir, const std::string& data_path,
                const std::string& out_path) {
    const nb::hb::EnsembleState ensemble = nb::hb::EnsembleState::load(ensemble_dir);
    const nb::data::Dataset ds = nb::data::load_expression_csv(data_path);
    nb::run::export_predictions(ensemble, ds.images, out_path);
    std::cout << ds.images.size() << " predictions written to " << out_path << "\n";
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    std::ifstream in(spec_path);
    if (!in) throw nb::ConfigError("cannot open synth spec '" + spec_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw nb::ConfigError("synth spec: " + std::string(e.what()));
    }
    const nb::data::SynthSpec spec = nb::data::SynthSpec::from_json(j);
    const nb::data::Dataset ds = nb::data::make_synthetic(spec);
    std::filesystem::create_directories(out_dir);
    nb::data::save_expression_csv(ds, out_dir + "/data.csv");
    std::ofstream meta(out_dir + "/meta.json");
    meta << spec.to_json().dump(2) << "\n";
    std::cout << ds.size() << " examples written to " << out_dir << "/data.csv\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    std::cout << nb::run::report(run_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyperparameter search and boosted feature-set ensembles"};
    app.require_subcommand(1);

    std::string config_path, ensemble_dir, data_path, out_path, spec_path, run_dir;
    bool quiet = false;

    CLI::App* run = app.add_subcommand("run", "execute a run from a config file");
    run->add_option("--config", config_path, "run config JSON")->required();
    run->add_flag("--quiet", quiet, "suppress per-trial progress");

    CLI::App* predict = app.add_subcommand("predict", "apply a serialized ensemble");
    predict->add_option("--ensemble", ensemble_dir, "ensemble directory")->required();
    predict->add_option("--data", data_path, "input CSV")->required();
    predict->add_option("--out", out_path, "output predictions file")->required();

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    synth->add_option("--out", out_path, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "print a run's per-round table");
    report->add_option("--run", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(config_path, quiet);
        if (predict->parsed()) return cmd_predict(ensemble_dir, data_path, out_path);
        if (synth->parsed()) return cmd_synth(spec_path, out_path);
        if (report->parsed()) return cmd_report(run_dir);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const nb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nb::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
