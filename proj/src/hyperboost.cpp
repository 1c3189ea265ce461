#include "nullboost/hyperboost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nb::hb {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using json = nlohmann::json;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int> argmax_rows(const Margins& m) {
    std::vector<int> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < m.classes; ++c)
            if (m.at(i, c) > m.at(i, best)) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

FeatureMatrix extract_cached(const pipe::FeatureExtractor& fe, const SplitData& split,
                             const FeatureCache* cache, std::uint64_t seed) {
    std::string key;
    if (cache && cache->enabled() && !split.cache_id.empty()) {
        const std::uint64_t cfg_hash = fnv1a(fe.config().to_json().dump());
        key = FeatureCache::key(cfg_hash, seed, split.cache_id);
        if (auto hit = cache->lookup(key)) return std::move(*hit);
    }
    FeatureMatrix m = fe.transform(*split.images);
    if (!key.empty()) cache->store(key, m);
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// evaluate_candidate

EvalResult evaluate_candidate(const space::Configuration& config, const EnsembleState& state,
                              const EvalContext& ctx, std::uint64_t seed, bool keep_payload) {
    const auto t0 = Clock::now();
    EvalResult res;
    res.trial.config = config;
    res.trial.seed = seed;
    res.trial.round = state.J() + 1;

    try {
        const pipe::PipelineConfig pcfg =
            pipe::PipelineConfig::from_configuration(config, ctx.feature_cap);
        // build() runs the symbolic geometry check before any pixel work, so
        // degenerate candidates are rejected cheaply here.
        const pipe::FeatureExtractor extractor =
            pipe::FeatureExtractor::build(pcfg, *ctx.fit.images, seed);
        const FeatureMatrix x_fit = extract_cached(extractor, ctx.fit, ctx.cache, seed);
        const FeatureMatrix x_valid = extract_cached(extractor, ctx.valid, ctx.cache, seed);

        const bool chained = state.J() > 0;
        const Margins* fit_frozen = chained ? &state.fit_margins : nullptr;
        const Margins* valid_frozen = chained ? &state.valid_margins : nullptr;

        std::vector<double> c_values = ctx.c_search.grid;
        if (ctx.c_search.include_config_c && config.has("C")) {
            const double cc = config.num("C");
            bool dup = false;
            for (double v : c_values) dup = dup || v == cc;
            if (!dup) c_values.push_back(cc);
        }
        if (c_values.empty()) c_values.push_back(1.0);

        double best_acc = -1.0;
        svm::SvmModel best_model;
        for (const double c : c_values) {
            svm::FitParams fp = ctx.svm_params;
            fp.C = c;
            fp.class_count = ctx.class_count;
            svm::FitResult fr = svm::fit(x_fit, ctx.fit.labels, fp, fit_frozen);
            ++res.diag.svm_fits;
            const std::vector<int> pred = svm::predict(fr.model, x_valid, valid_frozen);
            const double acc = 1.0 - svm::zero_one_loss(pred, ctx.valid.labels);
            if (acc > best_acc) {
                best_acc = acc;
                res.diag.chosen_c = c;
                best_model = std::move(fr.model);
            }
        }

        const std::vector<int> fit_pred = svm::predict(best_model, x_fit, fit_frozen);
        res.diag.fit_accuracy = 1.0 - svm::zero_one_loss(fit_pred, ctx.fit.labels);

        res.trial.status = opt::Status::Completed;
        res.trial.loss = 1.0 - best_acc;

        if (keep_payload) {
            CandidatePayload payload;
            payload.fit_margins_next = svm::margins(best_model, x_fit, fit_frozen);
            payload.valid_margins_next = svm::margins(best_model, x_valid, valid_frozen);
            payload.extractor = extractor;
            payload.model = std::move(best_model);
            res.payload = std::move(payload);
        }
    } catch (const DegenerateConfig& e) {
        res.trial.status = opt::Status::Degenerate;
        res.trial.loss.reset();
        res.trial.reason = e.what();
    } catch (const std::exception& e) {
        res.trial.status = opt::Status::Failed;
        res.trial.loss.reset();
        res.trial.reason = e.what();
    }
    res.trial.wall_time = seconds_since(t0);
    return res;
}

// ---------------------------------------------------------------------------
// run_round

RoundReport run_round(EnsembleState& state, const space::SearchSpace& space,
                      const RoundParams& params, const EvalContext& ctx) {
    if (params.budget < 1) throw ConfigError("round budget must be >= 1");
    opt::TrialStore local_store;
    opt::TrialStore& store = params.store ? *params.store : local_store;
    const int round_index = params.round_index > 0 ? params.round_index : state.J() + 1;
    const long max_attempts =
        static_cast<long>(params.max_attempts_factor) * params.budget;

    auto notify = [&](const opt::Trial& t) {
        if (params.on_trial) params.on_trial(t);
    };

    auto completed_count = [&]() {
        return static_cast<int>(store.completed_count());
    };

    // Resumed pending trials are re-evaluated first, under their recorded
    // seeds, so an interrupted round replays deterministically.
    std::vector<int> queue;
    for (const auto& t : store.trials())
        if (t.status == opt::Status::Pending) queue.push_back(t.index);

    while (completed_count() < params.budget) {
        if (static_cast<long>(store.size()) >= max_attempts && queue.empty())
            throw ConfigError("budget-exhausted-all-degenerate: " +
                              std::to_string(store.size()) + " attempts in round " +
                              std::to_string(round_index));

        // Assemble the next batch: replayed pendings first, then fresh
        // suggestions. Batch size never exceeds the remaining budget, so the
        // non-degenerate count lands exactly on K.
        const int remaining = params.budget - completed_count();
        const int batch_size = std::max(1, std::min(params.parallelism, remaining));
        std::vector<int> batch;
        while (static_cast<int>(batch.size()) < batch_size && !queue.empty()) {
            batch.push_back(queue.front());
            queue.erase(queue.begin());
        }
        while (static_cast<int>(batch.size()) < batch_size &&
               static_cast<long>(store.size()) < max_attempts) {
            Rng suggest_rng(mix_seed(params.seed, static_cast<std::uint64_t>(round_index),
                                     store.size()));
            opt::Trial pending;
            pending.round = round_index;
            pending.status = opt::Status::Pending;
            pending.seed = mix_seed(params.seed ^ 0x7261d0ULL,
                                    static_cast<std::uint64_t>(round_index), store.size());
            pending.config = opt::suggest(store, space, params.tpe, params.strategy, suggest_rng);
            const int idx = store.report(pending);
            notify(store.at(idx));
            batch.push_back(idx);
        }
        if (batch.empty())
            throw ConfigError("budget-exhausted-all-degenerate: " +
                              std::to_string(store.size()) + " attempts in round " +
                              std::to_string(round_index));

        std::vector<opt::Trial> results(batch.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, params.parallelism)) if (params.parallelism > 1)
        for (long bi = 0; bi < static_cast<long>(batch.size()); ++bi) {
            const opt::Trial& pending = store.at(batch[bi]);
            EvalResult er = evaluate_candidate(pending.config, state, ctx, pending.seed, false);
            er.trial.index = pending.index;
            er.trial.round = round_index;
            results[bi] = std::move(er.trial);
        }
        for (auto& t : results) {
            store.report(t);
            notify(t);
        }
    }

    // Selection: lowest loss, ties to the earlier trial.
    const opt::Trial* best = store.best();
    if (!best) throw ConfigError("budget-exhausted-all-degenerate: no completed trial");

    RoundReport report;
    report.round_index = round_index;
    report.attempts = static_cast<int>(store.size());
    report.non_degenerate = completed_count();
    report.best_config = best->config;
    report.best_accuracy = 1.0 - *best->loss;
    {
        std::vector<double> accs;
        for (const auto& t : store.trials())
            if (t.status == opt::Status::Completed) accs.push_back(1.0 - *t.loss);
        std::sort(accs.begin(), accs.end());
        report.acc_min = accs.front();
        report.acc_max = accs.back();
        report.acc_median = accs[accs.size() / 2];
    }

    const double history_max =
        state.history.empty() ? -std::numeric_limits<double>::infinity()
                              : *std::max_element(state.history.begin(), state.history.end());
    if (report.best_accuracy > history_max) {
        // Materialize the winner. Re-evaluating under the recorded seed is
        // bit-deterministic, so the payload matches the logged trial.
        EvalResult winner = evaluate_candidate(best->config, state, ctx, best->seed, true);
        if (winner.trial.status != opt::Status::Completed ||
            *winner.trial.loss != *best->loss)
            throw std::logic_error("winner re-evaluation diverged from its recorded loss");
        Round round;
        round.config = best->config;
        round.model = std::move(winner.payload->model);
        round.extractor = std::move(winner.payload->extractor);
        round.chosen_C = winner.diag.chosen_c;
        round.val_accuracy = report.best_accuracy;
        state.fit_margins = std::move(winner.payload->fit_margins_next);
        state.valid_margins = std::move(winner.payload->valid_margins_next);
        state.rounds.push_back(std::move(round));
        state.history.push_back(report.best_accuracy);
        if (state.class_count == 0) state.class_count = ctx.class_count;
        report.accepted = true;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Prediction

Margins ensemble_margins(const EnsembleState& state, const std::vector<pipe::Image>& images) {
    if (state.J() == 0) throw ConfigError("empty-ensemble");
    Margins m;
    for (std::size_t j = 0; j < state.rounds.size(); ++j) {
        const Round& r = state.rounds[j];
        const FeatureMatrix x = r.extractor.transform(images);
        m = svm::margins(r.model, x, j == 0 ? nullptr : &m);
    }
    return m;
}

std::vector<int> predict_ensemble(const EnsembleState& state,
                                  const std::vector<pipe::Image>& images) {
    return argmax_rows(ensemble_margins(state, images));
}

void recompute_margins(EnsembleState& state, const std::vector<pipe::Image>& fit_images,
                       const std::vector<pipe::Image>& valid_images) {
    if (state.J() == 0) return;
    state.fit_margins = ensemble_margins(state, fit_images);
    state.valid_margins = ensemble_margins(state, valid_images);
}

// ---------------------------------------------------------------------------
// Ensemble persistence

static constexpr int kEnsembleVersion = 1;

static std::string round_dirname(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "round_%02d", index);
    return buf;
}

void EnsembleState::save(const std::string& dir) const {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "nullboost-ensemble";
    manifest["version"] = kEnsembleVersion;
    manifest["class_count"] = class_count;
    manifest["history"] = history;
    json rounds_j = json::array();
    for (std::size_t j = 0; j < rounds.size(); ++j) {
        const Round& r = rounds[j];
        const int index = static_cast<int>(j) + 1;
        const std::string rdir = dir + "/" + round_dirname(index);
        fs::create_directories(rdir);
        r.model.save(rdir + "/model.json");
        r.extractor.save(rdir + "/extractor.bin");
        json rj;
        rj["index"] = index;
        rj["dir"] = round_dirname(index);
        rj["chosen_C"] = r.chosen_C;
        rj["val_accuracy"] = r.val_accuracy;
        rj["config"] = r.config.to_json();
        rj["space_id"] = r.config.space_id;
        rounds_j.push_back(std::move(rj));
    }
    manifest["rounds"] = std::move(rounds_j);
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw DataError("cannot write ensemble manifest in '" + dir + "'");
    out << manifest.dump(2) << "\n";
}

EnsembleState EnsembleState::load(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw DataError("cannot open ensemble manifest in '" + dir + "'");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DataError("ensemble manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "nullboost-ensemble" ||
        manifest.value("version", -1) != kEnsembleVersion)
        throw DataError("unsupported ensemble manifest in '" + dir + "'");
    EnsembleState state;
    state.class_count = manifest.at("class_count").get<int>();
    state.history = manifest.at("history").get<std::vector<double>>();
    for (const auto& rj : manifest.at("rounds")) {
        Round r;
        r.config = space::Configuration::from_json(rj.at("config"),
                                                   rj.value("space_id", ""));
        r.chosen_C = rj.at("chosen_C").get<double>();
        r.val_accuracy = rj.at("val_accuracy").get<double>();
        const std::string rdir = dir + "/" + rj.at("dir").get<std::string>();
        r.model = svm::SvmModel::load(rdir + "/model.json");
        r.extractor = pipe::FeatureExtractor::load(rdir + "/extractor.bin");
        state.rounds.push_back(std::move(r));
    }
    return state;
}

}  // namespace nb::hb
