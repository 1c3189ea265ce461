#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nullboost/searchspace.hpp"

namespace nb::opt {

using json = nlohmann::json;
using space::SearchSpace;

enum class Status { Pending, Completed, Degenerate, Failed };

std::string status_name(Status s);
Status status_from_name(const std::string& s);

/// One evaluated (or in-flight) configuration. Losses are 1 - validation
/// accuracy, lower is better.
struct Trial {
    int index = -1;  // assigned by the store on append
    int round = 1;
    Status status = Status::Pending;
    std::optional<double> loss;
    double wall_time = 0.0;  // seconds
    std::uint64_t seed = 0;
    space::Configuration config;
    std::string reason;  // degenerate / failed trials only

    void check() const;  // enforces loss <-> status invariants
};

/// Append-only trial history. Indices are stable; completing a pending
/// trial replaces its status in place and appends a second log record.
class TrialStore {
  public:
    /// Spec operation `report`: index < 0 appends a new trial (returning its
    /// index); index >= 0 finalizes the pending trial at that index. Throws
    /// ConfigError("unknown-pending-trial...") when finalizing a trial that
    /// was never suggested or is not pending.
    int report(Trial t);

    std::size_t size() const { return trials_.size(); }
    const Trial& at(std::size_t i) const { return trials_.at(i); }
    const std::vector<Trial>& trials() const { return trials_; }

    std::size_t count(Status s) const;
    std::size_t completed_count() const { return count(Status::Completed); }

    /// Best completed trial (lowest loss, ties broken by lowest index), or
    /// nullptr when none completed.
    const Trial* best() const;

    void to_jsonl(std::ostream& out) const;
    /// Rebuilds a store from an append-only log; later records for the same
    /// index win. `round_filter` < 0 keeps every round.
    static TrialStore from_jsonl(std::istream& in, int round_filter = -1);

    static json trial_record(const Trial& t);
    static Trial trial_from_record(const json& rec);

  private:
    std::vector<Trial> trials_;
};

/// Tuning knobs of the tree-structured Parzen estimator suggestion rule.
struct TpeParams {
    double gamma = 0.25;       // quantile splitting good/bad completed trials
    int n_candidates = 24;     // candidates scored per suggestion
    int n_startup = 20;        // prior samples before the estimator engages
    std::string bandwidth_rule = "neighbor-floor";
};

enum class Strategy { Random, Tpe };

Strategy strategy_from_name(const std::string& s);
std::string strategy_name(Strategy s);

/// The ceil(gamma * n_completed) lowest-loss completed trials and the rest.
/// Pending, degenerate and failed trials are excluded from both halves.
/// Throws ConfigError("no-completed-trials") when nothing has completed.
std::pair<std::vector<const Trial*>, std::vector<const Trial*>> tpe_split(
    const TrialStore& store, double gamma);

/// Per-parameter Parzen density over a space, built from one half of a
/// tpe_split. Continuous parameters get one Gaussian kernel per observation
/// (bandwidth = max of the distances to the neighboring observations,
/// floored at (hi-lo)/min(100, n)) plus one prior-shaped component;
/// categorical and choice parameters get add-one smoothed counts. A trial
/// contributes to a parameter's density only if that parameter was active
/// in the trial.
class TpeDensity {
  public:
    static TpeDensity build(const SearchSpace& space, const std::vector<const Trial*>& trials);

    /// Draws a configuration from the density, walking the conditional tree.
    space::Configuration sample(Rng& rng) const;

    /// Sum of per-parameter log densities over the configuration's active
    /// parameters. Finite for every valid configuration.
    double log_likelihood(const space::Configuration& config) const;

    TpeDensity(const TpeDensity&) = default;
    TpeDensity(TpeDensity&&) = default;
    ~TpeDensity();

  private:
    TpeDensity();
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

/// Ratio of good-density to bad-density likelihood over the candidate's
/// active parameters. Higher is more promising.
double tpe_score(const space::Configuration& candidate, const TpeDensity& good,
                 const TpeDensity& bad);

/// Suggest the next configuration to evaluate. Random strategy (and the TPE
/// startup phase) draws from the space prior with the exact rng consumption
/// of SearchSpace::sample. Deterministic given store contents and rng state.
space::Configuration suggest(const TrialStore& store, const SearchSpace& space,
                             const TpeParams& params, Strategy strategy, Rng& rng);

}  // namespace nb::opt
