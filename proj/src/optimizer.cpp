#include "nullboost/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>

namespace nb::opt {

using space::Configuration;
using space::Kind;
using space::ParamSpec;
using space::SearchSpace;
using space::Value;

std::string status_name(Status s) {
    switch (s) {
        case Status::Pending: return "pending";
        case Status::Completed: return "completed";
        case Status::Degenerate: return "degenerate";
        case Status::Failed: return "failed";
    }
    return "?";
}

Status status_from_name(const std::string& s) {
    if (s == "pending") return Status::Pending;
    if (s == "completed") return Status::Completed;
    if (s == "degenerate") return Status::Degenerate;
    if (s == "failed") return Status::Failed;
    throw DataError("unknown trial status '" + s + "'");
}

Strategy strategy_from_name(const std::string& s) {
    if (s == "random") return Strategy::Random;
    if (s == "tpe") return Strategy::Tpe;
    throw ConfigError("unknown strategy '" + s + "' (expected 'random' or 'tpe')");
}

std::string strategy_name(Strategy s) {
    return s == Strategy::Random ? "random" : "tpe";
}

void Trial::check() const {
    if ((status == Status::Completed) != loss.has_value())
        throw std::invalid_argument("trial loss must be present iff status is completed");
    if (status == Status::Degenerate && reason.empty())
        throw std::invalid_argument("degenerate trial must carry a reason");
    if (round < 1) throw std::invalid_argument("trial round must be >= 1");
}

// ---------------------------------------------------------------------------
// TrialStore

int TrialStore::report(Trial t) {
    t.check();
    if (t.index < 0) {
        t.index = static_cast<int>(trials_.size());
        trials_.push_back(std::move(t));
        return trials_.back().index;
    }
    if (t.index >= static_cast<int>(trials_.size()) ||
        trials_[t.index].status != Status::Pending)
        throw ConfigError("unknown-pending-trial: index " + std::to_string(t.index));
    const int idx = t.index;
    trials_[idx] = std::move(t);
    return idx;
}

std::size_t TrialStore::count(Status s) const {
    std::size_t n = 0;
    for (const auto& t : trials_)
        if (t.status == s) ++n;
    return n;
}

const Trial* TrialStore::best() const {
    const Trial* best = nullptr;
    for (const auto& t : trials_) {
        if (t.status != Status::Completed) continue;
        if (!best || *t.loss < *best->loss) best = &t;
    }
    return best;
}

json TrialStore::trial_record(const Trial& t) {
    json rec;
    rec["index"] = t.index;
    rec["round"] = t.round;
    rec["status"] = status_name(t.status);
    rec["loss"] = t.loss ? json(*t.loss) : json(nullptr);
    rec["wall_time"] = t.wall_time;
    rec["seed"] = t.seed;
    rec["config"] = t.config.to_json();
    if (t.status == Status::Degenerate || t.status == Status::Failed) rec["reason"] = t.reason;
    return rec;
}

Trial TrialStore::trial_from_record(const json& rec) {
    Trial t;
    t.index = rec.at("index").get<int>();
    t.round = rec.at("round").get<int>();
    t.status = status_from_name(rec.at("status").get<std::string>());
    if (!rec.at("loss").is_null()) t.loss = rec.at("loss").get<double>();
    t.wall_time = rec.at("wall_time").get<double>();
    t.seed = rec.at("seed").get<std::uint64_t>();
    t.config = Configuration::from_json(rec.at("config"));
    t.reason = rec.value("reason", "");
    return t;
}

void TrialStore::to_jsonl(std::ostream& out) const {
    for (const auto& t : trials_) out << trial_record(t).dump() << "\n";
}

TrialStore TrialStore::from_jsonl(std::istream& in, int round_filter) {
    std::map<int, Trial> latest;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("trials log line " + std::to_string(lineno) + ": " + e.what());
        }
        Trial t = trial_from_record(rec);
        if (round_filter >= 0 && t.round != round_filter) continue;
        latest[t.index] = std::move(t);  // later records win
    }
    TrialStore store;
    for (auto& [idx, t] : latest) {
        if (idx != static_cast<int>(store.trials_.size()))
            throw DataError("trials log has a gap at index " + std::to_string(idx));
        store.trials_.push_back(std::move(t));
    }
    return store;
}

// ---------------------------------------------------------------------------
// tpe_split

std::pair<std::vector<const Trial*>, std::vector<const Trial*>> tpe_split(
    const TrialStore& store, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("tpe gamma must be in (0,1)");
    std::vector<const Trial*> completed;
    for (const auto& t : store.trials())
        if (t.status == Status::Completed) completed.push_back(&t);
    if (completed.empty()) throw ConfigError("no-completed-trials");
    std::stable_sort(completed.begin(), completed.end(), [](const Trial* a, const Trial* b) {
        if (*a->loss != *b->loss) return *a->loss < *b->loss;
        return a->index < b->index;  // stable tie handling
    });
    const std::size_t n_good = static_cast<std::size_t>(
        std::ceil(gamma * static_cast<double>(completed.size())));
    std::vector<const Trial*> good(completed.begin(), completed.begin() + n_good);
    std::vector<const Trial*> bad(completed.begin() + n_good, completed.end());
    return {std::move(good), std::move(bad)};
}

// ---------------------------------------------------------------------------
// Parzen densities

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double norm_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

/// Gaussian kernel truncated to [lo, hi], normalized over that interval.
double trunc_normal_pdf(double x, double mu, double sigma, double lo, double hi) {
    const double z = (x - mu) / sigma;
    const double mass = norm_cdf((hi - mu) / sigma) - norm_cdf((lo - mu) / sigma);
    const double pdf = kInvSqrt2Pi / sigma * std::exp(-0.5 * z * z);
    return pdf / std::max(mass, 1e-12);
}

double trunc_normal_sample(Rng& rng, double mu, double sigma, double lo, double hi) {
    for (int tries = 0; tries < 100; ++tries) {
        const double x = mu + sigma * rng.normal();
        if (x >= lo && x <= hi) return x;
    }
    return std::min(hi, std::max(lo, mu));
}

/// Numeric parameters are modeled in a transformed coordinate: identity for
/// uniform kinds, log for log-uniform kinds. Ratios of good/bad densities
/// are unaffected by the change of variable because the Jacobian cancels.
struct NumericDensity {
    Kind kind;
    double lo, hi;  // transformed bounds
    double q = 0.0;
    double raw_lo = 0.0, raw_hi = 0.0;
    std::vector<double> mu;
    std::vector<double> sigma;

    static double transform(Kind k, double v) {
        return (k == Kind::LogUniform || k == Kind::QLogUniform) ? std::log(v) : v;
    }
    static double untransform(Kind k, double t) {
        return (k == Kind::LogUniform || k == Kind::QLogUniform) ? std::exp(t) : t;
    }

    void fit(const ParamSpec& spec, std::vector<double> observations) {
        kind = spec.kind;
        raw_lo = spec.lo;
        raw_hi = spec.hi;
        q = spec.q;
        lo = transform(kind, spec.lo);
        hi = transform(kind, spec.hi);
        for (double& v : observations) v = transform(kind, v);
        std::sort(observations.begin(), observations.end());
        mu = std::move(observations);
        const std::size_t n = mu.size();
        sigma.resize(n);
        const double width = hi - lo;
        const double floor_bw = width / std::min<double>(100.0, static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double left = (i == 0) ? mu[i] - lo : mu[i] - mu[i - 1];
            const double right = (i + 1 == n) ? hi - mu[i] : mu[i + 1] - mu[i];
            sigma[i] = std::min(width, std::max({left, right, floor_bw}));
            if (!(sigma[i] > 0.0)) sigma[i] = floor_bw > 0.0 ? floor_bw : 1e-6;
        }
    }

    double log_pdf(double raw_value) const {
        const double t = transform(kind, raw_value);
        const double n_comp = static_cast<double>(mu.size()) + 1.0;
        double acc = 1.0 / (hi - lo);  // prior-shaped component
        for (std::size_t i = 0; i < mu.size(); ++i)
            acc += trunc_normal_pdf(t, mu[i], sigma[i], lo, hi);
        return std::log(acc / n_comp);
    }

    double draw(Rng& rng) const {
        const std::size_t n_comp = mu.size() + 1;
        const std::size_t pick = rng.uniform_int(n_comp);
        double t;
        if (pick == mu.size())
            t = rng.uniform(lo, hi);  // prior component
        else
            t = trunc_normal_sample(rng, mu[pick], sigma[pick], lo, hi);
        double v = untransform(kind, t);
        if (kind == Kind::QUniform || kind == Kind::QLogUniform)
            v = space::quantize(v, raw_lo, raw_hi, q);
        return std::min(raw_hi, std::max(raw_lo, v));
    }
};

/// Categorical and choice parameters: add-one smoothed counts over the
/// uniform prior's options.
struct CountDensity {
    std::vector<double> weights;  // normalized

    void fit(std::size_t n_options, const std::vector<std::size_t>& counts) {
        weights.assign(n_options, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < n_options; ++i) {
            weights[i] = static_cast<double>(counts[i]) + 1.0;
            total += weights[i];
        }
        for (auto& w : weights) w /= total;
    }

    double log_pdf(std::size_t option) const { return std::log(weights[option]); }

    std::size_t draw(Rng& rng) const {
        double u = rng.uniform();
        for (std::size_t i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return weights.size() - 1;
    }
};

std::size_t option_index(const ParamSpec& spec, const Value& v) {
    for (std::size_t i = 0; i < spec.options.size(); ++i) {
        const Value& opt = spec.options[i];
        if (opt.index() != v.index()) continue;
        if (const double* d = std::get_if<double>(&v)) {
            if (*d == std::get<double>(opt)) return i;
        } else if (std::get<std::string>(v) == std::get<std::string>(opt)) {
            return i;
        }
    }
    throw ConfigError("value not among options of '" + spec.name + "'");
}

std::size_t branch_index(const ParamSpec& spec, const std::string& label) {
    for (std::size_t i = 0; i < spec.branches.size(); ++i)
        if (spec.branches[i].label == label) return i;
    throw ConfigError("unknown branch '" + label + "' of '" + spec.name + "'");
}

}  // namespace

struct TpeDensity::Impl {
    const SearchSpace* space = nullptr;  // owned copy below
    SearchSpace space_copy;
    std::map<std::string, NumericDensity> numeric;
    std::map<std::string, CountDensity> counts;

    void build_params(const std::vector<ParamSpec>& params, const std::string& prefix,
                      const std::vector<const Trial*>& trials) {
        for (const auto& p : params) {
            const std::string path = prefix.empty() ? p.name : prefix + "/" + p.name;
            if (p.kind == Kind::Choice) {
                std::vector<std::size_t> tally(p.branches.size(), 0);
                for (const Trial* t : trials) {
                    auto it = t->config.assignments.find(path);
                    if (it == t->config.assignments.end()) continue;  // inactive in trial
                    if (const std::string* s = std::get_if<std::string>(&it->second))
                        ++tally[branch_index(p, *s)];
                }
                CountDensity d;
                d.fit(p.branches.size(), tally);
                counts[path] = std::move(d);
                for (const auto& b : p.branches)
                    build_params(b.params, path + "/" + b.label, trials);
            } else if (p.kind == Kind::Categorical) {
                std::vector<std::size_t> tally(p.options.size(), 0);
                for (const Trial* t : trials) {
                    auto it = t->config.assignments.find(path);
                    if (it == t->config.assignments.end()) continue;
                    ++tally[option_index(p, it->second)];
                }
                CountDensity d;
                d.fit(p.options.size(), tally);
                counts[path] = std::move(d);
            } else {
                std::vector<double> obs;
                for (const Trial* t : trials) {
                    auto it = t->config.assignments.find(path);
                    if (it == t->config.assignments.end()) continue;
                    if (const double* d = std::get_if<double>(&it->second)) obs.push_back(*d);
                }
                NumericDensity d;
                d.fit(p, std::move(obs));
                numeric[path] = std::move(d);
            }
        }
    }

    void sample_params(const std::vector<ParamSpec>& params, const std::string& prefix,
                       Rng& rng, Configuration& out) const {
        for (const auto& p : params) {
            const std::string path = prefix.empty() ? p.name : prefix + "/" + p.name;
            if (p.kind == Kind::Choice) {
                const std::size_t pick = counts.at(path).draw(rng);
                const auto& b = p.branches[pick];
                out.assignments[path] = b.label;
                sample_params(b.params, path + "/" + b.label, rng, out);
            } else if (p.kind == Kind::Categorical) {
                out.assignments[path] = p.options[counts.at(path).draw(rng)];
            } else {
                out.assignments[path] = numeric.at(path).draw(rng);
            }
        }
    }

    double ll_params(const std::vector<ParamSpec>& params, const std::string& prefix,
                     const Configuration& cfg) const {
        double ll = 0.0;
        for (const auto& p : params) {
            const std::string path = prefix.empty() ? p.name : prefix + "/" + p.name;
            auto it = cfg.assignments.find(path);
            if (it == cfg.assignments.end())
                throw ConfigError("configuration missing active parameter '" + path + "'");
            if (p.kind == Kind::Choice) {
                const std::string& label = std::get<std::string>(it->second);
                const std::size_t bi = branch_index(p, label);
                ll += counts.at(path).log_pdf(bi);
                ll += ll_params(p.branches[bi].params, path + "/" + label, cfg);
            } else if (p.kind == Kind::Categorical) {
                ll += counts.at(path).log_pdf(option_index(p, it->second));
            } else {
                ll += numeric.at(path).log_pdf(std::get<double>(it->second));
            }
        }
        return ll;
    }
};

TpeDensity::TpeDensity() = default;
TpeDensity::~TpeDensity() = default;

TpeDensity TpeDensity::build(const SearchSpace& space, const std::vector<const Trial*>& trials) {
    auto impl = std::make_shared<Impl>();
    impl->space_copy = space;
    impl->space = &impl->space_copy;
    impl->build_params(space.root(), "", trials);
    TpeDensity d;
    d.impl_ = std::move(impl);
    return d;
}

Configuration TpeDensity::sample(Rng& rng) const {
    Configuration cfg;
    cfg.space_id = impl_->space->id();
    impl_->sample_params(impl_->space->root(), "", rng, cfg);
    return cfg;
}

double TpeDensity::log_likelihood(const Configuration& config) const {
    return impl_->ll_params(impl_->space->root(), "", config);
}

double tpe_score(const Configuration& candidate, const TpeDensity& good, const TpeDensity& bad) {
    const double lr = good.log_likelihood(candidate) - bad.log_likelihood(candidate);
    return std::exp(std::min(lr, 700.0));
}

// ---------------------------------------------------------------------------
// suggest

Configuration suggest(const TrialStore& store, const SearchSpace& space, const TpeParams& params,
                      Strategy strategy, Rng& rng) {
    if (params.n_candidates < 1) throw ConfigError("tpe n_candidates must be >= 1");
    const std::size_t completed = store.completed_count();
    if (strategy == Strategy::Random ||
        completed < static_cast<std::size_t>(params.n_startup) || completed == 0) {
        return space.sample(rng);
    }
    auto [good, bad] = tpe_split(store, params.gamma);
    const TpeDensity good_d = TpeDensity::build(space, good);
    const TpeDensity bad_d = TpeDensity::build(space, bad);
    Configuration best;
    double best_lr = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < params.n_candidates; ++c) {
        Configuration cand = good_d.sample(rng);
        const double lr = good_d.log_likelihood(cand) - bad_d.log_likelihood(cand);
        if (lr > best_lr) {
            best_lr = lr;
            best = std::move(cand);
        }
    }
    return best;
}

}  // namespace nb::opt
