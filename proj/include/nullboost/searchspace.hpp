#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nullboost/common.hpp"

namespace nb::space {

using json = nlohmann::json;

/// A hyperparameter value: numeric kinds produce doubles, categorical and
/// choice parameters produce strings (the option / branch label).
using Value = std::variant<double, std::string>;

enum class Kind {
    Uniform,
    LogUniform,
    QUniform,
    QLogUniform,
    Categorical,
    Choice,
};

std::string kind_name(Kind k);

struct ParamSpec;

/// One branch of a choice parameter; its params are active only when the
/// branch is selected.
struct Branch {
    std::string label;
    std::vector<ParamSpec> params;
};

struct ParamSpec {
    std::string name;
    Kind kind = Kind::Uniform;
    double lo = 0.0;
    double hi = 0.0;
    double q = 0.0;                   // quantized kinds only
    std::vector<Value> options;       // categorical
    std::vector<Branch> branches;     // choice
};

/// One concrete assignment of active parameters. Keys are full tree paths:
/// a root parameter "x" has path "x"; a parameter "y" under branch "on" of
/// choice "warp" has path "warp/on/y". The choice itself is assigned its
/// selected branch label at its own path.
struct Configuration {
    std::map<std::string, Value> assignments;
    std::string space_id;

    bool has(std::string_view name) const;
    /// Look up by full path, or by bare parameter name when that name is
    /// unique among the assignments (the shipped spaces use globally unique
    /// names). Throws ConfigError on a missing or ambiguous name.
    const Value& get(std::string_view name) const;
    double num(std::string_view name) const;
    std::string str(std::string_view name) const;

    json to_json() const;  // assignments object only
    static Configuration from_json(const json& assignments, std::string space_id = "");
};

/// Tree-structured conditional hyperparameter space. Immutable after
/// construction; safe to share across threads.
class SearchSpace {
  public:
    /// Validates and builds a space from its declarative JSON description.
    /// Rejects duplicate names along a scope chain, empty branches/options,
    /// inverted ranges and non-positive quantization steps, naming the
    /// offending node.
    static SearchSpace define(const json& spec);
    static SearchSpace from_file(const std::string& path);

    const std::vector<ParamSpec>& root() const { return root_; }
    const std::string& id() const { return id_; }
    const std::string& name() const { return name_; }

    /// Depth-first prior sample: a branch's parameters are drawn only after
    /// its choice is drawn. Total over valid spaces.
    Configuration sample(Rng& rng) const;

    /// Empty result means the configuration satisfies every invariant:
    /// a value for every active parameter, no value for any inactive one,
    /// and every value within its spec's constraints.
    std::vector<std::string> validate(const Configuration& config) const;

    json to_json() const;

  private:
    std::vector<ParamSpec> root_;
    std::string id_;
    std::string name_;
};

/// True if `v` is a fixed point of the quantization rule
/// clamp(round(v / q) * q, lo, hi).
bool quantization_ok(double v, double lo, double hi, double q);

double quantize(double v, double lo, double hi, double q);

}  // namespace nb::space
