#include "nullboost/searchspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace nb {

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace nb

namespace nb::space {

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::Uniform: return "uniform";
        case Kind::LogUniform: return "loguniform";
        case Kind::QUniform: return "quniform";
        case Kind::QLogUniform: return "qloguniform";
        case Kind::Categorical: return "categorical";
        case Kind::Choice: return "choice";
    }
    return "?";
}

static Kind kind_from_name(const std::string& s, const std::string& node) {
    if (s == "uniform") return Kind::Uniform;
    if (s == "loguniform") return Kind::LogUniform;
    if (s == "quniform" || s == "quantized-uniform") return Kind::QUniform;
    if (s == "qloguniform" || s == "quantized-loguniform") return Kind::QLogUniform;
    if (s == "categorical") return Kind::Categorical;
    if (s == "choice") return Kind::Choice;
    throw ConfigError("malformed-spec at '" + node + "': unknown kind '" + s + "'");
}

double quantize(double v, double lo, double hi, double q) {
    double snapped = std::round(v / q) * q;
    return std::min(hi, std::max(lo, snapped));
}

bool quantization_ok(double v, double lo, double hi, double q) {
    return std::abs(v - quantize(v, lo, hi, q)) <= 1e-9 * std::max(1.0, std::abs(v));
}

// ---------------------------------------------------------------------------
// Configuration

bool Configuration::has(std::string_view name) const {
    if (assignments.count(std::string(name))) return true;
    int hits = 0;
    for (const auto& [path, _] : assignments) {
        auto pos = path.rfind('/');
        std::string_view leaf = (pos == std::string::npos)
                                    ? std::string_view(path)
                                    : std::string_view(path).substr(pos + 1);
        if (leaf == name) ++hits;
    }
    return hits == 1;
}

const Value& Configuration::get(std::string_view name) const {
    auto it = assignments.find(std::string(name));
    if (it != assignments.end()) return it->second;
    const Value* found = nullptr;
    int hits = 0;
    for (const auto& [path, v] : assignments) {
        auto pos = path.rfind('/');
        std::string_view leaf = (pos == std::string::npos)
                                    ? std::string_view(path)
                                    : std::string_view(path).substr(pos + 1);
        if (leaf == name) {
            ++hits;
            found = &v;
        }
    }
    if (hits == 1) return *found;
    throw ConfigError(hits == 0 ? "no assignment for parameter '" + std::string(name) + "'"
                                : "ambiguous parameter name '" + std::string(name) + "'");
}

double Configuration::num(std::string_view name) const {
    const Value& v = get(name);
    if (const double* d = std::get_if<double>(&v)) return *d;
    throw ConfigError("parameter '" + std::string(name) + "' is not numeric");
}

std::string Configuration::str(std::string_view name) const {
    const Value& v = get(name);
    if (const std::string* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError("parameter '" + std::string(name) + "' is not categorical");
}

json Configuration::to_json() const {
    json out = json::object();
    for (const auto& [path, v] : assignments) {
        if (const double* d = std::get_if<double>(&v))
            out[path] = *d;
        else
            out[path] = std::get<std::string>(v);
    }
    return out;
}

Configuration Configuration::from_json(const json& assignments, std::string space_id) {
    Configuration cfg;
    cfg.space_id = std::move(space_id);
    if (!assignments.is_object())
        throw ConfigError("configuration assignments must be a JSON object");
    for (auto it = assignments.begin(); it != assignments.end(); ++it) {
        if (it.value().is_string())
            cfg.assignments[it.key()] = it.value().get<std::string>();
        else if (it.value().is_number())
            cfg.assignments[it.key()] = it.value().get<double>();
        else
            throw ConfigError("configuration value for '" + it.key() +
                              "' must be a number or string");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Parsing and validation of the declarative space description.

static ParamSpec parse_param(const json& node, const std::string& parent_path,
                             std::set<std::string> scope_names);

static std::vector<ParamSpec> parse_params(const json& arr, const std::string& parent_path,
                                           const std::set<std::string>& inherited) {
    if (!arr.is_array())
        throw ConfigError("malformed-spec at '" + parent_path + "': params must be an array");
    std::vector<ParamSpec> out;
    std::set<std::string> scope = inherited;
    for (const auto& node : arr) {
        ParamSpec p = parse_param(node, parent_path, scope);
        if (!scope.insert(p.name).second)
            throw ConfigError("malformed-spec at '" + parent_path +
                              "': duplicate parameter name '" + p.name + "' on one path");
        out.push_back(std::move(p));
    }
    return out;
}

static ParamSpec parse_param(const json& node, const std::string& parent_path,
                             std::set<std::string> scope_names) {
    if (!node.is_object() || !node.contains("name") || !node["name"].is_string())
        throw ConfigError("malformed-spec at '" + parent_path + "': node missing string 'name'");
    ParamSpec p;
    p.name = node["name"].get<std::string>();
    const std::string path = parent_path.empty() ? p.name : parent_path + "/" + p.name;
    if (p.name.empty() || p.name.find('/') != std::string::npos)
        throw ConfigError("malformed-spec at '" + path + "': invalid name");
    if (scope_names.count(p.name))
        throw ConfigError("malformed-spec at '" + path + "': duplicate parameter name '" +
                          p.name + "' on one path");
    if (!node.contains("kind") || !node["kind"].is_string())
        throw ConfigError("malformed-spec at '" + path + "': missing 'kind'");
    p.kind = kind_from_name(node["kind"].get<std::string>(), path);

    auto need_num = [&](const char* key) -> double {
        if (!node.contains(key) || !node[key].is_number())
            throw ConfigError("malformed-spec at '" + path + "': missing numeric '" +
                              std::string(key) + "'");
        return node[key].get<double>();
    };

    switch (p.kind) {
        case Kind::Uniform:
        case Kind::LogUniform:
        case Kind::QUniform:
        case Kind::QLogUniform: {
            p.lo = need_num("lo");
            p.hi = need_num("hi");
            if (!(p.lo < p.hi))
                throw ConfigError("malformed-spec at '" + path + "': requires lo < hi");
            if (p.kind == Kind::LogUniform || p.kind == Kind::QLogUniform) {
                if (p.lo <= 0.0)
                    throw ConfigError("malformed-spec at '" + path +
                                      "': log-uniform requires lo > 0");
            }
            if (p.kind == Kind::QUniform || p.kind == Kind::QLogUniform) {
                p.q = need_num("q");
                if (!(p.q > 0.0))
                    throw ConfigError("malformed-spec at '" + path + "': requires q > 0");
            }
            break;
        }
        case Kind::Categorical: {
            if (!node.contains("options") || !node["options"].is_array() ||
                node["options"].empty())
                throw ConfigError("malformed-spec at '" + path +
                                  "': categorical requires >= 1 option");
            for (const auto& opt : node["options"]) {
                if (opt.is_string())
                    p.options.emplace_back(opt.get<std::string>());
                else if (opt.is_number())
                    p.options.emplace_back(opt.get<double>());
                else
                    throw ConfigError("malformed-spec at '" + path +
                                      "': options must be numbers or strings");
            }
            break;
        }
        case Kind::Choice: {
            if (!node.contains("branches") || !node["branches"].is_array() ||
                node["branches"].empty())
                throw ConfigError("malformed-spec at '" + path +
                                  "': choice requires >= 1 branch");
            scope_names.insert(p.name);
            std::set<std::string> labels;
            for (const auto& br : node["branches"]) {
                if (!br.is_object() || !br.contains("label") || !br["label"].is_string())
                    throw ConfigError("malformed-spec at '" + path +
                                      "': branch missing string 'label'");
                Branch b;
                b.label = br["label"].get<std::string>();
                if (!labels.insert(b.label).second)
                    throw ConfigError("malformed-spec at '" + path + "': duplicate branch '" +
                                      b.label + "'");
                const std::string branch_path = path + "/" + b.label;
                b.params = br.contains("params")
                               ? parse_params(br["params"], branch_path, scope_names)
                               : std::vector<ParamSpec>{};
                p.branches.push_back(std::move(b));
            }
            break;
        }
    }
    return p;
}

static json param_to_json(const ParamSpec& p) {
    json out;
    out["name"] = p.name;
    out["kind"] = kind_name(p.kind);
    switch (p.kind) {
        case Kind::Uniform:
        case Kind::LogUniform:
            out["lo"] = p.lo;
            out["hi"] = p.hi;
            break;
        case Kind::QUniform:
        case Kind::QLogUniform:
            out["lo"] = p.lo;
            out["hi"] = p.hi;
            out["q"] = p.q;
            break;
        case Kind::Categorical: {
            json opts = json::array();
            for (const auto& o : p.options) {
                if (const double* d = std::get_if<double>(&o))
                    opts.push_back(*d);
                else
                    opts.push_back(std::get<std::string>(o));
            }
            out["options"] = std::move(opts);
            break;
        }
        case Kind::Choice: {
            json brs = json::array();
            for (const auto& b : p.branches) {
                json br;
                br["label"] = b.label;
                json ps = json::array();
                for (const auto& sub : b.params) ps.push_back(param_to_json(sub));
                br["params"] = std::move(ps);
                brs.push_back(std::move(br));
            }
            out["branches"] = std::move(brs);
            break;
        }
    }
    return out;
}

SearchSpace SearchSpace::define(const json& spec) {
    if (!spec.is_object() || !spec.contains("params"))
        throw ConfigError("malformed-spec: top level must be an object with 'params'");
    SearchSpace s;
    s.root_ = parse_params(spec["params"], "", {});
    s.name_ = spec.value("name", "");
    s.id_ = hex64(fnv1a(s.to_json().dump()));
    return s;
}

SearchSpace SearchSpace::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open space file '" + path + "'");
    json spec;
    try {
        in >> spec;
    } catch (const json::exception& e) {
        throw ConfigError("space file '" + path + "' is not valid JSON: " + e.what());
    }
    return define(spec);
}

json SearchSpace::to_json() const {
    json out;
    if (!name_.empty()) out["name"] = name_;
    json ps = json::array();
    for (const auto& p : root_) ps.push_back(param_to_json(p));
    out["params"] = std::move(ps);
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

static Value sample_leaf(const ParamSpec& p, Rng& rng) {
    switch (p.kind) {
        case Kind::Uniform:
            return rng.uniform(p.lo, p.hi);
        case Kind::LogUniform:
            return std::exp(rng.uniform(std::log(p.lo), std::log(p.hi)));
        case Kind::QUniform:
            return quantize(rng.uniform(p.lo, p.hi), p.lo, p.hi, p.q);
        case Kind::QLogUniform:
            return quantize(std::exp(rng.uniform(std::log(p.lo), std::log(p.hi))), p.lo, p.hi,
                            p.q);
        case Kind::Categorical:
            return p.options[rng.uniform_int(p.options.size())];
        case Kind::Choice:
            break;  // handled by the tree walk
    }
    throw std::logic_error("sample_leaf on choice");
}

static void sample_params(const std::vector<ParamSpec>& params, const std::string& prefix,
                          Rng& rng, Configuration& out) {
    for (const auto& p : params) {
        const std::string path = prefix.empty() ? p.name : prefix + "/" + p.name;
        if (p.kind == Kind::Choice) {
            const std::size_t pick = rng.uniform_int(p.branches.size());
            const Branch& b = p.branches[pick];
            out.assignments[path] = b.label;
            sample_params(b.params, path + "/" + b.label, rng, out);
        } else {
            out.assignments[path] = sample_leaf(p, rng);
        }
    }
}

Configuration SearchSpace::sample(Rng& rng) const {
    Configuration cfg;
    cfg.space_id = id_;
    sample_params(root_, "", rng, cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct Validator {
    const Configuration& cfg;
    std::vector<std::string> violations;
    std::set<std::string> active_paths;

    void check_value(const ParamSpec& p, const std::string& path, const Value& v) {
        switch (p.kind) {
            case Kind::Uniform:
            case Kind::LogUniform: {
                const double* d = std::get_if<double>(&v);
                if (!d) {
                    violations.push_back("wrong type: " + path);
                    return;
                }
                if (*d < p.lo || *d > p.hi) violations.push_back("out of range: " + path);
                break;
            }
            case Kind::QUniform:
            case Kind::QLogUniform: {
                const double* d = std::get_if<double>(&v);
                if (!d) {
                    violations.push_back("wrong type: " + path);
                    return;
                }
                if (*d < p.lo || *d > p.hi)
                    violations.push_back("out of range: " + path);
                else if (!quantization_ok(*d, p.lo, p.hi, p.q))
                    violations.push_back("not quantized: " + path);
                break;
            }
            case Kind::Categorical: {
                bool found = false;
                for (const auto& opt : p.options) {
                    if (opt.index() != v.index()) continue;
                    if (const double* d = std::get_if<double>(&v)) {
                        if (*d == std::get<double>(opt)) found = true;
                    } else if (std::get<std::string>(v) == std::get<std::string>(opt)) {
                        found = true;
                    }
                    if (found) break;
                }
                if (!found) violations.push_back("unknown option: " + path);
                break;
            }
            case Kind::Choice:
                break;
        }
    }

    void walk(const std::vector<ParamSpec>& params, const std::string& prefix) {
        for (const auto& p : params) {
            const std::string path = prefix.empty() ? p.name : prefix + "/" + p.name;
            active_paths.insert(path);
            auto it = cfg.assignments.find(path);
            if (p.kind == Kind::Choice) {
                if (it == cfg.assignments.end()) {
                    violations.push_back("missing active parameter: " + path);
                    continue;  // children unknown; their assignments flag as inactive
                }
                const std::string* label = std::get_if<std::string>(&it->second);
                const Branch* selected = nullptr;
                if (label) {
                    for (const auto& b : p.branches)
                        if (b.label == *label) selected = &b;
                }
                if (!selected) {
                    violations.push_back("unknown branch: " + path);
                    continue;
                }
                walk(selected->params, path + "/" + selected->label);
            } else {
                if (it == cfg.assignments.end()) {
                    violations.push_back("missing active parameter: " + path);
                    continue;
                }
                check_value(p, path, it->second);
            }
        }
    }
};

}  // namespace

std::vector<std::string> SearchSpace::validate(const Configuration& config) const {
    Validator v{config, {}, {}};
    v.walk(root_, "");
    for (const auto& [path, _] : config.assignments) {
        if (!v.active_paths.count(path))
            v.violations.push_back("inactive parameter assigned: " + path);
    }
    std::sort(v.violations.begin(), v.violations.end());
    return v.violations;
}

}  // namespace nb::space
