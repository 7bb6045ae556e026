#include "npi/io.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace npi {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_ws(const std::string& s)
{
    std::istringstream ss(s);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) {
        out.push_back(tok);
    }
    return out;
}

double parse_double(const std::string& tok, int line)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used == tok.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("expected a number, got '" + tok + "'", line);
}

long long parse_integer(const std::string& tok, int line)
{
    try {
        std::size_t used = 0;
        const long long v = std::stoll(tok, &used);
        if (used == tok.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("expected an integer, got '" + tok + "'", line);
}

std::uint64_t parse_u64(const std::string& tok, int line)
{
    try {
        std::size_t used = 0;
        if (!tok.empty() && tok[0] != '-') {
            const unsigned long long v = std::stoull(tok, &used);
            if (used == tok.size()) {
                return v;
            }
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("expected a non-negative integer, got '" + tok + "'", line);
}

// ------------------------------------------------------------ entry views

double as_double(const IniEntry& e) { return parse_double(e.value, e.line); }

int as_int(const IniEntry& e)
{
    const long long v = parse_integer(e.value, e.line);
    if (v < INT32_MIN || v > INT32_MAX) {
        throw ConfigError(e.key + ": value out of range", e.line);
    }
    return static_cast<int>(v);
}

bool as_bool(const IniEntry& e)
{
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ConfigError(e.key + ": expected true or false, got '" + e.value + "'", e.line);
}

std::vector<int> as_int_list(const IniEntry& e)
{
    std::vector<int> out;
    for (const auto& tok : split_ws(e.value)) {
        out.push_back(static_cast<int>(parse_integer(tok, e.line)));
    }
    return out;
}

Vec as_vec(const IniEntry& e)
{
    const auto toks = split_ws(e.value);
    Vec v(static_cast<Index>(toks.size()));
    for (std::size_t i = 0; i < toks.size(); ++i) {
        v[static_cast<Index>(i)] = parse_double(toks[i], e.line);
    }
    return v;
}

// "0 1 2 | 3 4"
std::vector<std::vector<Index>> as_groups(const IniEntry& e)
{
    std::vector<std::vector<Index>> out(1);
    for (const auto& tok : split_ws(e.value)) {
        if (tok == "|") {
            out.emplace_back();
        } else {
            out.back().push_back(static_cast<Index>(parse_integer(tok, e.line)));
        }
    }
    return out;
}

using Handlers = std::map<std::string, std::function<void(const IniEntry&)>>;

void dispatch(const IniSection& sec, const Handlers& h)
{
    for (const auto& e : sec.entries) {
        const auto it = h.find(e.key);
        if (it == h.end()) {
            throw ConfigError("unknown key '" + e.key + "' in [" + sec.name + "]", e.line);
        }
        it->second(e);
    }
}

std::string join(const std::vector<int>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? " " : "") + std::to_string(v[i]);
    }
    return s;
}

std::string join(const Vec& v)
{
    std::string s;
    for (Index i = 0; i < v.size(); ++i) {
        s += (i ? " " : "") + format_double(v[i]);
    }
    return s;
}

std::string to_string(Integrator k) { return k == Integrator::euler ? "euler" : "rk4"; }

std::string hex64(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ------------------------------------------------------------------ INI

std::vector<IniSection> parse_ini(std::istream& is)
{
    std::vector<IniSection> out(1);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const auto cut = raw.find_first_of("#;");
        const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("malformed section header '" + line + "'", lineno);
            }
            const std::string name = trim(line.substr(1, line.size() - 2));
            for (const auto& s : out) {
                if (s.name == name) {
                    throw ConfigError("duplicate section [" + name + "]", lineno);
                }
            }
            out.push_back(IniSection{name, lineno, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected 'key = value', got '" + line + "'", lineno);
        }
        IniEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        if (e.key.empty()) {
            throw ConfigError("empty key", lineno);
        }
        if (e.value.empty()) {
            throw ConfigError("empty value for '" + e.key + "'", lineno);
        }
        out.back().entries.push_back(std::move(e));
    }
    return out;
}

// ----------------------------------------------------------- experiments

ExperimentConfig parse_experiment(std::istream& is, const std::string& source_dir)
{
    const auto sections = parse_ini(is);
    ExperimentConfig c;
    c.source_dir = source_dir;

    // The plant kind decides scenario defaults, so read it first.
    for (const auto& sec : sections) {
        if (sec.name == "plant") {
            for (const auto& e : sec.entries) {
                if (e.key == "kind") {
                    if (e.value != "platoon" && e.value != "power") {
                        throw ConfigError("plant kind must be platoon or power", e.line);
                    }
                    c.plant.kind = e.value;
                }
            }
        }
    }
    c.scenarios = c.plant.kind == "power" ? default_scenarios(PowerModel{}) : default_scenarios(PlatoonModel{});

    auto positive = [](const IniEntry& e, double v) {
        if (!(v > 0)) {
            throw ConfigError(e.key + " must be positive", e.line);
        }
        return v;
    };
    auto at_least = [](const IniEntry& e, int v, int lo) {
        if (v < lo) {
            throw ConfigError(e.key + " must be at least " + std::to_string(lo), e.line);
        }
        return v;
    };
    bool custom_groups = false;
    int groups_line = 0;

    const std::map<std::string, Handlers> table = {
        {"", {}},
        {"experiment",
         {{"name", [&](const IniEntry& e) { c.name = e.value; }},
          {"seed", [&](const IniEntry& e) { c.seed = parse_u64(e.value, e.line); }},
          {"out", [&](const IniEntry& e) { c.out_dir = e.value; }}}},
        {"plant",
         {{"kind", [](const IniEntry&) {}},
          {"nodes", [&](const IniEntry& e) { c.plant.nodes = at_least(e, as_int(e), 2); }},
          {"seed", [&](const IniEntry& e) { c.plant.seed = parse_u64(e.value, e.line); }},
          {"file", [&](const IniEntry& e) { c.plant.file = e.value; }}}},
        {"controller",
         {{"kind", [&](const IniEntry& e) {
               try {
                   c.controller.kind = parse_controller_kind(e.value);
               } catch (const ConfigError& err) {
                   throw ConfigError(err.what(), e.line);
               }
           }},
          {"partition", [&](const IniEntry& e) {
               try {
                   c.controller.partition = parse_partition_kind(e.value);
               } catch (const ConfigError& err) {
                   throw ConfigError(err.what(), e.line);
               }
           }},
          {"groups", [&](const IniEntry& e) {
               c.controller.groups = as_groups(e);
               custom_groups = true;
               groups_line = e.line;
           }},
          {"hidden", [&](const IniEntry& e) {
               c.controller.hidden = as_int_list(e);
               for (int w : c.controller.hidden) {
                   at_least(e, w, 1);
               }
           }},
          {"input_scale", [&](const IniEntry& e) { c.controller.init.input_scale = as_double(e); }},
          {"hidden_scale", [&](const IniEntry& e) { c.controller.init.hidden_scale = positive(e, as_double(e)); }},
          {"bias_scale", [&](const IniEntry& e) { c.controller.init.bias_scale = as_double(e); }},
          {"beta", [&](const IniEntry& e) { c.controller.init.beta = positive(e, as_double(e)); }},
          {"mirrored", [&](const IniEntry& e) { c.controller.init.mirrored = as_bool(e); }},
          {"linear_gain", [&](const IniEntry& e) { c.controller.linear_gain = positive(e, as_double(e)); }},
          {"unconstrained", [&](const IniEntry& e) { c.controller.unconstrained = as_bool(e); }}}},
        {"rollout",
         {{"dt", [&](const IniEntry& e) { c.rollout.dt = positive(e, as_double(e)); }},
          {"steps", [&](const IniEntry& e) { c.rollout.steps = at_least(e, as_int(e), 1); }},
          {"stride", [&](const IniEntry& e) { c.rollout.stride = at_least(e, as_int(e), 1); }},
          {"integrator", [&](const IniEntry& e) {
               if (e.value == "euler") {
                   c.rollout.integrator = Integrator::euler;
               } else if (e.value == "rk4") {
                   c.rollout.integrator = Integrator::rk4;
               } else {
                   throw ConfigError("integrator must be euler or rk4", e.line);
               }
           }}}},
        {"scenarios",
         {{"setpoint_lo", [&](const IniEntry& e) { c.scenarios.setpoint_lo = as_double(e); }},
          {"setpoint_hi", [&](const IniEntry& e) { c.scenarios.setpoint_hi = as_double(e); }},
          {"init_lo", [&](const IniEntry& e) { c.scenarios.init_lo = as_double(e); }},
          {"init_hi", [&](const IniEntry& e) { c.scenarios.init_hi = as_double(e); }},
          {"max_disturbed", [&](const IniEntry& e) { c.scenarios.max_disturbed = at_least(e, as_int(e), 0); }},
          {"disturbance_size", [&](const IniEntry& e) { c.scenarios.disturbance_size = as_double(e); }},
          {"disturbance_time", [&](const IniEntry& e) { c.scenarios.disturbance_time = as_double(e); }}}},
        {"train",
         {{"epochs", [&](const IniEntry& e) { c.train.epochs = at_least(e, as_int(e), 1); }},
          {"batch", [&](const IniEntry& e) { c.train.batch = at_least(e, as_int(e), 1); }},
          {"lr", [&](const IniEntry& e) { c.train.adam.lr = positive(e, as_double(e)); }},
          {"decay_base", [&](const IniEntry& e) { c.train.adam.decay_base = positive(e, as_double(e)); }},
          {"decay_period", [&](const IniEntry& e) { c.train.adam.decay_period = at_least(e, as_int(e), 1); }},
          {"threads", [&](const IniEntry& e) { c.train.threads = at_least(e, as_int(e), 0); }},
          {"checkpoint_every", [&](const IniEntry& e) { c.train.checkpoint_every = at_least(e, as_int(e), 0); }}}},
        {"loss",
         {{"kind", [&](const IniEntry& e) {
               if (e.value == "default") {
                   c.default_loss = true;
               } else if (e.value == "custom") {
                   c.default_loss = false;
                   c.loss.kind = LossKind::custom;
               } else {
                   throw ConfigError("loss kind must be default or custom", e.line);
               }
           }},
          {"nadir_weight", [&](const IniEntry& e) { c.loss.nadir_weight = as_double(e); }},
          {"l1_weight", [&](const IniEntry& e) { c.loss.l1_weight = as_double(e); }},
          {"control_weight", [&](const IniEntry& e) { c.loss.control_weight = as_double(e); }},
          {"node_weights", [&](const IniEntry& e) { c.loss.node_weights = as_vec(e); }}}},
        {"certify",
         {{"rollouts", [&](const IniEntry& e) { c.certify.rollouts = at_least(e, as_int(e), 0); }},
          {"settle_time", [&](const IniEntry& e) { c.certify.settle_time = positive(e, as_double(e)); }},
          {"tracking_tol", [&](const IniEntry& e) { c.certify.tracking_tol = positive(e, as_double(e)); }},
          {"eip_samples", [&](const IniEntry& e) { c.certify.eip_samples = at_least(e, as_int(e), 0); }},
          {"monotonicity_pairs",
           [&](const IniEntry& e) { c.certify.monotonicity_pairs = at_least(e, as_int(e), 0); }}}},
        {"evaluate",
         {{"horizon", [&](const IniEntry& e) { c.eval_horizon = positive(e, as_double(e)); }},
          {"rollouts", [&](const IniEntry& e) { c.test_rollouts = at_least(e, as_int(e), 1); }},
          {"seed", [&](const IniEntry& e) { c.test_seed = parse_u64(e.value, e.line); }}}},
    };

    for (const auto& sec : sections) {
        const auto it = table.find(sec.name);
        if (it == table.end()) {
            throw ConfigError("unknown section [" + sec.name + "]", sec.line);
        }
        dispatch(sec, it->second);
    }
    if (custom_groups && c.controller.partition != PartitionKind::custom) {
        throw ConfigError("groups requires partition = groups", groups_line);
    }
    if (c.controller.partition == PartitionKind::custom) {
        try {
            make_partition(c.controller, c.plant.nodes);
        } catch (const ConfigError& err) {
            throw ConfigError(std::string("groups: ") + err.what(), groups_line);
        }
    }
    if (!c.default_loss) {
        validate(c.loss, c.plant.nodes);
    }
    c.train.seed = c.seed;
    c.train.rollout = c.rollout;
    c.train.scenarios = c.scenarios;
    c.certify.seed = c.seed;
    c.certify.threads = c.train.threads;
    return c;
}

ExperimentConfig load_experiment(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    try {
        const fs::path dir = fs::path(path).parent_path();
        return parse_experiment(in, dir.empty() ? "." : dir.string());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string canonical_text(const ExperimentConfig& c)
{
    std::ostringstream os;
    auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
    auto num = [&](const char* k, double v) { kv(k, format_double(v)); };
    os << "[experiment]\n";
    kv("name", c.name);
    kv("seed", std::to_string(c.seed));
    kv("out", c.out_dir);
    os << "[plant]\n";
    kv("kind", c.plant.kind);
    kv("nodes", std::to_string(c.plant.nodes));
    kv("seed", std::to_string(c.plant.seed));
    if (!c.plant.file.empty()) {
        kv("file", c.plant.file);
    }
    os << "[controller]\n";
    kv("kind", to_string(c.controller.kind));
    kv("partition", to_string(c.controller.partition));
    if (c.controller.partition == PartitionKind::custom) {
        std::string g;
        for (std::size_t i = 0; i < c.controller.groups.size(); ++i) {
            g += i ? " |" : "";
            for (Index v : c.controller.groups[i]) {
                g += (g.empty() ? "" : " ") + std::to_string(v);
            }
        }
        kv("groups", g);
    }
    kv("hidden", join(c.controller.hidden));
    num("input_scale", c.controller.init.input_scale);
    num("hidden_scale", c.controller.init.hidden_scale);
    num("bias_scale", c.controller.init.bias_scale);
    num("beta", c.controller.init.beta);
    kv("mirrored", c.controller.init.mirrored ? "true" : "false");
    num("linear_gain", c.controller.linear_gain);
    kv("unconstrained", c.controller.unconstrained ? "true" : "false");
    os << "[rollout]\n";
    num("dt", c.rollout.dt);
    kv("steps", std::to_string(c.rollout.steps));
    kv("stride", std::to_string(c.rollout.stride));
    kv("integrator", to_string(c.rollout.integrator));
    os << "[scenarios]\n";
    num("setpoint_lo", c.scenarios.setpoint_lo);
    num("setpoint_hi", c.scenarios.setpoint_hi);
    num("init_lo", c.scenarios.init_lo);
    num("init_hi", c.scenarios.init_hi);
    kv("max_disturbed", std::to_string(c.scenarios.max_disturbed));
    num("disturbance_size", c.scenarios.disturbance_size);
    num("disturbance_time", c.scenarios.disturbance_time);
    os << "[train]\n";
    kv("epochs", std::to_string(c.train.epochs));
    kv("batch", std::to_string(c.train.batch));
    num("lr", c.train.adam.lr);
    num("decay_base", c.train.adam.decay_base);
    kv("decay_period", std::to_string(c.train.adam.decay_period));
    kv("checkpoint_every", std::to_string(c.train.checkpoint_every));
    // threads only changes scheduling, never results, so it stays out of the hash
    os << "[loss]\n";
    kv("kind", c.default_loss ? "default" : "custom");
    if (!c.default_loss) {
        num("nadir_weight", c.loss.nadir_weight);
        num("l1_weight", c.loss.l1_weight);
        num("control_weight", c.loss.control_weight);
        if (c.loss.node_weights.size() > 0) {
            kv("node_weights", join(c.loss.node_weights));
        }
    }
    os << "[certify]\n";
    kv("rollouts", std::to_string(c.certify.rollouts));
    num("settle_time", c.certify.settle_time);
    num("tracking_tol", c.certify.tracking_tol);
    kv("eip_samples", std::to_string(c.certify.eip_samples));
    kv("monotonicity_pairs", std::to_string(c.certify.monotonicity_pairs));
    os << "[evaluate]\n";
    num("horizon", c.eval_horizon);
    kv("rollouts", std::to_string(c.test_rollouts));
    kv("seed", std::to_string(c.test_seed));
    return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(canonical_text(cfg))); }

std::string resolve_path(const ExperimentConfig& cfg, const std::string& path)
{
    const fs::path p(path);
    if (p.is_absolute() || cfg.source_dir.empty()) {
        return p.string();
    }
    return (fs::path(cfg.source_dir) / p).lexically_normal().string();
}

PlantModel make_plant(const ExperimentConfig& cfg)
{
    PlantModel model;
    if (!cfg.plant.file.empty()) {
        model = load_plant(resolve_path(cfg, cfg.plant.file));
        const bool power = std::holds_alternative<PowerModel>(model);
        if (power != (cfg.plant.kind == "power")) {
            throw ConfigError("plant file kind does not match [plant] kind = " + cfg.plant.kind);
        }
        if (plant_dim(model) != cfg.plant.nodes) {
            throw ConfigError("plant file has " + std::to_string(plant_dim(model)) + " nodes, config says " +
                              std::to_string(cfg.plant.nodes));
        }
    } else if (cfg.plant.kind == "power") {
        model = generate_power(cfg.plant.nodes, cfg.plant.seed);
    } else {
        model = generate_platoon(cfg.plant.nodes, cfg.plant.seed);
    }
    return model;
}

LossSpec make_loss(const ExperimentConfig& cfg, const PlantModel& model)
{
    if (cfg.default_loss) {
        return default_loss(model);
    }
    validate(cfg.loss, plant_dim(model));
    return cfg.loss;
}

RolloutConfig eval_rollout(const ExperimentConfig& cfg)
{
    RolloutConfig rc = cfg.rollout;
    rc.steps = static_cast<int>(std::lround(cfg.eval_horizon / rc.dt));
    if (rc.steps < 1) {
        throw ConfigError("evaluation horizon is shorter than one step");
    }
    return rc;
}

// ---------------------------------------------------------- model files

namespace {

std::vector<std::pair<Index, Index>> edges_of(const Mat& incidence)
{
    std::vector<std::pair<Index, Index>> out;
    for (Index j = 0; j < incidence.cols(); ++j) {
        Index tail = -1, head = -1;
        for (Index i = 0; i < incidence.rows(); ++i) {
            if (incidence(i, j) > 0.5) tail = i;
            if (incidence(i, j) < -0.5) head = i;
        }
        out.emplace_back(tail, head);
    }
    return out;
}

} // namespace

void write_plant(std::ostream& os, const PlantModel& model)
{
    auto line = [&](const char* key, const Vec& v, const char* unit) {
        os << key << " = " << join(v) << "  # " << unit << '\n';
    };
    std::visit(overloaded{[&](const PlatoonModel& p) {
                              os << "[plant]\nkind = platoon\nnodes = " << p.dim() << '\n';
                              line("sensitivity", p.sensitivity, "kappa_i, 1/s");
                              line("gain", p.gain, "rho_i, dimensionless");
                              line("default_velocity", p.default_velocity, "lambda0_i, m/s");
                              line("cost_weight", p.cost_weight, "c_i, transient cost weight");
                              os << "\n[edges]\n# edge = tail head distance_gain (1/s), 0-based\n";
                              const auto e = edges_of(p.incidence);
                              for (std::size_t j = 0; j < e.size(); ++j) {
                                  os << "edge = " << e[j].first << ' ' << e[j].second << ' '
                                     << format_double(p.distance_gain[static_cast<Index>(j)]) << '\n';
                              }
                          },
                          [&](const PowerModel& p) {
                              os << "[plant]\nkind = power\nnodes = " << p.dim() << '\n';
                              os << "nominal = " << format_double(p.nominal) << "  # Hz\n";
                              line("inertia", p.inertia, "M_i, s^2");
                              line("damping", p.damping, "D_i, s");
                              line("load", p.load, "d_i, p.u.");
                              os << "\n[edges]\n# edge = tail head susceptance (p.u.), 0-based\n";
                              const auto e = edges_of(p.incidence);
                              for (std::size_t j = 0; j < e.size(); ++j) {
                                  os << "edge = " << e[j].first << ' ' << e[j].second << ' '
                                     << format_double(p.susceptance[static_cast<Index>(j)]) << '\n';
                              }
                          }},
               model);
}

PlantModel read_plant(std::istream& is)
{
    const auto sections = parse_ini(is);
    std::map<std::string, IniEntry> fields;
    std::vector<IniEntry> edge_lines;
    for (const auto& sec : sections) {
        if (sec.name == "plant") {
            for (const auto& e : sec.entries) {
                if (!fields.emplace(e.key, e).second) {
                    throw ConfigError("duplicate key '" + e.key + "'", e.line);
                }
            }
        } else if (sec.name == "edges") {
            for (const auto& e : sec.entries) {
                if (e.key != "edge") {
                    throw ConfigError("expected 'edge = tail head weight'", e.line);
                }
                edge_lines.push_back(e);
            }
        } else if (!sec.entries.empty() || !sec.name.empty()) {
            throw ConfigError("unknown section [" + sec.name + "]", sec.line);
        }
    }
    auto need = [&](const std::string& key) -> const IniEntry& {
        const auto it = fields.find(key);
        if (it == fields.end()) {
            throw ConfigError("plant file: missing '" + key + "'");
        }
        return it->second;
    };
    const std::string kind = need("kind").value;
    const int m = as_int(need("nodes"));
    if (m < 2) {
        throw ConfigError("nodes must be at least 2", need("nodes").line);
    }
    auto vec = [&](const std::string& key) {
        const IniEntry& e = need(key);
        Vec v = as_vec(e);
        if (v.size() != m) {
            throw ConfigError(key + ": expected " + std::to_string(m) + " values", e.line);
        }
        return v;
    };
    std::vector<std::pair<Index, Index>> edges;
    Vec weights(static_cast<Index>(edge_lines.size()));
    for (std::size_t j = 0; j < edge_lines.size(); ++j) {
        const auto toks = split_ws(edge_lines[j].value);
        if (toks.size() != 3) {
            throw ConfigError("expected 'edge = tail head weight'", edge_lines[j].line);
        }
        edges.emplace_back(parse_integer(toks[0], edge_lines[j].line), parse_integer(toks[1], edge_lines[j].line));
        weights[static_cast<Index>(j)] = parse_double(toks[2], edge_lines[j].line);
    }
    Mat incidence;
    try {
        incidence = incidence_from_edges(m, edges);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("plant file: ") + e.what(), edge_lines.empty() ? 0 : edge_lines.front().line);
    }
    const std::map<std::string, std::vector<std::string>> allowed = {
        {"platoon", {"kind", "nodes", "sensitivity", "gain", "default_velocity", "cost_weight"}},
        {"power", {"kind", "nodes", "nominal", "inertia", "damping", "load"}},
    };
    const auto ak = allowed.find(kind);
    if (ak == allowed.end()) {
        throw ConfigError("plant kind must be platoon or power", need("kind").line);
    }
    for (const auto& [key, e] : fields) {
        if (std::find(ak->second.begin(), ak->second.end(), key) == ak->second.end()) {
            throw ConfigError("unknown key '" + key + "' for a " + kind + " plant", e.line);
        }
    }
    PlantModel model;
    if (kind == "platoon") {
        PlatoonModel p;
        p.sensitivity = vec("sensitivity");
        p.gain = vec("gain");
        p.default_velocity = vec("default_velocity");
        p.cost_weight = fields.count("cost_weight") ? vec("cost_weight") : Vec::Constant(m, 0.05);
        p.incidence = incidence;
        p.distance_gain = weights;
        model = p;
    } else {
        PowerModel p;
        p.inertia = vec("inertia");
        p.damping = vec("damping");
        p.load = vec("load");
        if (fields.count("nominal")) {
            p.nominal = as_double(need("nominal"));
        }
        p.incidence = incidence;
        p.susceptance = weights;
        model = p;
    }
    try {
        validate(model);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("plant file: ") + e.what());
    }
    return model;
}

PlantModel load_plant(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open plant file '" + path + "'");
    }
    try {
        return read_plant(in);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ----------------------------------------------------------- checkpoints

namespace {

class CheckpointWriter {
public:
    explicit CheckpointWriter(std::ostream& os) : os_(os) {}

    void line(const std::string& s) { os_ << s << '\n'; }

    void vector(const std::string& name, const Vec& v)
    {
        os_ << "vector " << name << ' ' << v.size() << '\n' << join(v) << '\n';
    }

    void matrix(const std::string& name, const Mat& m)
    {
        os_ << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Index r = 0; r < m.rows(); ++r) {
            os_ << join(Vec(m.row(r).transpose())) << '\n';
        }
    }

private:
    std::ostream& os_;
};

class CheckpointReader {
public:
    explicit CheckpointReader(std::istream& is)
    {
        std::string raw;
        int n = 0;
        while (std::getline(is, raw)) {
            ++n;
            const std::string t = trim(raw);
            if (!t.empty() && t.front() != '#') {
                lines_.push_back({split_ws(t), n});
            }
        }
    }

    int line() const { return pos_ < lines_.size() ? lines_[pos_].number : (lines_.empty() ? 0 : lines_.back().number); }

    int last_line() const { return last_; }

    [[noreturn]] void fail(const std::string& what) const { throw ConfigError("checkpoint: " + what, line()); }
    // For problems found in the line just consumed.
    [[noreturn]] void fail_last(const std::string& what) const { throw ConfigError("checkpoint: " + what, last_); }

    // Next line, which must start with `key`; returns the remaining tokens.
    std::vector<std::string> expect_any(const std::string& key)
    {
        if (pos_ >= lines_.size()) {
            fail("unexpected end of file, expected '" + key + "'");
        }
        const auto& l = lines_[pos_];
        if (l.tokens.front() != key) {
            fail("expected '" + key + "', got '" + l.tokens.front() + "'");
        }
        ++pos_;
        last_ = l.number;
        return {l.tokens.begin() + 1, l.tokens.end()};
    }

    std::vector<std::string> expect(const std::string& key, std::size_t args)
    {
        auto a = expect_any(key);
        if (a.size() != args) {
            --pos_;
            fail("'" + key + "' takes " + std::to_string(args) + " values");
        }
        return a;
    }

    std::string peek() const { return pos_ < lines_.size() ? lines_[pos_].tokens.front() : ""; }

    Index count(const std::string& tok, Index max = 1 << 20)
    {
        const long long v = parse_integer(tok, last_);
        if (v < 0 || v > max) {
            fail_last("size " + tok + " out of range");
        }
        return static_cast<Index>(v);
    }

    Vec numbers(Index n)
    {
        if (pos_ >= lines_.size()) {
            fail("unexpected end of file in numeric data");
        }
        const auto& l = lines_[pos_];
        if (static_cast<Index>(l.tokens.size()) != n) {
            fail("expected " + std::to_string(n) + " numbers");
        }
        Vec v(n);
        for (Index i = 0; i < n; ++i) {
            v[i] = parse_double(l.tokens[static_cast<std::size_t>(i)], l.number);
        }
        ++pos_;
        last_ = l.number;
        return v;
    }

    Vec vector(const std::string& name)
    {
        const auto a = expect("vector", 2);
        if (a[0] != name) {
            fail_last("expected vector '" + name + "', got '" + a[0] + "'");
        }
        const Index n = count(a[1]);
        return n == 0 ? Vec() : numbers(n);
    }

    Mat matrix(const std::string& name)
    {
        const auto a = expect("matrix", 3);
        if (a[0] != name) {
            fail_last("expected matrix '" + name + "', got '" + a[0] + "'");
        }
        const Index rows = count(a[1]), cols = count(a[2]);
        Mat m(rows, cols);
        for (Index r = 0; r < rows; ++r) {
            m.row(r) = numbers(cols).transpose();
        }
        return m;
    }

    double scalar(const std::string& key)
    {
        const int at = line();
        return parse_double(expect(key, 1)[0], at);
    }

    bool done() const { return pos_ >= lines_.size(); }

private:
    struct Line {
        std::vector<std::string> tokens;
        int number;
    };
    std::vector<Line> lines_;
    std::size_t pos_ = 0;
    int last_ = 0;
};

void write_term(CheckpointWriter& w, const std::string& role, const ControlTerm& term)
{
    std::visit(
        overloaded{
            [&](const MonotoneOperator& op) {
                w.line("term " + role + " monotone " + std::to_string(op.terms.size()));
                for (std::size_t j = 0; j < op.terms.size(); ++j) {
                    std::string g = "group " + std::to_string(op.partition.groups[j].size());
                    for (Index v : op.partition.groups[j]) {
                        g += ' ' + std::to_string(v);
                    }
                    w.line(g);
                    std::visit(overloaded{[&](const Scnn& net) {
                                              w.line("scnn " + std::to_string(net.layer_count()));
                                              w.line("beta_pre " + format_double(net.beta_pre));
                                              for (int l = 0; l < net.layer_count(); ++l) {
                                                  const std::string ls = std::to_string(l);
                                                  w.matrix("input_weight_" + ls, net.input_weights[l]);
                                                  w.vector("bias_" + ls, net.biases[l]);
                                                  if (l > 0) {
                                                      w.matrix("hidden_pre_" + ls, net.hidden_pre[l - 1]);
                                                  }
                                              }
                                          },
                                          [&](const Quadratic& q) {
                                              w.line("quadratic " + std::to_string(q.input_dim()));
                                              w.line("eps " + format_double(q.eps));
                                              w.matrix("factor", q.factor);
                                          }},
                               op.terms[j]);
                }
            },
            [&](const DenseNet& net) {
                w.line("term " + role + " dense " + std::to_string(net.layer_count()));
                w.line("beta_pre " + format_double(net.beta_pre));
                for (int l = 0; l < net.layer_count(); ++l) {
                    const std::string ls = std::to_string(l);
                    w.matrix("input_weight_" + ls, net.input_weights[l]);
                    w.vector("bias_" + ls, net.biases[l]);
                    if (l > 0) {
                        w.matrix("hidden_" + ls, net.hidden[l - 1]);
                    }
                }
            },
            [&](const LinearMap& lin) {
                w.line("term " + role + " linear");
                w.matrix("gain", lin.gain);
            }},
        term);
}

ControlTerm read_term(CheckpointReader& r, const std::string& role, Index dim)
{
    const auto a = r.expect_any("term");
    if (a.empty() || a[0] != role) {
        r.fail_last("expected term '" + role + "'");
    }
    if (a.size() == 2 && a[1] == "linear") {
        return LinearMap{r.matrix("gain")};
    }
    if (a.size() != 3) {
        r.fail_last("malformed term line");
    }
    if (a[1] == "dense") {
        DenseNet net;
        const int k = static_cast<int>(r.count(a[2], 64));
        net.beta_pre = r.scalar("beta_pre");
        for (int l = 0; l < k; ++l) {
            const std::string ls = std::to_string(l);
            net.input_weights.push_back(r.matrix("input_weight_" + ls));
            net.biases.push_back(r.vector("bias_" + ls));
            if (l > 0) {
                net.hidden.push_back(r.matrix("hidden_" + ls));
            }
        }
        return net;
    }
    if (a[1] != "monotone") {
        r.fail_last("unknown term kind '" + a[1] + "'");
    }
    const Index groups = r.count(a[2], dim);
    std::vector<std::vector<Index>> part;
    std::vector<ConvexFunction> terms;
    for (Index j = 0; j < groups; ++j) {
        const auto head = r.expect_any("group");
        if (head.empty() || static_cast<Index>(head.size()) != r.count(head[0], dim) + 1) {
            r.fail_last("malformed group line");
        }
        std::vector<Index> g;
        for (std::size_t i = 1; i < head.size(); ++i) {
            g.push_back(r.count(head[i], dim));
        }
        part.push_back(g);
        const std::string kind = r.peek();
        if (kind == "scnn") {
            Scnn net;
            const int k = static_cast<int>(r.count(r.expect("scnn", 1)[0], 64));
            net.beta_pre = r.scalar("beta_pre");
            for (int l = 0; l < k; ++l) {
                const std::string ls = std::to_string(l);
                net.input_weights.push_back(r.matrix("input_weight_" + ls));
                net.biases.push_back(r.vector("bias_" + ls));
                if (l > 0) {
                    net.hidden_pre.push_back(r.matrix("hidden_pre_" + ls));
                }
            }
            refresh_hidden(net);
            terms.emplace_back(std::move(net));
        } else if (kind == "quadratic") {
            Quadratic q;
            r.expect("quadratic", 1);
            q.eps = r.scalar("eps");
            q.factor = r.matrix("factor");
            terms.emplace_back(std::move(q));
        } else {
            r.fail("expected 'scnn' or 'quadratic'");
        }
    }
    try {
        return MonotoneOperator{make_partition(dim, part), std::move(terms)};
    } catch (const ConfigError& e) {
        r.fail_last(e.what());
    }
}

} // namespace

void write_checkpoint(std::ostream& os, const PiController& ctrl, const CheckpointMeta& meta)
{
    CheckpointWriter w(os);
    w.line("npi-checkpoint");
    w.line("version " + std::to_string(checkpoint_version));
    w.line("config_hash " + (meta.config_hash.empty() ? std::string("-") : meta.config_hash));
    w.line("seed " + std::to_string(meta.seed));
    w.line("controller " + to_string(meta.kind));
    w.line("epoch " + std::to_string(meta.epoch));
    w.line("dim " + std::to_string(ctrl.dim()));
    w.vector("setpoint", ctrl.setpoint);
    w.vector("integral_state", ctrl.integral_state);
    write_term(w, "proportional", ctrl.proportional);
    write_term(w, "integral", ctrl.integral);
    w.line("end");
}

PiController read_checkpoint(std::istream& is, CheckpointMeta* meta)
{
    CheckpointReader r(is);
    r.expect("npi-checkpoint", 0);
    const auto version = r.expect("version", 1)[0];
    if (version != std::to_string(checkpoint_version)) {
        r.fail_last("unsupported version " + version);
    }
    CheckpointMeta m;
    m.config_hash = r.expect("config_hash", 1)[0];
    const std::string seed = r.expect("seed", 1)[0];
    m.seed = parse_u64(seed, r.last_line());
    try {
        m.kind = parse_controller_kind(r.expect("controller", 1)[0]);
    } catch (const ConfigError& e) {
        r.fail_last(e.what());
    }
    m.epoch = static_cast<int>(r.count(r.expect("epoch", 1)[0], 1 << 30));
    const Index dim = r.count(r.expect("dim", 1)[0], 1 << 16);
    PiController c;
    c.setpoint = r.vector("setpoint");
    c.integral_state = r.vector("integral_state");
    c.proportional = read_term(r, "proportional", dim);
    c.integral = read_term(r, "integral", dim);
    r.expect("end", 0);
    if (!r.done()) {
        r.fail("trailing content after 'end'");
    }
    try {
        require_dim(c.setpoint.size(), dim, "checkpoint setpoint");
        validate(c);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
    if (meta) {
        *meta = m;
    }
    return c;
}

void save_checkpoint(const std::string& path, const PiController& ctrl, const CheckpointMeta& meta)
{
    std::ostringstream os;
    write_checkpoint(os, ctrl, meta);
    write_file(path, os.str());
}

PiController load_checkpoint(const std::string& path, CheckpointMeta* meta)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open checkpoint '" + path + "'");
    }
    try {
        return read_checkpoint(in, meta);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ------------------------------------------------------------------- CSV

std::string provenance_line(const std::string& hash, std::uint64_t seed)
{
    return "# npi config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

void write_loss_csv(std::ostream& os, const std::vector<EpochStat>& history)
{
    os << "epoch,mean_loss,dropped_rollouts\n";
    for (const auto& h : history) {
        os << h.epoch << ',' << format_double(h.mean_loss) << ',' << h.dropped << '\n';
    }
}

void write_file(const std::string& path, const std::string& text)
{
    const fs::path p(path);
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write '" + path + "'");
    }
    out << text;
    if (!out) {
        throw ConfigError("write failed for '" + path + "'");
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace npi
