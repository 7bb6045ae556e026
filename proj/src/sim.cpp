#include "npi/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace npi {

namespace {

bool state_finite(const PlantState& x, const Vec& s)
{
    return x.position.allFinite() && x.output.allFinite() && s.allFinite();
}

struct LoopDerivative {
    PlantState dx;
    Vec ds;
    bool violation = false;
};

LoopDerivative closed_loop(const PlantModel& model, const PiController& ctrl, const PlantState& x, const Vec& u)
{
    LoopDerivative d;
    d.dx = plant_derivative(model, x, u, &d.violation);
    d.ds = ctrl.setpoint - x.output;
    return d;
}

PlantState axpy(const PlantState& x, double a, const PlantState& dx)
{
    return PlantState{x.position + a * dx.position, x.output + a * dx.output};
}

// Steps whose disturbances fire at the start of the step; index by rounding.
std::vector<std::vector<const Disturbance*>> schedule(const RolloutConfig& cfg)
{
    std::vector<std::vector<const Disturbance*>> at(static_cast<std::size_t>(cfg.steps) + 1);
    for (const auto& d : cfg.disturbances) {
        const long k = std::lround(d.time / cfg.dt);
        if (k >= 0 && k <= cfg.steps) {
            at[static_cast<std::size_t>(k)].push_back(&d);
        }
    }
    return at;
}

template <class Control>
Trajectory run(const PlantModel& base, const PiController& ctrl, const PlantState& init, const RolloutConfig& cfg,
               Control control)
{
    validate(cfg);
    const Index m = plant_dim(base);
    require_dim(init.position.size(), m, "rollout init position");
    require_dim(init.output.size(), m, "rollout init output");
    require_dim(ctrl.integral_state.size(), m, "rollout integral state");

    PlantModel model = base;
    const auto fire = schedule(cfg);
    PlantState x = init;
    Vec s = ctrl.integral_state;
    Trajectory traj;
    auto record = [&](int k, const Vec& u, unsigned flags) {
        traj.times.push_back(k * cfg.dt);
        traj.states.push_back(x);
        traj.integral.push_back(s);
        traj.control.push_back(u);
        traj.flags.push_back(flags);
    };

    for (int k = 0; k <= cfg.steps; ++k) {
        for (const Disturbance* d : fire[static_cast<std::size_t>(k)]) {
            model = apply_disturbance(model, *d);
        }
        const Vec u = control(x, s);
        const bool finite = state_finite(x, s) && u.allFinite();
        bool violation = false;
        if (const auto* pw = std::get_if<PowerModel>(&model)) {
            violation = finite && !in_operating_region(*pw, x.position);
        }
        const unsigned flags = (violation ? flag_region_violation : 0u) | (finite ? 0u : flag_nonfinite);
        if (!finite) {
            traj.nonfinite_step = k;
            record(k, u, flags);
            break;
        }
        if (k % cfg.stride == 0 || k == cfg.steps) {
            record(k, u, flags);
        }
        if (k == cfg.steps) {
            break;
        }
        if (cfg.integrator == Integrator::euler) {
            const LoopDerivative d = closed_loop(model, ctrl, x, u);
            x = axpy(x, cfg.dt, d.dx);
            s += cfg.dt * d.ds;
        } else {
            const double h = cfg.dt;
            const LoopDerivative k1 = closed_loop(model, ctrl, x, u);
            const PlantState x2 = axpy(x, 0.5 * h, k1.dx);
            const Vec s2 = s + 0.5 * h * k1.ds;
            const LoopDerivative k2 = closed_loop(model, ctrl, x2, control(x2, s2));
            const PlantState x3 = axpy(x, 0.5 * h, k2.dx);
            const Vec s3 = s + 0.5 * h * k2.ds;
            const LoopDerivative k3 = closed_loop(model, ctrl, x3, control(x3, s3));
            const PlantState x4 = axpy(x, h, k3.dx);
            const Vec s4 = s + h * k3.ds;
            const LoopDerivative k4 = closed_loop(model, ctrl, x4, control(x4, s4));
            x.position += h / 6.0 * (k1.dx.position + 2.0 * k2.dx.position + 2.0 * k3.dx.position + k4.dx.position);
            x.output += h / 6.0 * (k1.dx.output + 2.0 * k2.dx.output + 2.0 * k3.dx.output + k4.dx.output);
            s += h / 6.0 * (k1.ds + 2.0 * k2.ds + 2.0 * k3.ds + k4.ds);
        }
    }
    return traj;
}

} // namespace

bool Trajectory::any_region_violation() const
{
    for (unsigned f : flags) {
        if (f & flag_region_violation) {
            return true;
        }
    }
    return false;
}

void validate(const RolloutConfig& cfg)
{
    if (!(cfg.dt > 0) || !std::isfinite(cfg.dt)) {
        throw ConfigError("rollout: dt must be positive");
    }
    if (cfg.steps < 1) {
        throw ConfigError("rollout: steps must be at least 1");
    }
    if (cfg.stride < 1) {
        throw ConfigError("rollout: stride must be at least 1");
    }
}

PlantModel apply_disturbance(const PlantModel& model, const Disturbance& patch)
{
    PlantModel out = model;
    Vec* target = nullptr;
    if (auto* pw = std::get_if<PowerModel>(&out); pw && patch.target == "load") {
        target = &pw->load;
    } else if (auto* pl = std::get_if<PlatoonModel>(&out); pl && patch.target == "default_velocity") {
        target = &pl->default_velocity;
    }
    if (!target) {
        throw ConfigError("disturbance: unknown target '" + patch.target + "' for this plant");
    }
    if (patch.index < 0 || patch.index >= target->size()) {
        throw ConfigError("disturbance: index " + std::to_string(patch.index) + " out of range");
    }
    (*target)[patch.index] += patch.delta;
    return out;
}

Trajectory rollout(const PlantModel& model, const PiController& ctrl, const PlantState& init, const RolloutConfig& cfg)
{
    require_dim(ctrl.dim(), plant_dim(model), "rollout controller");
    return run(model, ctrl, init, cfg, [&](const PlantState& x, const Vec& s) { return pi_control(ctrl, x.output, s); });
}

Trajectory rollout_constant(const PlantModel& model, const Vec& u, const PlantState& init, const RolloutConfig& cfg)
{
    const Index m = plant_dim(model);
    require_dim(u.size(), m, "rollout_constant input");
    PiController dummy{LinearMap{Mat::Zero(m, m)}, LinearMap{Mat::Zero(m, m)}, init.output, Vec::Zero(m)};
    return run(model, dummy, init, cfg, [&](const PlantState&, const Vec&) { return u; });
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj)
{
    if (traj.size() == 0) {
        os << "t,flags\n";
        return;
    }
    const Index m = traj.states.front().output.size();
    os << "t";
    for (Index i = 1; i <= 2 * m; ++i) {
        os << ",x_" << i;
    }
    for (const char* name : {"s", "u", "y"}) {
        for (Index i = 1; i <= m; ++i) {
            os << ',' << name << '_' << i;
        }
    }
    os << ",flags\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (std::size_t k = 0; k < traj.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", traj.times[k]);
        os << buf;
        for (const Vec* v : {&traj.states[k].position, &traj.states[k].output, &traj.integral[k], &traj.control[k],
                             &traj.states[k].output}) {
            for (Index i = 0; i < m; ++i) {
                put((*v)[i]);
            }
        }
        os << ',' << traj.flags[k] << '\n';
    }
}

Trajectory read_trajectory_csv(std::istream& is)
{
    std::string line;
    int lineno = 0;
    do { // provenance comments may precede the header
        if (!std::getline(is, line)) {
            throw ConfigError("trajectory csv: no header", lineno + 1);
        }
        ++lineno;
    } while (!line.empty() && line.front() == '#');
    const auto cols = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
    if (cols < 7 || (cols - 2) % 5 != 0 || line.rfind("t,", 0) != 0) {
        throw ConfigError("trajectory csv: unexpected header", lineno);
    }
    const Index m = (cols - 2) / 5;
    Trajectory traj;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(cell, &used));
                if (used != cell.size()) {
                    throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw ConfigError("trajectory csv: bad number '" + cell + "'", lineno);
            }
        }
        if (static_cast<Index>(vals.size()) != cols) {
            throw ConfigError("trajectory csv: expected " + std::to_string(cols) + " columns", lineno);
        }
        const Eigen::Map<const Vec> row(vals.data(), cols);
        traj.times.push_back(row[0]);
        traj.states.push_back(PlantState{row.segment(1, m), row.segment(1 + m, m)});
        traj.integral.push_back(row.segment(1 + 2 * m, m));
        traj.control.push_back(row.segment(1 + 3 * m, m));
        const auto flags = static_cast<unsigned>(row[cols - 1]);
        traj.flags.push_back(flags);
        if ((flags & flag_nonfinite) && traj.nonfinite_step < 0) {
            traj.nonfinite_step = static_cast<int>(traj.times.size()) - 1;
        }
    }
    return traj;
}

} // namespace npi
