#include "npi/certify.hpp"

#include <json.hpp>

#include <Eigen/LU>

#include <cmath>
#include <cstdio>
#include <random>

namespace npi {

namespace {

constexpr int max_notes = 8;

std::string fmt(const char* f, double a, double b = 0.0)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

// Input u that holds the plant at output `setpoint` with the given position,
// and its Jacobian with respect to s through position = anchor - Gamma s.
struct Balance {
    Vec u;
    Mat du_ds;
};

Balance plant_balance(const PlantModel& model, const Vec& position, const Vec& setpoint)
{
    return std::visit(overloaded{[&](const PlatoonModel& p) {
                                     const Mat lap = p.incidence * p.distance_gain.asDiagonal() * p.incidence.transpose();
                                     return Balance{lap * position + (setpoint - p.default_velocity).cwiseQuotient(p.gain),
                                                    -lap};
                                 },
                                 [&](const PowerModel& p) {
                                     const Vec angles = p.incidence.transpose() * position;
                                     const Vec flow = p.incidence * (p.susceptance.array() * angles.array().sin()).matrix();
                                     const Mat lap = p.incidence *
                                                     (p.susceptance.array() * angles.array().cos()).matrix().asDiagonal() *
                                                     p.incidence.transpose();
                                     return Balance{p.load + p.damping.cwiseProduct((setpoint.array() - p.nominal).matrix()) + flow,
                                                    -lap};
                                 }},
                      model);
}

} // namespace

void record_margin(CertReport& r, double margin, const std::string& where)
{
    const double v = std::isnan(margin) ? INFINITY : margin;
    ++r.samples;
    r.worst_margin = r.samples == 1 ? v : std::max(r.worst_margin, v);
    if (!(v <= r.tolerance)) {
        r.pass = false;
        if (static_cast<int>(r.notes.size()) < max_notes) {
            r.notes.push_back(where + fmt(": margin %.3e", v));
        }
    }
}

double bregman_distance(const ConvexFunction& g, const Vec& s, const Vec& s_star)
{
    require_dim(s.size(), s_star.size(), "bregman_distance");
    return convex_value(g, s) - convex_value(g, s_star) - convex_gradient(g, s_star).dot(s - s_star);
}

double bregman_distance(const MonotoneOperator& op, const Vec& s, const Vec& s_star)
{
    require_dim(s.size(), s_star.size(), "bregman_distance");
    return potential_value(op, s) - potential_value(op, s_star) - operator_eval(op, s_star).dot(s - s_star);
}

Vec conservation_anchor(const PlantState& x0, const Vec& s0) { return x0.position + center(s0); }

LoopEquilibrium equilibrium_set_solver(const PlantModel& model, const PiController& ctrl, const Vec& anchor)
{
    const Index m = plant_dim(model);
    require_dim(ctrl.dim(), m, "equilibrium_set_solver controller");
    require_dim(anchor.size(), m, "equilibrium_set_solver anchor");
    LoopEquilibrium eq;
    const Vec& ybar = ctrl.setpoint;
    if ((ybar.array() != ybar[0]).any()) {
        eq.reason = "setpoint is not a multiple of the ones vector; no equilibrium with zero position drift";
        return eq;
    }
    const Vec p0 = term_eval(ctrl.proportional, Vec::Zero(m));

    auto residual = [&](const Vec& s) {
        return Vec(p0 + term_eval(ctrl.integral, s) - plant_balance(model, anchor - center(s), ybar).u);
    };
    Vec s = Vec::Zero(m);
    Vec g = residual(s);
    constexpr int max_iter = 200;
    constexpr double tol = 1e-10;
    int it = 0;
    for (; it < max_iter && g.allFinite() && g.cwiseAbs().maxCoeff() >= tol * 1e-3; ++it) {
        // d/ds [-balance(anchor - Gamma s)] = -(du/dpos)(-Gamma) and du/dpos = -lap, lap Gamma = lap
        const Mat jac = term_jacobian(ctrl.integral, s) - plant_balance(model, anchor - center(s), ybar).du_ds;
        Eigen::FullPivLU<Mat> lu(jac);
        if (!lu.isInvertible()) {
            eq.reason = "singular Newton Jacobian";
            break;
        }
        const Vec step = lu.solve(-g);
        double alpha = 1.0;
        bool accepted = false;
        const double norm = g.norm();
        while (alpha > 1e-12) {
            const Vec trial = s + alpha * step;
            const Vec gt = residual(trial);
            if (gt.allFinite() && gt.norm() <= (1.0 - 1e-4 * alpha) * norm) {
                s = trial;
                g = gt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            break;
        }
    }
    eq.iterations = it;
    eq.integral = s;
    eq.state.position = anchor - center(s);
    eq.state.output = ybar;
    eq.input = p0 + term_eval(ctrl.integral, s);
    const PlantState f = plant_derivative(model, eq.state, eq.input);
    eq.residual = std::max({g.cwiseAbs().maxCoeff(), f.position.cwiseAbs().maxCoeff(), f.output.cwiseAbs().maxCoeff()});
    eq.feasible = std::isfinite(eq.residual) && eq.residual < tol;
    if (!eq.feasible && eq.reason.empty()) {
        eq.reason = fmt("Newton stopped at residual %.3e after %.0f iterations; u* likely outside the range of r",
                        eq.residual, it);
    }
    if (const auto* pw = std::get_if<PowerModel>(&model); pw && eq.feasible &&
                                                        !in_operating_region(*pw, eq.state.position)) {
        eq.feasible = false;
        eq.reason = "equilibrium angles outside the operating region";
    }
    return eq;
}

namespace {

Equilibrium plant_equilibrium(const LoopEquilibrium& eq)
{
    Equilibrium e;
    e.state = eq.state;
    e.input = eq.input;
    e.feasible = eq.feasible;
    e.residual = eq.residual;
    return e;
}

} // namespace

double lyapunov_value(const PlantModel& model, const PiController& ctrl, const PlantState& x, const Vec& s,
                      const LoopEquilibrium& eq)
{
    if (!eq.feasible) {
        throw DomainError("lyapunov_value: infeasible equilibrium");
    }
    const auto* op = std::get_if<MonotoneOperator>(&ctrl.integral);
    if (!op) {
        throw DomainError("lyapunov_value: integral term is not a gradient map");
    }
    return storage_value(model, x, plant_equilibrium(eq)) + bregman_distance(*op, s, eq.integral);
}

double lyapunov_rate(const PlantModel& model, const PiController& ctrl, const PlantState& x, const Vec& s,
                     const LoopEquilibrium& eq)
{
    if (!eq.feasible) {
        throw DomainError("lyapunov_rate: infeasible equilibrium");
    }
    const Vec u = pi_control(ctrl, x.output, s);
    const PlantState grad = storage_gradient(model, x, plant_equilibrium(eq));
    const PlantState f = plant_derivative(model, x, u);
    const Vec ds = ctrl.setpoint - x.output;
    return grad.position.dot(f.position) + grad.output.dot(f.output) +
           (term_eval(ctrl.integral, s) - term_eval(ctrl.integral, eq.integral)).dot(ds);
}

CertReport lyapunov_decrease_check(const PlantModel& model, const PiController& ctrl, const Trajectory& traj,
                                   const LoopEquilibrium& eq, double t_from)
{
    CertReport r;
    r.check = "lyapunov_decrease";
    r.tolerance = 1e-8;
    if (!eq.feasible) {
        r.pass = false;
        r.worst_margin = INFINITY;
        r.notes.push_back("no feasible closed-loop equilibrium: " + eq.reason);
        return r;
    }
    if (!traj.finite()) {
        r.pass = false;
        r.worst_margin = INFINITY;
        r.notes.push_back(fmt("trajectory became non-finite at record %.0f", traj.nonfinite_step));
        return r;
    }
    const bool gradient_map = is_gradient_map(ctrl.integral);
    if (!gradient_map) {
        r.notes.push_back("integral term is not a gradient map; V' uses r(s) - r(s*) as the s-gradient");
    }
    const double rho = passivity_rate(model);
    const Equilibrium pe = plant_equilibrium(eq);
    for (std::size_t k = 0; k < traj.size(); ++k) {
        if (traj.times[k] < t_from - 1e-12) {
            continue;
        }
        const PlantState& x = traj.states[k];
        const Vec& s = traj.integral[k];
        const double scale = gradient_map ? lyapunov_value(model, ctrl, x, s, eq)
                                          : storage_value(model, x, pe) + (s - eq.integral).squaredNorm();
        const double rate = lyapunov_rate(model, ctrl, x, s, eq);
        const double margin = (rate + rho * (x.output - eq.state.output).squaredNorm()) / (1.0 + std::abs(scale));
        record_margin(r, margin, fmt("t = %.4f s", traj.times[k]));
    }
    return r;
}

CertReport tracking_check(const Trajectory& traj, const Vec& setpoint, double settle_time, double tol)
{
    CertReport r;
    r.check = "tracking";
    r.tolerance = tol;
    if (!traj.finite()) {
        r.pass = false;
        r.worst_margin = INFINITY;
        r.notes.push_back("trajectory is not finite");
        return r;
    }
    if (traj.size() == 0 || traj.times.back() < settle_time - 1e-9) {
        r.pass = false;
        r.worst_margin = INFINITY;
        r.notes.push_back(fmt("horizon %.3f s is shorter than the settle time %.3f s",
                              traj.size() ? traj.times.back() : 0.0, settle_time));
        return r;
    }
    for (std::size_t k = 0; k < traj.size(); ++k) {
        if (traj.times[k] >= settle_time - 1e-9) {
            const double err = (traj.output(k) - setpoint).cwiseAbs().maxCoeff();
            // strict inequality: err == tol is a failure
            ++r.samples;
            r.worst_margin = r.samples == 1 ? err : std::max(r.worst_margin, err);
            if (!(err < tol)) {
                r.pass = false;
                if (static_cast<int>(r.notes.size()) < max_notes) {
                    r.notes.push_back(fmt("t = %.4f s: |y - ybar|_inf = %.3e", traj.times[k], err));
                }
            }
        }
    }
    return r;
}

CertReport eip_audit(const PlantModel& model, long samples, std::uint64_t seed)
{
    CertReport r;
    r.check = "eip";
    r.tolerance = 1e-8;
    r.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const Index m = plant_dim(model);
    auto rand_vec = [&](double scale) {
        Vec v(m);
        for (Index i = 0; i < m; ++i) {
            v[i] = scale * unit(rng);
        }
        return v;
    };
    const bool power = std::holds_alternative<PowerModel>(model);
    constexpr long per_equilibrium = 100;
    Equilibrium eq;
    for (long n = 0; n < samples; ++n) {
        if (n % per_equilibrium == 0) {
            for (int attempt = 0; attempt < 100; ++attempt) {
                const Vec u_star = power ? Vec(std::get<PowerModel>(model).load + rand_vec(0.5)) : rand_vec(2.0);
                eq = solve_equilibrium(model, u_star);
                if (eq.feasible) {
                    break;
                }
            }
            if (!eq.feasible) {
                r.pass = false;
                r.notes.push_back("could not draw a feasible equilibrium");
                return r;
            }
        }
        PlantState x;
        if (power) {
            const auto& pw = std::get<PowerModel>(model);
            do {
                x.position = eq.state.position + center(rand_vec(0.5));
            } while (!in_operating_region(pw, x.position));
            x.output = eq.state.output + rand_vec(1.0);
        } else {
            x.position = eq.state.position + center(rand_vec(3.0));
            x.output = eq.state.output + rand_vec(3.0);
        }
        const Vec u = eq.input + rand_vec(3.0);
        const double res = eip_residual(model, x, u, eq);
        record_margin(r, res / (1.0 + (x.output - eq.state.output).squaredNorm()), fmt("sample %.0f", n));
    }
    return r;
}

CertReport monotonicity_audit(const ControlTerm& term, long pairs, std::uint64_t seed, double scale)
{
    CertReport r;
    r.check = "monotonicity";
    r.tolerance = 0.0;
    r.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-scale, scale);
    const Index m = term_dim(term);
    std::vector<std::pair<Vec, Vec>> batch;
    for (long n = 0; n < pairs; ++n) {
        Vec a(m), b(m);
        for (Index i = 0; i < m; ++i) {
            a[i] = unit(rng);
        }
        for (Index i = 0; i < m; ++i) {
            b[i] = unit(rng);
        }
        batch.emplace_back(std::move(a), std::move(b));
    }
    const MonotonicityReport rep = monotonicity_probe(term, batch);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const double d2 = (batch[n].first - batch[n].second).squaredNorm();
        // margin > 0 means a violation: the negated normalized inner product
        record_margin(r, -rep.inner_products[n] / std::max(d2, 1e-300), fmt("pair %.0f", static_cast<double>(n)));
    }
    r.pass = rep.pass;
    r.worst_margin = -rep.worst_normalized;
    if (!is_gradient_map(term)) {
        r.notes.insert(r.notes.begin(), "term is not a gradient map; monotonicity is not structurally guaranteed");
    }
    return r;
}

RolloutVerdict certify_rollout(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                               const RolloutConfig& cfg, double settle_time, double tracking_tol)
{
    RolloutConfig rc = cfg;
    rc.steps = std::max(rc.steps, static_cast<int>(std::ceil(settle_time / cfg.dt - 1e-9)));
    const Trajectory traj = run_scenario(model, ctrl, sc, rc);
    PlantModel final_model = model;
    double t_from = 0.0;
    for (const auto& d : sc.disturbances) {
        final_model = apply_disturbance(final_model, d);
        t_from = std::max(t_from, d.time);
    }
    for (const auto& d : cfg.disturbances) {
        final_model = apply_disturbance(final_model, d);
        t_from = std::max(t_from, d.time);
    }
    PiController c = ctrl;
    c.setpoint = sc.setpoint;
    c.integral_state = Vec::Zero(sc.setpoint.size());
    RolloutVerdict v;
    const LoopEquilibrium eq = equilibrium_set_solver(final_model, c, conservation_anchor(sc.init, c.integral_state));
    v.equilibrium_feasible = eq.feasible;
    v.lyapunov = lyapunov_decrease_check(final_model, c, traj, eq, t_from);
    v.tracking = tracking_check(traj, sc.setpoint, settle_time, tracking_tol);
    return v;
}

std::vector<CertReport> certify_suite(const PlantModel& model, const PiController& ctrl,
                                      const std::vector<Scenario>& scenarios, const RolloutConfig& cfg,
                                      const SuiteOptions& opt)
{
    std::vector<CertReport> out;
    CertReport mp = monotonicity_audit(ctrl.proportional, opt.monotonicity_pairs, opt.seed);
    mp.check = "monotonicity_proportional";
    CertReport mi = monotonicity_audit(ctrl.integral, opt.monotonicity_pairs, opt.seed + 1);
    mi.check = "monotonicity_integral";
    out.push_back(std::move(mp));
    out.push_back(std::move(mi));
    out.push_back(eip_audit(model, opt.eip_samples, opt.seed + 2));

    std::vector<RolloutVerdict> verdicts(scenarios.size());
    parallel_for(static_cast<int>(scenarios.size()), opt.threads, [&](int i) {
        verdicts[static_cast<std::size_t>(i)] =
            certify_rollout(model, ctrl, scenarios[static_cast<std::size_t>(i)], cfg, opt.settle_time, opt.tracking_tol);
    });
    CertReport feas{"closed_loop_equilibrium", true, 0.0, 0, 0.0, opt.seed, {}};
    CertReport lyap{"lyapunov_decrease", true, -INFINITY, 0, 1e-8, opt.seed, {}};
    CertReport track{"tracking", true, 0.0, 0, opt.tracking_tol, opt.seed, {}};
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const auto& v = verdicts[i];
        const std::string tag = "rollout " + std::to_string(i);
        record_margin(feas, v.equilibrium_feasible ? 0.0 : 1.0, tag);
        lyap.samples += v.lyapunov.samples;
        lyap.worst_margin = std::max(lyap.worst_margin, v.lyapunov.worst_margin);
        if (!v.lyapunov.pass) {
            lyap.pass = false;
            if (lyap.notes.size() < max_notes && !v.lyapunov.notes.empty()) {
                lyap.notes.push_back(tag + ": " + v.lyapunov.notes.back());
            }
        }
        track.samples += v.tracking.samples;
        track.worst_margin = std::max(track.worst_margin, v.tracking.worst_margin);
        if (!v.tracking.pass) {
            track.pass = false;
            if (track.notes.size() < max_notes && !v.tracking.notes.empty()) {
                track.notes.push_back(tag + ": " + v.tracking.notes.front());
            }
        }
    }
    feas.check = "closed_loop_equilibrium";
    out.push_back(std::move(feas));
    out.push_back(std::move(lyap));
    out.push_back(std::move(track));
    return out;
}

std::string reports_to_json(const std::vector<CertReport>& reports, const std::string& config_hash,
                            std::uint64_t seed)
{
    nlohmann::ordered_json doc;
    doc["format"] = "npi-cert-report";
    doc["version"] = 1;
    doc["config_hash"] = config_hash;
    doc["seed"] = seed;
    bool all = true;
    auto& arr = doc["checks"] = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json j;
        j["check"] = r.check;
        j["verdict"] = r.pass ? "pass" : "fail";
        j["worst_margin"] = std::isfinite(r.worst_margin) ? nlohmann::ordered_json(r.worst_margin)
                                                          : nlohmann::ordered_json(r.worst_margin > 0 ? "inf" : "-inf");
        j["tolerance"] = r.tolerance;
        j["samples"] = r.samples;
        j["seed"] = r.seed;
        j["notes"] = r.notes;
        arr.push_back(std::move(j));
        all = all && r.pass;
    }
    doc["verdict"] = all ? "pass" : "fail";
    return doc.dump(2) + "\n";
}

} // namespace npi
