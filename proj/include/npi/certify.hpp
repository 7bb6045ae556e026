#pragma once

#include "npi/monotone.hpp"
#include "npi/plants.hpp"
#include "npi/sim.hpp"
#include "npi/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace npi {

/// Outcome of one numerical check. `worst_margin` is the largest normalized
/// violation measure seen; the check passes iff worst_margin <= tolerance.
struct CertReport {
    std::string check;
    bool pass = true;
    double worst_margin = 0.0;
    long samples = 0;
    double tolerance = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> notes; // first few violations, diagnostics
};

/// Folds `margin` into the report and records a note for violations.
void record_margin(CertReport& r, double margin, const std::string& where);

/// B(s, s*) = g(s) - g(s*) - grad g(s*)^T (s - s*).
double bregman_distance(const ConvexFunction& g, const Vec& s, const Vec& s_star);
/// Same, with g the summed group potential of the operator.
double bregman_distance(const MonotoneOperator& op, const Vec& s, const Vec& s_star);

/// Closed-loop equilibrium (x*, s*, u*) with y* = setpoint. The position and
/// integral state obey the conservation law position + Gamma s = anchor, which
/// pins down the equilibrium reached from a given start:
/// anchor = x0.position + Gamma s0.
struct LoopEquilibrium {
    PlantState state;
    Vec integral;
    Vec input;
    bool feasible = false;
    double residual = 0.0;
    int iterations = 0;
    std::string reason;
};

Vec conservation_anchor(const PlantState& x0, const Vec& s0);

/// Damped Newton on r(s) = u*(s) starting from s = 0: at most 200 iterations,
/// step halving, residual tolerance 1e-10.
LoopEquilibrium equilibrium_set_solver(const PlantModel& model, const PiController& ctrl, const Vec& anchor);

/// V = S(x, x*) + B(s, s*). Requires a gradient-map integral term.
double lyapunov_value(const PlantModel& model, const PiController& ctrl, const PlantState& x, const Vec& s,
                      const LoopEquilibrium& eq);

/// Analytic V' along the continuous closed loop: grad S . f(x, u) + (r(s) - r(s*))^T (setpoint - y).
/// For a non-gradient integral term this is the same expression, which is no
/// longer the derivative of any function.
double lyapunov_rate(const PlantModel& model, const PiController& ctrl, const PlantState& x, const Vec& s,
                     const LoopEquilibrium& eq);

/// Pass iff V' + rho |y - y*|^2 <= 1e-8 (1 + V) at every recorded point with
/// t >= t_from. `model` must be the one in force from t_from on.
CertReport lyapunov_decrease_check(const PlantModel& model, const PiController& ctrl, const Trajectory& traj,
                                   const LoopEquilibrium& eq, double t_from = 0.0);

/// Pass iff |y(t) - setpoint|_inf < tol for every recorded t >= settle_time.
/// Fails for non-finite trajectories and horizons shorter than settle_time.
CertReport tracking_check(const Trajectory& traj, const Vec& setpoint, double settle_time, double tol);

/// eip_residual over random (state, input, equilibrium) samples. Power states
/// are drawn inside the operating region.
CertReport eip_audit(const PlantModel& model, long samples, std::uint64_t seed);

/// Strict monotonicity over random pairs drawn from [-scale, scale]^m.
CertReport monotonicity_audit(const ControlTerm& term, long pairs, std::uint64_t seed, double scale = 3.0);

struct SuiteOptions {
    int rollouts = 100;
    std::uint64_t seed = 1;
    double settle_time = 15.0;
    double tracking_tol = 0.01;
    long eip_samples = 10000;
    long monotonicity_pairs = 10000;
    int threads = 0;
};

/// Monotonicity of both terms, plant EIP, then per-rollout equilibrium,
/// Lyapunov decrease and tracking, aggregated into one report each.
std::vector<CertReport> certify_suite(const PlantModel& model, const PiController& ctrl,
                                      const std::vector<Scenario>& scenarios, const RolloutConfig& cfg,
                                      const SuiteOptions& opt);

/// Result of one rollout's closed-loop checks, used by certify_suite.
struct RolloutVerdict {
    bool equilibrium_feasible = false;
    CertReport lyapunov;
    CertReport tracking;
};

RolloutVerdict certify_rollout(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                               const RolloutConfig& cfg, double settle_time, double tracking_tol);

std::string reports_to_json(const std::vector<CertReport>& reports, const std::string& config_hash,
                            std::uint64_t seed);

} // namespace npi
