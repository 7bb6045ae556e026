#pragma once

#include "npi/core.hpp"

#include <cstdint>
#include <variant>
#include <vector>

namespace npi {

/// Vehicle platoon:
///   zeta' = Gamma y
///   y'    = kappa (-(y - lambda0) + rho (u - E D E^T zeta))
struct PlatoonModel {
    Vec sensitivity;      // kappa_i, 1/s
    Vec gain;             // rho_i, dimensionless
    Vec default_velocity; // lambda0_i, m/s
    Mat incidence;        // E, m x e
    Vec distance_gain;    // D_j per neighbor link, 1/s
    Vec cost_weight;      // c_i used by the transient cost

    Index dim() const { return sensitivity.size(); }
};

/// Swing dynamics in center-of-inertia angles:
///   delta' = Gamma y
///   M y'   = -D (y - nominal) - d + u - E b sin(E^T delta)
struct PowerModel {
    Vec inertia;     // M_i, s^2
    Vec damping;     // D_i, s
    Vec load;        // d_i, p.u.
    Mat incidence;   // E, m x e
    Vec susceptance; // b_j, p.u.
    double nominal = 60.0; // Hz

    Index dim() const { return inertia.size(); }
};

using PlantModel = std::variant<PlatoonModel, PowerModel>;

/// x = (position, output): (zeta, velocity) for the platoon, (delta, frequency)
/// for the power network.
struct PlantState {
    Vec position;
    Vec output;
};

Index plant_dim(const PlantModel& model);
void validate(const PlantModel& model);

/// Incidence matrices with edges (i, i+1), plus (m-1, 0) for the ring.
Mat chain_incidence(Index m);
Mat ring_incidence(Index m);
/// Builds E from (tail, head) pairs; column j is +1 at tail, -1 at head.
Mat incidence_from_edges(Index m, const std::vector<std::pair<Index, Index>>& edges);

PlantState platoon_derivative(const PlatoonModel& model, const PlantState& x, const Vec& u);

/// `region_violation` (optional) is set when some |[E^T delta]_j| >= pi/2.
PlantState power_derivative(const PowerModel& model, const PlantState& x, const Vec& u,
                            bool* region_violation = nullptr);

PlantState plant_derivative(const PlantModel& model, const PlantState& x, const Vec& u,
                            bool* region_violation = nullptr);

/// Vector-Jacobian product of f(x, u): given adjoint `w` of x', returns
/// (df/dx)^T w and writes (df/du)^T w into `adj_u`.
PlantState plant_vjp(const PlantModel& model, const PlantState& x, const Vec& u, const PlantState& w, Vec& adj_u);

bool in_operating_region(const PowerModel& model, const Vec& delta);

struct Equilibrium {
    PlantState state;
    Vec input;
    bool feasible = false;
    double residual = 0.0;
    int iterations = 0;
};

/// Unique equilibrium state for a constant input u*. The platoon case is a
/// linear solve; the power case runs damped Newton on the line-flow balance
/// starting from `start_angles` (zero when empty).
Equilibrium solve_equilibrium(const PlantModel& model, const Vec& u_star, const Vec& start_angles = Vec());

/// Storage function S(x, x*) relative to the equilibrium; zero at x = x*.
double storage_value(const PlantModel& model, const PlantState& x, const Equilibrium& eq);
/// Gradient of S with respect to (position, output).
PlantState storage_gradient(const PlantModel& model, const PlantState& x, const Equilibrium& eq);

/// Output-strictness constant rho of the passivity inequality:
/// min_i 1/rho_i for the platoon, min_i D_i for the power network.
double passivity_rate(const PlantModel& model);

/// S' + rho |y - y*|^2 - (y - y*)^T (u - u*) with S' = grad S . f(x, u).
double eip_residual(const PlantModel& model, const PlantState& x, const Vec& u, const Equilibrium& eq);

struct PlatoonOptions {
    double velocity_lo = 5.0, velocity_hi = 6.0;
    double gain_lo = 1.0, gain_hi = 2.0;
    double sensitivity = 1.0;
    double distance_lo = 0.5, distance_hi = 1.5;
    double cost_lo = 0.025, cost_hi = 0.075;
};

struct PowerOptions {
    double inertia_lo = 0.1, inertia_hi = 0.4;
    double damping_lo = 0.5, damping_hi = 1.5;
    double susceptance_lo = 5.0, susceptance_hi = 15.0;
    double base_load = 0.5; // d ~ U[-base_load, base_load], then mean removed
    bool ring = true;
};

PlatoonModel generate_platoon(Index m, std::uint64_t seed, const PlatoonOptions& opt = {});
PowerModel generate_power(Index m, std::uint64_t seed, const PowerOptions& opt = {});

} // namespace npi
