#pragma once

#include "npi/monotone.hpp"
#include "npi/plants.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace npi {

enum class Integrator { euler, rk4 };

/// Additive step change of one model parameter, applied at `time` seconds.
/// Targets: "load" (power d_i) and "default_velocity" (platoon lambda0_i).
struct Disturbance {
    double time = 0.0;
    std::string target = "load";
    Index index = 0;
    double delta = 0.0;
};

struct RolloutConfig {
    double dt = 0.02;
    int steps = 300;
    Integrator integrator = Integrator::euler;
    std::vector<Disturbance> disturbances;
    int stride = 1;
};

void validate(const RolloutConfig& cfg);

/// Returns a patched copy; throws ConfigError for unknown targets or indices.
PlantModel apply_disturbance(const PlantModel& model, const Disturbance& patch);

enum TrajectoryFlag : unsigned {
    flag_region_violation = 1u, // some power line angle left (-pi/2, pi/2)
    flag_nonfinite = 2u,        // state became non-finite; trajectory truncated here
};

/// Recorded at steps 0, stride, 2 stride, ..., K. control[k] is the input
/// held over [t_k, t_k + dt).
struct Trajectory {
    std::vector<double> times;
    std::vector<PlantState> states;
    std::vector<Vec> integral;
    std::vector<Vec> control;
    std::vector<unsigned> flags;
    int nonfinite_step = -1; // first step with a non-finite value, -1 if none

    std::size_t size() const { return times.size(); }
    const Vec& output(std::size_t k) const { return states[k].output; }
    bool finite() const { return nonfinite_step < 0; }
    bool any_region_violation() const;
};

/// Closed loop x' = f(x, u), s' = setpoint - y, u = p(setpoint - y) + r(s).
/// Euler holds u over each step. RK4 re-evaluates the controller at each stage
/// and integrates the continuous-time loop; use it for evaluation only.
/// The controller's integral_state is the initial s.
Trajectory rollout(const PlantModel& model, const PiController& ctrl, const PlantState& init,
                   const RolloutConfig& cfg);

/// Open-loop rollout under a constant input, for plant-only checks.
Trajectory rollout_constant(const PlantModel& model, const Vec& u, const PlantState& init, const RolloutConfig& cfg);

/// CSV with header t,x_1..x_n,s_1..s_m,u_1..u_m,y_1..y_m,flags; x stacks
/// (position, output), so n = 2m. Numbers use 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& is);

} // namespace npi
