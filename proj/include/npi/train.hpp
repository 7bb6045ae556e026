#pragma once

#include "npi/monotone.hpp"
#include "npi/plants.hpp"
#include "npi/sim.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace npi {

// ---------------------------------------------------------------- losses

enum class LossKind { platoon_transient, power_transient, custom };

/// Per node i over recorded steps k:
///   nadir_weight * max_k |e_ik| + l1_weight * sum_k |e_ik| + c_i * sum_k u_ik^2
/// with e = y - setpoint and c = control_weight * node_weights (all ones when
/// node_weights is empty).
struct LossSpec {
    LossKind kind = LossKind::custom;
    double nadir_weight = 0.0;
    double l1_weight = 1.0;
    double control_weight = 1.0;
    Vec node_weights;
};

/// Platoon: sum_k |y - ybar|_1 + c^T u^2 with the model's cost weights.
/// Power: max_k |e_i| + 0.05 sum_k |e_i| + 0.005 sum_k u_i^2.
LossSpec default_loss(const PlantModel& model);
void validate(const LossSpec& spec, Index m);

/// +infinity when the trajectory is not finite.
double loss_eval(const LossSpec& spec, const Trajectory& traj, const Vec& setpoint);

/// Snapshot cost at one time: l1_weight |e|_1 + sum_i c_i u_i^2.
double steady_state_cost(const LossSpec& spec, const Vec& y, const Vec& u, const Vec& setpoint);

/// Cost of the last recorded point at or before `time`.
double steady_state_cost_at(const LossSpec& spec, const Trajectory& traj, const Vec& setpoint, double time);

// -------------------------------------------------------------- scenarios

/// One training or test rollout: initial state, setpoint, disturbance schedule.
/// The integral state starts at zero.
struct Scenario {
    PlantState init;
    Vec setpoint;
    std::vector<Disturbance> disturbances;
};

struct ScenarioOptions {
    double setpoint_lo = 5.0, setpoint_hi = 5.0; // output units
    double init_lo = 5.0, init_hi = 6.0;         // platoon initial velocity
    int max_disturbed = 3;                       // power: nodes hit by a step load
    double disturbance_size = 1.0;               // power: delta ~ U[-size, size]
    double disturbance_time = 0.5;               // seconds
};

ScenarioOptions default_scenarios(const PlantModel& model);
Scenario sample_scenario(const PlantModel& model, const ScenarioOptions& opt, std::mt19937_64& rng);
std::vector<Scenario> sample_scenarios(const PlantModel& model, const ScenarioOptions& opt, int count,
                                       std::uint64_t seed);

/// Rollout of `ctrl` with the scenario's setpoint and s(0) = 0.
Trajectory run_scenario(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                        const RolloutConfig& cfg);

// ------------------------------------------------------------ controllers

enum class ControllerKind { neural_pi, linear_pi, dense_nn_pi };
enum class PartitionKind { full, half, decentralized, custom };

struct ControllerSpec {
    ControllerKind kind = ControllerKind::neural_pi;
    PartitionKind partition = PartitionKind::full;
    std::vector<std::vector<Index>> groups; // used when partition == custom
    std::vector<int> hidden{20, 20};
    ScnnInit init;
    double linear_gain = 1.0;      // K_P = K_I = gain * I at initialization
    bool unconstrained = false;    // linear_pi: raw matrices instead of L L^T + eps I
};

CommPartition make_partition(const ControllerSpec& spec, Index m);
PiController build_controller(const ControllerSpec& spec, Index m, const Vec& setpoint, std::uint64_t seed);

std::string to_string(ControllerKind k);
std::string to_string(PartitionKind k);
ControllerKind parse_controller_kind(const std::string& s);
PartitionKind parse_partition_kind(const std::string& s);

// ------------------------------------------------------------------ BPTT

struct RolloutGradient {
    double loss = 0.0;
    Vec grad; // d loss / d controller_params(ctrl)
    bool finite = true;
};

/// Explicit-Euler rollout followed by the exact reverse sweep through every
/// step: plant Jacobians, controller input Jacobians, and controller parameter
/// gradients (second order for gradient-map terms).
RolloutGradient rollout_gradient(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                                 const RolloutConfig& cfg, const LossSpec& spec);

struct BatchGradient {
    double mean_loss = 0.0;
    Vec grad;
    int dropped = 0; // rollouts with non-finite loss, excluded from both means
};

/// Runs `n` independent jobs on up to `threads` workers (0 = hardware). Jobs
/// must write only to their own slot.
void parallel_for(int n, int threads, const std::function<void(int)>& job);

BatchGradient loss_gradient(const PlantModel& model, const PiController& ctrl, const std::vector<Scenario>& batch,
                            const RolloutConfig& cfg, const LossSpec& spec, int threads = 0);

// ------------------------------------------------------------------- Adam

struct AdamConfig {
    double lr = 0.05;
    double decay_base = 0.7;
    int decay_period = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vec m;
    Vec v;
    long step = 0;
};

/// lr * decay_base^floor(step / decay_period), step counted from 0.
double scheduled_lr(const AdamConfig& cfg, long step);
AdamState adam_init(Index n);
void adam_step(const AdamConfig& cfg, AdamState& state, Vec& params, const Vec& grad);

// --------------------------------------------------------------- training

struct TrainConfig {
    int epochs = 50;
    int batch = 32;
    AdamConfig adam;
    std::uint64_t seed = 1;
    RolloutConfig rollout;
    ScenarioOptions scenarios;
    int threads = 0;
    int checkpoint_every = 0; // epochs between on_checkpoint calls, 0 = never
};

struct EpochStat {
    int epoch = 0;
    double mean_loss = 0.0;
    int dropped = 0;
};

struct TrainResult {
    PiController controller;
    std::vector<EpochStat> history;
};

/// One Adam step per epoch on a fresh batch. Throws std::runtime_error when
/// every rollout of `abort_after` consecutive batches is non-finite.
TrainResult train(const PlantModel& model, PiController ctrl, const TrainConfig& cfg, const LossSpec& spec,
                  const std::function<void(int, const PiController&)>& on_checkpoint = {}, int abort_after = 3);

} // namespace npi
