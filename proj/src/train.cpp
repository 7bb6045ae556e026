#include "npi/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace npi {

namespace {

Vec node_costs(const LossSpec& spec, Index m)
{
    return spec.node_weights.size() == 0 ? Vec::Constant(m, spec.control_weight)
                                         : Vec(spec.control_weight * spec.node_weights);
}

double sign(double x) { return (x > 0) - (x < 0); }

// dL/dy_k and dL/du_k for a finite stride-1 trajectory.
void loss_adjoints(const LossSpec& spec, const Trajectory& traj, const Vec& setpoint, std::vector<Vec>& gy,
                   std::vector<Vec>& gu)
{
    const std::size_t n = traj.size();
    const Index m = setpoint.size();
    const Vec c = node_costs(spec, m);
    gy.assign(n, Vec::Zero(m));
    gu.assign(n, Vec::Zero(m));
    std::vector<std::size_t> argmax(static_cast<std::size_t>(m), 0);
    std::vector<double> peak(static_cast<std::size_t>(m), -1.0);
    for (std::size_t k = 0; k < n; ++k) {
        const Vec e = traj.output(k) - setpoint;
        for (Index i = 0; i < m; ++i) {
            gy[k][i] = spec.l1_weight * sign(e[i]);
            if (std::abs(e[i]) > peak[static_cast<std::size_t>(i)]) { // first achiever wins ties
                peak[static_cast<std::size_t>(i)] = std::abs(e[i]);
                argmax[static_cast<std::size_t>(i)] = k;
            }
        }
        gu[k] = 2.0 * c.cwiseProduct(traj.control[k]);
    }
    if (spec.nadir_weight != 0.0) {
        for (Index i = 0; i < m; ++i) {
            const std::size_t k = argmax[static_cast<std::size_t>(i)];
            gy[k][i] += spec.nadir_weight * sign(traj.output(k)[i] - setpoint[i]);
        }
    }
}

} // namespace

LossSpec default_loss(const PlantModel& model)
{
    return std::visit(overloaded{[](const PlatoonModel& p) {
                                     LossSpec s;
                                     s.kind = LossKind::platoon_transient;
                                     s.nadir_weight = 0.0;
                                     s.l1_weight = 1.0;
                                     s.control_weight = 1.0;
                                     s.node_weights = p.cost_weight;
                                     return s;
                                 },
                                 [](const PowerModel&) {
                                     LossSpec s;
                                     s.kind = LossKind::power_transient;
                                     s.nadir_weight = 1.0;
                                     s.l1_weight = 0.05;
                                     s.control_weight = 0.005;
                                     return s;
                                 }},
                      model);
}

void validate(const LossSpec& spec, Index m)
{
    if (!(spec.nadir_weight >= 0) || !(spec.l1_weight >= 0) || !(spec.control_weight >= 0)) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (spec.node_weights.size() != 0) {
        require_dim(spec.node_weights.size(), m, "loss node weights");
        if ((spec.node_weights.array() < 0).any()) {
            throw ConfigError("loss node weights must be non-negative");
        }
    }
}

double loss_eval(const LossSpec& spec, const Trajectory& traj, const Vec& setpoint)
{
    if (!traj.finite()) {
        return std::numeric_limits<double>::infinity();
    }
    const Index m = setpoint.size();
    const Vec c = node_costs(spec, m);
    Vec peak = Vec::Zero(m);
    double total = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const Vec e = (traj.output(k) - setpoint).cwiseAbs();
        peak = peak.cwiseMax(e);
        total += spec.l1_weight * e.sum() + c.dot(traj.control[k].cwiseAbs2());
    }
    total += spec.nadir_weight * peak.sum();
    return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

double steady_state_cost(const LossSpec& spec, const Vec& y, const Vec& u, const Vec& setpoint)
{
    return spec.l1_weight * (y - setpoint).lpNorm<1>() + node_costs(spec, setpoint.size()).dot(u.cwiseAbs2());
}

double steady_state_cost_at(const LossSpec& spec, const Trajectory& traj, const Vec& setpoint, double time)
{
    if (!traj.finite() || traj.size() == 0) {
        return std::numeric_limits<double>::infinity();
    }
    std::size_t k = 0;
    while (k + 1 < traj.size() && traj.times[k + 1] <= time + 1e-9) {
        ++k;
    }
    return steady_state_cost(spec, traj.output(k), traj.control[k], setpoint);
}

ScenarioOptions default_scenarios(const PlantModel& model)
{
    ScenarioOptions o;
    if (const auto* p = std::get_if<PowerModel>(&model)) {
        o.setpoint_lo = o.setpoint_hi = p->nominal;
        o.init_lo = o.init_hi = p->nominal;
        o.max_disturbed = 3;
    } else {
        o.max_disturbed = 0;
    }
    return o;
}

Scenario sample_scenario(const PlantModel& model, const ScenarioOptions& opt, std::mt19937_64& rng)
{
    const Index m = plant_dim(model);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    Scenario sc;
    sc.setpoint = Vec::Constant(m, draw(opt.setpoint_lo, opt.setpoint_hi));
    sc.init.position = Vec::Zero(m);
    sc.init.output.resize(m);
    for (Index i = 0; i < m; ++i) {
        sc.init.output[i] = draw(opt.init_lo, opt.init_hi);
    }
    if (opt.max_disturbed > 0) {
        const std::string target = std::holds_alternative<PowerModel>(model) ? "load" : "default_velocity";
        std::vector<Index> nodes(static_cast<std::size_t>(m));
        for (Index i = 0; i < m; ++i) {
            nodes[static_cast<std::size_t>(i)] = i;
        }
        const int hit = static_cast<int>(std::min<Index>(opt.max_disturbed, m));
        const int count = std::uniform_int_distribution<int>(1, hit)(rng);
        for (int j = 0; j < count; ++j) {
            // partial Fisher-Yates: distinct nodes
            const auto pick = std::uniform_int_distribution<std::size_t>(j, nodes.size() - 1)(rng);
            std::swap(nodes[static_cast<std::size_t>(j)], nodes[pick]);
            sc.disturbances.push_back(Disturbance{opt.disturbance_time, target, nodes[static_cast<std::size_t>(j)],
                                                  draw(-opt.disturbance_size, opt.disturbance_size)});
        }
    }
    return sc;
}

std::vector<Scenario> sample_scenarios(const PlantModel& model, const ScenarioOptions& opt, int count,
                                       std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<Scenario> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(sample_scenario(model, opt, rng));
    }
    return out;
}

Trajectory run_scenario(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                        const RolloutConfig& cfg)
{
    PiController c = ctrl;
    c.setpoint = sc.setpoint;
    c.integral_state = Vec::Zero(sc.setpoint.size());
    RolloutConfig rc = cfg;
    rc.disturbances.insert(rc.disturbances.end(), sc.disturbances.begin(), sc.disturbances.end());
    return rollout(model, c, sc.init, rc);
}

CommPartition make_partition(const ControllerSpec& spec, Index m)
{
    switch (spec.partition) {
    case PartitionKind::full:
        return full_partition(m);
    case PartitionKind::half:
        return half_partition(m);
    case PartitionKind::decentralized:
        return decentralized_partition(m);
    case PartitionKind::custom:
        break;
    }
    return npi::make_partition(m, spec.groups);
}

PiController build_controller(const ControllerSpec& spec, Index m, const Vec& setpoint, std::uint64_t seed)
{
    require_dim(setpoint.size(), m, "build_controller setpoint");
    std::mt19937_64 rng(seed);
    const CommPartition part = make_partition(spec, m);
    auto make_term = [&]() -> ControlTerm {
        switch (spec.kind) {
        case ControllerKind::neural_pi: {
            MonotoneOperator op{part, {}};
            for (const auto& g : part.groups) {
                op.terms.emplace_back(make_scnn(static_cast<Index>(g.size()), spec.hidden, rng, spec.init));
            }
            return op;
        }
        case ControllerKind::linear_pi: {
            if (spec.unconstrained) {
                return LinearMap{spec.linear_gain * Mat::Identity(m, m)};
            }
            MonotoneOperator op{part, {}};
            for (const auto& g : part.groups) {
                op.terms.emplace_back(quadratic_identity(static_cast<Index>(g.size()), spec.linear_gain));
            }
            return op;
        }
        case ControllerKind::dense_nn_pi:
            return make_dense(m, spec.hidden, rng, spec.init.beta);
        }
        throw ConfigError("unknown controller kind");
    };
    PiController c;
    c.proportional = make_term();
    c.integral = make_term();
    c.setpoint = setpoint;
    c.integral_state = Vec::Zero(m);
    validate(c);
    return c;
}

std::string to_string(ControllerKind k)
{
    switch (k) {
    case ControllerKind::neural_pi:
        return "neural_pi";
    case ControllerKind::linear_pi:
        return "linear_pi";
    case ControllerKind::dense_nn_pi:
        return "dense_nn_pi";
    }
    return "?";
}

std::string to_string(PartitionKind k)
{
    switch (k) {
    case PartitionKind::full:
        return "full";
    case PartitionKind::half:
        return "half";
    case PartitionKind::decentralized:
        return "decentralized";
    case PartitionKind::custom:
        return "groups";
    }
    return "?";
}

ControllerKind parse_controller_kind(const std::string& s)
{
    if (s == "neural_pi") return ControllerKind::neural_pi;
    if (s == "linear_pi") return ControllerKind::linear_pi;
    if (s == "dense_nn_pi") return ControllerKind::dense_nn_pi;
    throw ConfigError("unknown controller kind '" + s + "' (neural_pi | linear_pi | dense_nn_pi)");
}

PartitionKind parse_partition_kind(const std::string& s)
{
    if (s == "full") return PartitionKind::full;
    if (s == "half") return PartitionKind::half;
    if (s == "decentralized") return PartitionKind::decentralized;
    if (s == "groups") return PartitionKind::custom;
    throw ConfigError("unknown partition '" + s + "' (full | half | decentralized | groups)");
}

RolloutGradient rollout_gradient(const PlantModel& model, const PiController& ctrl, const Scenario& sc,
                                 const RolloutConfig& cfg, const LossSpec& spec)
{
    if (cfg.integrator != Integrator::euler) {
        throw ConfigError("training requires the euler integrator");
    }
    RolloutConfig rc = cfg;
    rc.stride = 1;
    const Trajectory traj = run_scenario(model, ctrl, sc, rc);

    RolloutGradient out;
    out.grad = Vec::Zero(param_count(ctrl));
    out.loss = loss_eval(spec, traj, sc.setpoint);
    if (!std::isfinite(out.loss)) {
        out.finite = false;
        return out;
    }
    std::vector<Vec> gy, gu;
    loss_adjoints(spec, traj, sc.setpoint, gy, gu);

    const Index m = sc.setpoint.size();
    const Index np = param_count(ctrl.proportional);
    const double dt = cfg.dt;
    PlantState lam{Vec::Zero(m), Vec::Zero(m)}; // adjoint of x_{k+1}
    Vec lam_s = Vec::Zero(m);                  // adjoint of s_{k+1}
    Vec adj_u;
    // Disturbances only shift load / default velocity, which drop out of every
    // Jacobian, so the unpatched model serves the whole reverse sweep.
    for (std::size_t k = traj.size(); k-- > 0;) {
        const PlantState& x = traj.states[k];
        Vec g_u = gu[k];
        PlantState lx{Vec::Zero(m), Vec::Zero(m)};
        Vec ls = Vec::Zero(m);
        if (k + 1 < traj.size()) {
            const PlantState w{dt * lam.position, dt * lam.output};
            const PlantState a = plant_vjp(model, x, traj.control[k], w, adj_u);
            g_u += adj_u;
            lx.position = lam.position + a.position;
            lx.output = lam.output + a.output - dt * lam_s;
            ls = lam_s;
        }
        lx.output += gy[k];
        lx.output -= term_backward(ctrl.proportional, sc.setpoint - x.output, g_u, out.grad.head(np));
        ls += term_backward(ctrl.integral, traj.integral[k], g_u, out.grad.tail(out.grad.size() - np));
        lam = std::move(lx);
        lam_s = std::move(ls);
    }
    if (!out.grad.allFinite()) {
        out.finite = false;
    }
    return out;
}

void parallel_for(int n, int threads, const std::function<void(int)>& job)
{
    int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) {
            job(i);
        }
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                job(i);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

BatchGradient loss_gradient(const PlantModel& model, const PiController& ctrl, const std::vector<Scenario>& batch,
                            const RolloutConfig& cfg, const LossSpec& spec, int threads)
{
    std::vector<RolloutGradient> parts(batch.size());
    parallel_for(static_cast<int>(batch.size()), threads, [&](int i) {
        parts[static_cast<std::size_t>(i)] = rollout_gradient(model, ctrl, batch[static_cast<std::size_t>(i)], cfg, spec);
    });
    BatchGradient out;
    out.grad = Vec::Zero(param_count(ctrl));
    int used = 0;
    for (const auto& p : parts) { // ordered reduction
        if (!p.finite) {
            ++out.dropped;
            continue;
        }
        out.mean_loss += p.loss;
        out.grad += p.grad;
        ++used;
    }
    if (used > 0) {
        out.mean_loss /= used;
        out.grad /= used;
    } else {
        out.mean_loss = std::numeric_limits<double>::infinity();
    }
    return out;
}

double scheduled_lr(const AdamConfig& cfg, long step)
{
    const long period = std::max(1, cfg.decay_period);
    return cfg.lr * std::pow(cfg.decay_base, static_cast<double>(step / period));
}

AdamState adam_init(Index n) { return AdamState{Vec::Zero(n), Vec::Zero(n), 0}; }

void adam_step(const AdamConfig& cfg, AdamState& state, Vec& params, const Vec& grad)
{
    require_dim(grad.size(), params.size(), "adam_step gradient");
    require_dim(state.m.size(), params.size(), "adam_step state");
    const double lr = scheduled_lr(cfg, state.step);
    ++state.step;
    const double t = static_cast<double>(state.step);
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(cfg.beta1, t);
    const double c2 = 1 - std::pow(cfg.beta2, t);
    params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

TrainResult train(const PlantModel& model, PiController ctrl, const TrainConfig& cfg, const LossSpec& spec,
                  const std::function<void(int, const PiController&)>& on_checkpoint, int abort_after)
{
    if (cfg.epochs < 1 || cfg.batch < 1) {
        throw ConfigError("train: epochs and batch must be at least 1");
    }
    if (!(cfg.adam.lr > 0)) {
        throw ConfigError("train: learning rate must be positive");
    }
    validate(cfg.rollout);
    validate(spec, plant_dim(model));

    std::mt19937_64 rng(cfg.seed);
    Vec theta = controller_params(ctrl);
    AdamState adam = adam_init(theta.size());
    TrainResult result;
    int dead = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<Scenario> batch;
        for (int i = 0; i < cfg.batch; ++i) {
            batch.push_back(sample_scenario(model, cfg.scenarios, rng));
        }
        const BatchGradient g = loss_gradient(model, ctrl, batch, cfg.rollout, spec, cfg.threads);
        result.history.push_back(EpochStat{epoch, g.mean_loss, g.dropped});
        if (g.dropped == cfg.batch) {
            if (++dead >= abort_after) {
                throw std::runtime_error("train: every rollout diverged for " + std::to_string(dead) +
                                         " consecutive epochs (epoch " + std::to_string(epoch) + ")");
            }
            continue;
        }
        dead = 0;
        adam_step(cfg.adam, adam, theta, g.grad);
        set_controller_params(ctrl, theta);
        if (on_checkpoint && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            on_checkpoint(epoch, ctrl);
        }
    }
    result.controller = std::move(ctrl);
    return result;
}

} // namespace npi
