#include "npi/experiment.hpp"

#include <cmath>
#include <ostream>

namespace npi {

void set_seed(ExperimentConfig& cfg, std::uint64_t seed)
{
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.certify.seed = seed;
}

PiController initial_controller(const ExperimentConfig& cfg, const PlantModel& model)
{
    const Index m = plant_dim(model);
    return build_controller(cfg.controller, m, Vec::Constant(m, cfg.scenarios.setpoint_lo), cfg.seed);
}

std::vector<Scenario> test_scenarios(const ExperimentConfig& cfg, const PlantModel& model)
{
    return sample_scenarios(model, cfg.scenarios, cfg.test_rollouts, cfg.test_seed);
}

std::vector<Scenario> certify_scenarios(const ExperimentConfig& cfg, const PlantModel& model)
{
    // Offset so the certification batch differs from the first training batch.
    return sample_scenarios(model, cfg.scenarios, cfg.certify.rollouts, cfg.seed ^ 0x9e3779b97f4a7c15ull);
}

Evaluation evaluate(const ExperimentConfig& cfg, const PlantModel& model, const PiController& ctrl,
                    const std::vector<Scenario>& scenarios)
{
    const LossSpec loss = make_loss(cfg, model);
    RolloutConfig rc = eval_rollout(cfg);
    rc.stride = 1;
    const auto k_train = static_cast<std::size_t>(cfg.rollout.steps);
    Evaluation ev;
    ev.transient.resize(scenarios.size());
    ev.steady.resize(scenarios.size());
    std::vector<char> bad(scenarios.size(), 0);
    parallel_for(static_cast<int>(scenarios.size()), cfg.train.threads, [&](int i) {
        const auto& sc = scenarios[static_cast<std::size_t>(i)];
        Trajectory t = run_scenario(model, ctrl, sc, rc);
        const double c = steady_state_cost_at(loss, t, sc.setpoint, cfg.eval_horizon);
        bad[static_cast<std::size_t>(i)] = !t.finite();
        if (t.size() > k_train + 1) {
            t.times.resize(k_train + 1);
            t.states.resize(k_train + 1);
            t.integral.resize(k_train + 1);
            t.control.resize(k_train + 1);
            t.flags.resize(k_train + 1);
        }
        ev.transient[static_cast<std::size_t>(i)] = loss_eval(loss, t, sc.setpoint);
        ev.steady[static_cast<std::size_t>(i)] = c;
    });
    for (char b : bad) {
        ev.nonfinite += b;
    }
    return ev;
}

Summary summarize(const std::vector<double>& v)
{
    Summary s;
    double sum = 0.0;
    for (double x : v) {
        if (std::isfinite(x)) {
            sum += x;
            ++s.count;
        }
    }
    if (s.count == 0) {
        s.mean = s.std = NAN;
        return s;
    }
    s.mean = sum / s.count;
    double sq = 0.0;
    for (double x : v) {
        if (std::isfinite(x)) {
            sq += (x - s.mean) * (x - s.mean);
        }
    }
    s.std = std::sqrt(sq / s.count);
    return s;
}

void write_compare_csv(std::ostream& os, const std::vector<CompareRow>& rows)
{
    os << "name,controller,partition,status,rollouts,nonfinite,transient_mean,transient_std,steady_mean,steady_std,"
          "checkpoint\n";
    for (const auto& r : rows) {
        os << r.name << ',' << r.controller << ',' << r.partition << ',' << (r.present ? "ok" : "absent") << ',';
        if (r.present) {
            os << r.transient.count + r.nonfinite << ',' << r.nonfinite << ',' << format_double(r.transient.mean) << ','
               << format_double(r.transient.std) << ',' << format_double(r.steady.mean) << ','
               << format_double(r.steady.std);
        } else {
            os << ",,,,,";
        }
        os << ',' << r.checkpoint << '\n';
    }
}

} // namespace npi
