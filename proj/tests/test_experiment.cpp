#include "npi/experiment.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace npi;

namespace {

ExperimentConfig tiny()
{
    std::istringstream is("[plant]\nkind = platoon\nnodes = 3\n[rollout]\ndt = 0.02\nsteps = 20\n"
                          "[evaluate]\nhorizon = 1\nrollouts = 4\nseed = 9\n[train]\nthreads = 2\n");
    return parse_experiment(is);
}

} // namespace

TEST_CASE("summaries skip non-finite entries")
{
    const Summary s = summarize({1.0, 3.0, INFINITY, NAN});
    CHECK(s.count == 2);
    CHECK(s.mean == 2.0);
    CHECK(s.std == 1.0);
    CHECK(std::isnan(summarize({NAN}).mean));
}

TEST_CASE("evaluation matches direct loss and steady-state computations")
{
    const ExperimentConfig cfg = tiny();
    const PlantModel model = make_plant(cfg);
    const PiController ctrl = initial_controller(cfg, model);
    const auto scenarios = test_scenarios(cfg, model);
    REQUIRE(scenarios.size() == 4);
    const Evaluation ev = evaluate(cfg, model, ctrl, scenarios);
    CHECK(ev.nonfinite == 0);
    const LossSpec loss = make_loss(cfg, model);
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        RolloutConfig short_rc = cfg.rollout;
        const double j = loss_eval(loss, run_scenario(model, ctrl, scenarios[i], short_rc), scenarios[i].setpoint);
        CHECK(ev.transient[i] == doctest::Approx(j).epsilon(1e-12));

        // Steady-state cost by hand at t = 1 s (record 50).
        const Trajectory t = run_scenario(model, ctrl, scenarios[i], eval_rollout(cfg));
        REQUIRE(t.size() == 51);
        const Vec e = t.output(50) - scenarios[i].setpoint;
        const Vec u = t.control[50];
        REQUIRE(loss.node_weights.size() == 3); // platoon: per-vehicle cost weights
        const double c = e.cwiseAbs().sum() + loss.control_weight * (loss.node_weights.array() * u.array().square()).sum();
        CHECK(ev.steady[i] == doctest::Approx(c).epsilon(1e-12));
    }

    ExperimentConfig other = cfg;
    other.train.threads = 1;
    const Evaluation again = evaluate(other, model, ctrl, scenarios);
    CHECK(again.transient == ev.transient);
    CHECK(again.steady == ev.steady);
}

TEST_CASE("comparison table marks absent checkpoints")
{
    CompareRow ok{"a", "neural_pi", "full", "a/checkpoint.txt", true, {1.5, 0.5, 4}, {0.25, 0.0, 4}, 1};
    CompareRow gone{"b", "linear_pi", "half", "b/checkpoint.txt", false, {}, {}, 0};
    std::ostringstream os;
    write_compare_csv(os, {ok, gone});
    CHECK(os.str() == "name,controller,partition,status,rollouts,nonfinite,transient_mean,transient_std,steady_mean,"
                      "steady_std,checkpoint\n"
                      "a,neural_pi,full,ok,5,1,1.5,0.5,0.25,0,a/checkpoint.txt\n"
                      "b,linear_pi,half,absent,,,,,,,b/checkpoint.txt\n");
}
