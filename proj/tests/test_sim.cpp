#include "oracles.hpp"

#include "npi/sim.hpp"
#include "npi/train.hpp"

#include <doctest.h>

#include <sstream>

using namespace npi;

namespace {

PlatoonModel platoon5() { return generate_platoon(5, 3); }

PiController neural_pi(Index m, const Vec& setpoint, std::uint64_t seed)
{
    ControllerSpec spec;
    spec.hidden = {8, 8};
    return build_controller(spec, m, setpoint, seed);
}

double max_state_diff(const PlantState& a, const PlantState& b)
{
    return std::max((a.position - b.position).cwiseAbs().maxCoeff(), (a.output - b.output).cwiseAbs().maxCoeff());
}

} // namespace

TEST_CASE("constant equilibrium input keeps the plant at rest")
{
    const PlantModel models[] = {platoon5(), generate_power(6, 4)};
    for (const PlantModel& model : models) {
        const Index m = plant_dim(model);
        std::mt19937_64 rng(2);
        Vec u = oracle::random_vec(m, rng, 0.3);
        if (std::holds_alternative<PowerModel>(model)) {
            u = u.array() - u.mean() + std::get<PowerModel>(model).load.mean();
        }
        const Equilibrium eq = solve_equilibrium(model, u);
        REQUIRE(eq.feasible);
        for (Integrator integ : {Integrator::euler, Integrator::rk4}) {
            RolloutConfig cfg;
            cfg.integrator = integ;
            cfg.steps = 200;
            const Trajectory t = rollout_constant(model, u, eq.state, cfg);
            REQUIRE(t.size() == 201);
            for (const auto& x : t.states) {
                CHECK(max_state_diff(x, eq.state) < 1e-9);
            }
        }
    }
}

TEST_CASE("Euler integral update is exact and records follow the stride")
{
    const PlantModel model = platoon5();
    PiController ctrl = neural_pi(5, Vec::Constant(5, 5.0), 1);
    std::mt19937_64 rng(3);
    const PlantState init{Vec::Zero(5), Vec::Constant(5, 5.5) + oracle::random_vec(5, rng, 0.5)};
    RolloutConfig cfg;
    cfg.steps = 50;
    const Trajectory t = rollout(model, ctrl, init, cfg);
    REQUIRE(t.size() == 51);
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
        const Vec expect = t.integral[k] + cfg.dt * (ctrl.setpoint - t.output(k));
        CHECK((t.integral[k + 1] - expect).cwiseAbs().maxCoeff() == 0.0);
        CHECK(t.control[k] == pi_control(ctrl, t.output(k), t.integral[k]));
    }

    cfg.stride = 7;
    const Trajectory strided = rollout(model, ctrl, init, cfg);
    CHECK(strided.times.back() == doctest::Approx(50 * cfg.dt));
    for (std::size_t k = 0; k + 1 < strided.size(); ++k) {
        const std::size_t full = k * 7;
        CHECK(strided.times[k] == t.times[full]);
        CHECK(strided.integral[k] == t.integral[full]);
    }
    CHECK(strided.size() == 9); // 0, 7, ..., 49, then 50
}

TEST_CASE("Euler and RK4 agree to first order")
{
    const PlantModel model = platoon5();
    const PiController ctrl = neural_pi(5, Vec::Constant(5, 5.0), 2);
    std::mt19937_64 rng(4);
    const PlantState init{Vec::Zero(5), Vec::Constant(5, 5.5) + oracle::random_vec(5, rng, 0.5)};
    auto final_state = [&](double dt, Integrator integ) {
        RolloutConfig cfg;
        cfg.dt = dt;
        cfg.steps = static_cast<int>(std::lround(1.0 / dt));
        cfg.integrator = integ;
        return rollout(model, ctrl, init, cfg).states.back();
    };
    const double dt = 0.02;
    const PlantState ref = final_state(dt / 64, Integrator::rk4);
    const double rk4 = max_state_diff(final_state(dt, Integrator::rk4), ref);
    const double coarse = max_state_diff(final_state(dt, Integrator::euler), ref);
    const double fine = max_state_diff(final_state(dt / 16, Integrator::euler), ref);
    CHECK(rk4 < 1e-6);
    CHECK(coarse < 10 * dt);
    // First order: 16x smaller step gives roughly 16x smaller error.
    CHECK(coarse / fine > 10.0);
    CHECK(coarse / fine < 25.0);
}

TEST_CASE("rollouts are bit-identical on repeat")
{
    const PowerModel model = generate_power(6, 5);
    const PiController ctrl = neural_pi(6, Vec::Constant(6, 60.0), 3);
    RolloutConfig cfg;
    cfg.dt = 0.01;
    cfg.steps = 150;
    cfg.disturbances = {{0.5, "load", 2, 0.4}};
    const PlantState init{Vec::Zero(6), Vec::Constant(6, 60.0)};
    std::ostringstream a, b;
    write_trajectory_csv(a, rollout(model, ctrl, init, cfg));
    write_trajectory_csv(b, rollout(model, ctrl, init, cfg));
    CHECK(a.str() == b.str());
}

TEST_CASE("disturbance patches")
{
    const PowerModel pw = generate_power(4, 6);
    const PlantModel model = pw;
    const PlantModel same = apply_disturbance(model, {0.0, "load", 1, 0.0});
    CHECK(std::get<PowerModel>(same).load == pw.load);

    const PlantModel once = apply_disturbance(apply_disturbance(model, {0.0, "load", 1, 0.25}), {0.0, "load", 1, 0.5});
    CHECK(std::get<PowerModel>(once).load[1] == doctest::Approx(pw.load[1] + 0.75).epsilon(1e-15));
    CHECK(std::get<PowerModel>(model).load == pw.load);

    CHECK_THROWS_AS(apply_disturbance(model, {0.0, "default_velocity", 0, 1.0}), ConfigError);
    CHECK_THROWS_AS(apply_disturbance(model, {0.0, "load", 4, 1.0}), ConfigError);
    const PlantModel pl = platoon5();
    const PlantModel v = apply_disturbance(pl, {0.0, "default_velocity", 4, -1.0});
    CHECK(std::get<PlatoonModel>(v).default_velocity[4] == std::get<PlatoonModel>(pl).default_velocity[4] - 1.0);

    // A step applied at t = 0.5 s changes nothing before it.
    const PiController ctrl = neural_pi(4, Vec::Constant(4, 60.0), 4);
    RolloutConfig cfg;
    cfg.dt = 0.01;
    cfg.steps = 100;
    const PlantState init{Vec::Zero(4), Vec::Constant(4, 60.0)};
    const Trajectory quiet = rollout(model, ctrl, init, cfg);
    cfg.disturbances = {{0.5, "load", 0, 1.0}};
    const Trajectory hit = rollout(model, ctrl, init, cfg);
    CHECK(hit.output(50) == quiet.output(50));
    CHECK(hit.output(51) != quiet.output(51));
}

TEST_CASE("trajectory CSV round trip")
{
    const PlantModel model = platoon5();
    const PiController ctrl = neural_pi(5, Vec::Constant(5, 5.0), 5);
    RolloutConfig cfg;
    cfg.steps = 40;
    const PlantState init{Vec::LinSpaced(5, -0.1, 0.1), Vec::Constant(5, 5.7)};
    const Trajectory t = rollout(model, ctrl, init, cfg);
    std::ostringstream os;
    write_trajectory_csv(os, t);
    const std::string text = os.str();
    CHECK(text.rfind("t,x_1,", 0) == 0);
    std::istringstream is(text);
    const Trajectory back = read_trajectory_csv(is);
    REQUIRE(back.size() == t.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
        CHECK(back.times[k] == t.times[k]);
        CHECK(back.states[k].position == t.states[k].position);
        CHECK(back.states[k].output == t.states[k].output);
        CHECK(back.integral[k] == t.integral[k]);
        CHECK(back.control[k] == t.control[k]);
    }
    std::ostringstream again;
    write_trajectory_csv(again, back);
    CHECK(again.str() == text);

    std::istringstream bad("t,x_1,x_2,s_1,u_1,y_1,flags\n0,1,2,3,4,5,0\n0,1,oops,3,4,5,0\n");
    try {
        read_trajectory_csv(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 3);
    }
}

TEST_CASE("storage is non-increasing under the equilibrium input")
{
    const PlantModel models[] = {platoon5(), generate_power(6, 8)};
    for (const PlantModel& model : models) {
        const Index m = plant_dim(model);
        const bool power = std::holds_alternative<PowerModel>(model);
        const Vec u = power ? Vec::Constant(m, std::get<PowerModel>(model).load.mean()) : Vec::Constant(m, 0.2);
        const Equilibrium eq = solve_equilibrium(model, u);
        REQUIRE(eq.feasible);
        std::mt19937_64 rng(9);
        const PlantState init{eq.state.position + center(oracle::random_vec(m, rng, 0.2)),
                              eq.state.output + oracle::random_vec(m, rng, 0.5)};
        auto worst_rise = [&](double dt) {
            RolloutConfig cfg;
            cfg.dt = dt;
            cfg.steps = static_cast<int>(std::lround(3.0 / dt));
            const Trajectory t = rollout_constant(model, u, init, cfg);
            double rise = 0.0;
            for (std::size_t k = 0; k + 1 < t.size(); ++k) {
                rise = std::max(rise, storage_value(model, t.states[k + 1], eq) - storage_value(model, t.states[k], eq));
            }
            return rise;
        };
        const double r1 = worst_rise(0.01);
        const double r2 = worst_rise(0.005);
        // Any rise is integrator error: it must shrink with dt.
        CHECK(r1 < 0.05 * 0.01);
        CHECK(r2 <= 0.5 * r1 + 1e-15);
    }
}

TEST_CASE("closed loop approaches the setpoint")
{
    const PlantModel model = platoon5();
    const PiController ctrl = neural_pi(5, Vec::Constant(5, 5.0), 6);
    std::mt19937_64 rng(10);
    const PlantState init{Vec::Zero(5), Vec::Constant(5, 5.5) + oracle::random_vec(5, rng, 0.5)};
    RolloutConfig cfg;
    cfg.steps = 300;
    const Trajectory t = rollout(model, ctrl, init, cfg);
    const double e0 = (t.output(0).array() - 5.0).abs().maxCoeff();
    const double e6 = (t.output(300).array() - 5.0).abs().maxCoeff();
    CHECK(e6 < e0);
}

TEST_CASE("blow-up truncates and flags instead of throwing")
{
    const PlantModel model = platoon5();
    PiController ctrl{LinearMap{-1e4 * Mat::Identity(5, 5)}, LinearMap{Mat::Zero(5, 5)}, Vec::Constant(5, 5.0),
                      Vec::Zero(5)};
    RolloutConfig cfg;
    cfg.steps = 400;
    const PlantState init{Vec::Zero(5), Vec::Constant(5, 5.1)};
    const Trajectory t = rollout(model, ctrl, init, cfg);
    CHECK_FALSE(t.finite());
    CHECK(t.size() < 401);
    CHECK((t.flags.back() & flag_nonfinite) != 0);
    CHECK(t.nonfinite_step == static_cast<int>(t.size()) - 1);

    RolloutConfig bad;
    bad.dt = 0.0;
    CHECK_THROWS_AS(rollout(model, ctrl, init, bad), ConfigError);
}
