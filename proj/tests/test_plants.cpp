#include "oracles.hpp"

#include "npi/plants.hpp"

#include <doctest.h>

#include <cmath>

using namespace npi;

namespace {

PlantState random_state(Index m, std::mt19937_64& rng, double pos_scale, double out_center, double out_scale)
{
    return PlantState{center(oracle::random_vec(m, rng, pos_scale)),
                      Vec::Constant(m, out_center) + oracle::random_vec(m, rng, out_scale)};
}

Vec stack(const PlantState& x)
{
    Vec v(2 * x.output.size());
    v << x.position, x.output;
    return v;
}

PlantState unstack(const Vec& v)
{
    const Index m = v.size() / 2;
    return PlantState{v.head(m), v.tail(m)};
}

PowerModel two_bus(double b, double d)
{
    PowerModel p;
    p.inertia = Vec::Constant(2, 0.2);
    p.damping = Vec::Constant(2, 1.0);
    p.load = (Vec(2) << d, -d).finished();
    p.incidence = chain_incidence(2);
    p.susceptance = Vec::Constant(1, b);
    return p;
}

} // namespace

TEST_CASE("incidence helpers and centering")
{
    const Mat e = ring_incidence(5);
    CHECK(e.cols() == 5);
    CHECK((e.colwise().sum().array() == 0).all());
    const Mat g = centering(5);
    CHECK((g * Vec::Ones(5)).norm() < 1e-15);
    CHECK((g * e - e).norm() < 1e-14);
    CHECK_THROWS_AS(incidence_from_edges(3, {{0, 3}}), ConfigError);

    PlatoonModel p = generate_platoon(4, 1);
    p.incidence = incidence_from_edges(4, {{0, 1}, {2, 3}, {0, 1}});
    p.distance_gain = Vec::Ones(3);
    CHECK_THROWS_AS(validate(PlantModel{p}), DomainError);
}

TEST_CASE("generated platoon parameters")
{
    const PlatoonModel p = generate_platoon(20, 42);
    CHECK_NOTHROW(validate(PlantModel{p}));
    CHECK((p.default_velocity.array() >= 5).all());
    CHECK((p.default_velocity.array() <= 6).all());
    CHECK((p.sensitivity.array() == 1).all());
    CHECK((p.gain.array() >= 1).all());
    CHECK((p.gain.array() <= 2).all());
    CHECK((p.cost_weight.array() >= 0.025).all());
    CHECK((p.cost_weight.array() <= 0.075).all());
    CHECK(generate_platoon(20, 42).default_velocity == p.default_velocity);
    CHECK(generate_platoon(20, 43).default_velocity != p.default_velocity);

    const PowerModel w = generate_power(10, 3);
    CHECK_NOTHROW(validate(PlantModel{w}));
    CHECK(std::abs(w.load.sum()) < 1e-12);
    CHECK(w.incidence.cols() == 10);
}

TEST_CASE("platoon derivative by hand")
{
    PlatoonModel p = generate_platoon(2, 5);
    const PlantState x{Vec::Zero(2), p.default_velocity};
    const PlantState dx = platoon_derivative(p, x, Vec::Zero(2));
    CHECK((dx.position - center(p.default_velocity)).norm() < 1e-15);
    CHECK(dx.output.norm() < 1e-15);

    std::mt19937_64 rng(1);
    const PlantState y = random_state(2, rng, 1.0, 5.5, 1.0);
    const Vec u = oracle::random_vec(2, rng);
    const PlantState a = platoon_derivative(p, y, u);
    const PlantState b = platoon_derivative(p, y, u + Vec::Constant(2, 0.3));
    CHECK((b.output - a.output - 0.3 * p.sensitivity.cwiseProduct(p.gain)).norm() < 1e-14);
    CHECK(b.position == a.position);
    CHECK_THROWS_AS(platoon_derivative(p, y, Vec::Zero(3)), ShapeError);
}

TEST_CASE("power derivative by hand")
{
    PowerModel p = two_bus(3.0, 0.0);
    const PlantState eq{Vec::Zero(2), Vec::Constant(2, 60.0)};
    const PlantState d0 = power_derivative(p, eq, Vec::Zero(2));
    CHECK(d0.position.norm() == 0);
    CHECK(d0.output.norm() == 0);

    // single line: node 1 sees -b sin(d1 - d2), node 2 sees +b sin(d1 - d2)
    const PlantState x{(Vec(2) << 0.3, -0.1).finished(), Vec::Constant(2, 60.0)};
    const PlantState d1 = power_derivative(p, x, Vec::Zero(2));
    const double torque = 3.0 * std::sin(0.4);
    CHECK(d1.output[0] * p.inertia[0] == doctest::Approx(-torque).epsilon(1e-14));
    CHECK(d1.output[1] * p.inertia[1] == doctest::Approx(torque).epsilon(1e-14));

    PowerModel q = p;
    q.load[0] += 0.7;
    const PlantState d2 = power_derivative(q, x, Vec::Zero(2));
    CHECK(d2.output[0] - d1.output[0] == doctest::Approx(-0.7 / p.inertia[0]).epsilon(1e-12));
    CHECK(d2.output[1] == d1.output[1]);

    bool violation = false;
    power_derivative(p, PlantState{(Vec(2) << 1.0, -1.0).finished(), eq.output}, Vec::Zero(2), &violation);
    CHECK(violation);
    power_derivative(p, x, Vec::Zero(2), &violation);
    CHECK_FALSE(violation);
}

TEST_CASE("vector-Jacobian products match finite differences")
{
    std::mt19937_64 rng(17);
    const PlantModel models[] = {generate_platoon(4, 2), generate_power(5, 2)};
    for (const PlantModel& model : models) {
        const Index m = plant_dim(model);
        const bool power = std::holds_alternative<PowerModel>(model);
        const PlantState x = random_state(m, rng, power ? 0.2 : 1.0, power ? 60 : 5.5, 0.5);
        const Vec u = oracle::random_vec(m, rng);
        const PlantState w{oracle::random_vec(m, rng), oracle::random_vec(m, rng)};
        Vec adj_u;
        const PlantState adj = plant_vjp(model, x, u, w, adj_u);
        const Mat jx = oracle::fd_jacobian([&](const Vec& v) { return stack(plant_derivative(model, unstack(v), u)); },
                                           stack(x));
        const Mat ju = oracle::fd_jacobian([&](const Vec& v) { return stack(plant_derivative(model, x, v)); }, u);
        CHECK(oracle::rel_err(stack(adj), jx.transpose() * stack(w)) < 1e-8);
        CHECK(oracle::rel_err(adj_u, ju.transpose() * stack(w)) < 1e-8);
    }
}

TEST_CASE("equilibria satisfy the dynamics")
{
    std::mt19937_64 rng(3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PlantModel pl = generate_platoon(6, seed);
        const Vec u = oracle::random_vec(6, rng);
        const Equilibrium e = solve_equilibrium(pl, u);
        REQUIRE(e.feasible);
        const PlantState f = plant_derivative(pl, e.state, u);
        CHECK(stack(f).norm() < 1e-9);
        CHECK(std::abs(e.state.position.sum()) < 1e-10);
        CHECK((e.state.output.array() == e.state.output[0]).all());

        const PlantModel pw = generate_power(8, seed);
        const Vec up = std::get<PowerModel>(pw).load + center(oracle::random_vec(8, rng, 0.5));
        const Equilibrium q = solve_equilibrium(pw, up);
        REQUIRE(q.feasible);
        CHECK(stack(plant_derivative(pw, q.state, up)).norm() < 1e-9);
        CHECK((q.state.output.array() == 60.0).all());
    }
    // platoon with u* = 0: y* is the 1/rho weighted mean of lambda0
    const PlatoonModel p = generate_platoon(3, 9);
    const Equilibrium e0 = solve_equilibrium(p, Vec::Zero(3));
    const Vec w = p.gain.cwiseInverse();
    CHECK(e0.state.output[0] == doctest::Approx(w.dot(p.default_velocity) / w.sum()).epsilon(1e-14));
}

TEST_CASE("power equilibrium: balanced, unique, and infeasible cases")
{
    const PowerModel p = two_bus(2.0, 0.0);
    const Equilibrium e = solve_equilibrium(p, Vec::Zero(2));
    CHECK(e.feasible);
    CHECK(e.state.position.norm() < 1e-12);

    // required flow 3 > b = 2 on the single line
    const Equilibrium bad = solve_equilibrium(two_bus(2.0, 3.0), Vec::Zero(2));
    CHECK_FALSE(bad.feasible);

    const PowerModel w = generate_power(6, 11);
    const Vec u = w.load + center(Vec::LinSpaced(6, -0.5, 0.5));
    const Equilibrium a = solve_equilibrium(w, u);
    const Equilibrium b = solve_equilibrium(w, u, center(Vec::LinSpaced(6, 0.2, -0.2)));
    REQUIRE(a.feasible);
    REQUIRE(b.feasible);
    CHECK((a.state.position - b.state.position).norm() < 1e-8);

    // D(y* - 60) absorbs the imbalance
    const Equilibrium c = solve_equilibrium(w, u + Vec::Constant(6, 0.1));
    CHECK(c.state.output[0] == doctest::Approx(60.0 + 0.6 / w.damping.sum()).epsilon(1e-14));
}

TEST_CASE("storage functions")
{
    std::mt19937_64 rng(5);
    const PowerModel p = two_bus(4.0, 0.5);
    const PlantModel pm = p;
    const Equilibrium e = solve_equilibrium(pm, Vec::Zero(2));
    REQUIRE(e.feasible);
    CHECK(storage_value(pm, e.state, e) == 0.0);

    // second-order Taylor expansion around the equilibrium
    const Vec dd = (Vec(2) << 1e-3, -2e-3).finished();
    const Vec dy = (Vec(2) << 1e-2, 3e-2).finished();
    const PlantState x{e.state.position + dd, e.state.output + dy};
    const double line = dd[0] - dd[1];
    const double angle = e.state.position[0] - e.state.position[1];
    const double taylor = 0.5 * dy.dot(p.inertia.cwiseProduct(dy)) + 0.5 * 4.0 * line * line * std::cos(angle);
    CHECK(storage_value(pm, x, e) == doctest::Approx(taylor).epsilon(1e-4));

    // platoon: S(y* + t v) = t^2/2 v^T (kappa rho)^-1 v
    const PlatoonModel q = generate_platoon(4, 6);
    const PlantModel qm = q;
    const Equilibrium f = solve_equilibrium(qm, oracle::random_vec(4, rng));
    CHECK(std::abs(storage_value(qm, f.state, f)) < 1e-15);
    const Vec v = oracle::random_vec(4, rng);
    const double curvature = v.dot(v.cwiseQuotient(q.sensitivity.cwiseProduct(q.gain)));
    for (double t : {0.5, 1.0, 2.0}) {
        const PlantState xt{f.state.position, f.state.output + t * v};
        CHECK(storage_value(qm, xt, f) == doctest::Approx(0.5 * t * t * curvature).epsilon(1e-12));
    }

    // gradient of S against finite differences; positivity on samples
    for (const PlantModel& model : {pm, qm}) {
        const Equilibrium& eq = std::holds_alternative<PowerModel>(model) ? e : f;
        const Index m = plant_dim(model);
        for (int i = 0; i < 50; ++i) {
            const PlantState s{eq.state.position + center(oracle::random_vec(m, rng, 0.3)),
                               eq.state.output + oracle::random_vec(m, rng, 1.0)};
            CHECK(storage_value(model, s, eq) >= -1e-12);
        }
        const PlantState s{eq.state.position + center(oracle::random_vec(m, rng, 0.3)),
                           eq.state.output + oracle::random_vec(m, rng, 1.0)};
        const Vec fd = oracle::fd_gradient([&](const Vec& z) { return storage_value(model, unstack(z), eq); }, stack(s));
        CHECK(oracle::rel_err(stack(storage_gradient(model, s, eq)), fd) < 1e-8);
    }

    Equilibrium infeasible = e;
    infeasible.feasible = false;
    CHECK_THROWS_AS(storage_value(pm, e.state, infeasible), DomainError);
}

TEST_CASE("EIP residual equals its closed-form slack")
{
    // Expanding S' with the equilibrium equations leaves
    //   platoon: min(1/rho)|e|^2 - e^T diag(1/rho) e,   power: min(D)|e|^2 - e^T D e.
    std::mt19937_64 rng(8);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const PlatoonModel p = generate_platoon(5, seed);
        const PowerModel w = generate_power(5, seed);
        const Equilibrium ep = solve_equilibrium(p, oracle::random_vec(5, rng));
        const Equilibrium ew = solve_equilibrium(w, w.load + center(oracle::random_vec(5, rng, 0.3)));
        REQUIRE(ew.feasible);
        CHECK(std::abs(eip_residual(p, ep.state, ep.input, ep)) < 1e-12);
        for (int i = 0; i < 200; ++i) {
            const PlantState xp = random_state(5, rng, 3.0, 5.5, 2.0);
            const Vec up = oracle::random_vec(5, rng, 3.0);
            const Vec e = xp.output - ep.state.output;
            const Vec inv = p.gain.cwiseInverse();
            const double slack = inv.minCoeff() * e.squaredNorm() - e.dot(inv.cwiseProduct(e));
            CHECK(eip_residual(p, xp, up, ep) == doctest::Approx(slack).epsilon(1e-9).scale(1 + e.squaredNorm()));
            CHECK(eip_residual(p, xp, up, ep) <= 1e-8 * (1 + e.squaredNorm()));

            const PlantState xw = random_state(5, rng, 0.2, 60.0, 0.5);
            const Vec uw = oracle::random_vec(5, rng, 2.0);
            const Vec ew_ = xw.output - ew.state.output;
            const double slack_w = w.damping.minCoeff() * ew_.squaredNorm() - ew_.dot(w.damping.cwiseProduct(ew_));
            CHECK(eip_residual(w, xw, uw, ew) == doctest::Approx(slack_w).epsilon(1e-9).scale(1 + ew_.squaredNorm()));
        }
    }
}
