#include "oracles.hpp"

#include "npi/monotone.hpp"

#include <doctest.h>

using namespace npi;

namespace {

Scnn small_net(Index m, std::mt19937_64& rng)
{
    ScnnInit init;
    init.bias_scale = 0.3;
    init.hidden_scale = 2.0;
    return make_scnn(m, {5, 4}, rng, init);
}

MonotoneOperator scnn_operator(const CommPartition& part, std::mt19937_64& rng)
{
    MonotoneOperator op{part, {}};
    for (const auto& g : part.groups) {
        op.terms.emplace_back(small_net(static_cast<Index>(g.size()), rng));
    }
    return op;
}

std::vector<std::pair<Vec, Vec>> random_pairs(Index m, int n, std::mt19937_64& rng)
{
    std::vector<std::pair<Vec, Vec>> out;
    for (int i = 0; i < n; ++i) {
        out.emplace_back(oracle::random_vec(m, rng, 3.0), oracle::random_vec(m, rng, 3.0));
    }
    return out;
}

} // namespace

TEST_CASE("partitions")
{
    CHECK(full_partition(3).groups.size() == 1);
    CHECK(decentralized_partition(3).groups.size() == 3);
    const CommPartition h = half_partition(5);
    CHECK(h.groups.front() == std::vector<Index>{0, 1, 2});
    CHECK(h.groups.size() == 3);
    CHECK_THROWS_AS(make_partition(3, {{0, 0}}), ConfigError);
    CHECK_THROWS_AS(make_partition(3, {{2, 1}}), ConfigError);
    CHECK_THROWS_AS(make_partition(3, {{3}}), ConfigError);
    CHECK_THROWS_AS(make_partition(3, {{}}), ConfigError);
    const CommPartition gap = make_partition(4, {{0, 1}, {3}});
    CHECK(uncovered_indices(gap) == std::vector<Index>{2});
    CHECK(partition_warnings(gap).size() == 1);
    CHECK(partition_warnings(full_partition(4)).empty());
}

TEST_CASE("single-group operator is the SCNN gradient")
{
    std::mt19937_64 rng(1);
    const MonotoneOperator op = scnn_operator(full_partition(4), rng);
    const Vec z = oracle::random_vec(4, rng);
    CHECK(operator_eval(op, z) == scnn_input_gradient(std::get<Scnn>(op.terms[0]), z));
    const Vec fd = oracle::fd_gradient([&](const Vec& v) { return potential_value(op, v); }, z);
    CHECK(oracle::rel_err(operator_eval(op, z), fd) < 1e-6);
}

TEST_CASE("decentralized operator acts coordinatewise")
{
    std::mt19937_64 rng(2);
    const Scnn g = small_net(1, rng);
    MonotoneOperator op{decentralized_partition(4), {g, g, g, g}};
    const Vec z = oracle::random_vec(4, rng);
    const Vec q = operator_eval(op, z);
    for (Index i = 0; i < 4; ++i) {
        CHECK(q[i] == scnn_input_gradient(g, Vec::Constant(1, z[i]))[0]);
    }
}

TEST_CASE("partial communication gives the expected Jacobian sparsity")
{
    std::mt19937_64 rng(3);
    const MonotoneOperator op = scnn_operator(make_partition(4, {{0, 1}, {1, 2, 3}}), rng);
    const Vec z = oracle::random_vec(4, rng);
    const Mat j = oracle::fd_jacobian([&](const Vec& v) { return operator_eval(op, v); }, z);
    for (Index r = 0; r < 4; ++r) {
        for (Index c = 0; c < 4; ++c) {
            const bool shared = (r <= 1 && c <= 1) || (r >= 1 && c >= 1);
            if (shared) {
                CHECK(std::abs(j(r, c)) > 1e-9);
            } else {
                CHECK(std::abs(j(r, c)) < 1e-9);
            }
        }
    }
    CHECK((term_jacobian(op, z) - j).norm() < 1e-6);
    CHECK((term_jacobian(op, z) - term_jacobian(op, z).transpose()).norm() < 1e-12);
}

TEST_CASE("monotonicity probe")
{
    std::mt19937_64 rng(4);
    const ControlTerm id = MonotoneOperator{full_partition(3), {quadratic_convex(Mat::Identity(3, 3))}};
    const Vec e = oracle::random_vec(3, rng), x = oracle::random_vec(3, rng);
    const MonotonicityReport same = monotonicity_probe(id, {{e, e}});
    CHECK(same.inner_products[0] == 0.0);
    CHECK(same.pass);
    const MonotonicityReport quad = monotonicity_probe(id, {{e, x}});
    CHECK(quad.inner_products[0] == doctest::Approx((e - x).squaredNorm()).epsilon(1e-14));

    for (const CommPartition& part : {full_partition(4), half_partition(4), decentralized_partition(4),
                                      make_partition(4, {{0, 1}, {1, 2, 3}})}) {
        const ControlTerm op = scnn_operator(part, rng);
        const MonotonicityReport rep = monotonicity_probe(op, random_pairs(4, 1000, rng));
        CHECK(rep.pass);
        CHECK(rep.worst_normalized > 0);
    }

    // a rotation is monotone only weakly (inner product 0), which fails the strict test
    Mat rot(2, 2);
    rot << 0, -1, 1, 0;
    CHECK_FALSE(monotonicity_probe(LinearMap{rot}, random_pairs(2, 10, rng)).pass);
}

TEST_CASE("term backward matches finite differences for every term kind")
{
    std::mt19937_64 rng(5);
    std::vector<ControlTerm> terms;
    terms.emplace_back(scnn_operator(make_partition(3, {{0, 1}, {1, 2}}), rng));
    terms.emplace_back(MonotoneOperator{decentralized_partition(3),
                                        {quadratic_identity(1, 2.0), quadratic_identity(1, 0.5), quadratic_identity(1)}});
    terms.emplace_back(make_dense(3, {4, 4}, rng));
    terms.emplace_back(LinearMap{Mat::Random(3, 3)});
    for (const ControlTerm& t : terms) {
        const Vec z = oracle::random_vec(3, rng), seed = oracle::random_vec(3, rng);
        Vec th(param_count(t));
        pack(t, th);
        Vec grad = Vec::Zero(th.size());
        const Vec jt = term_backward(t, z, seed, grad);
        auto probe = [&](const Vec& p) {
            ControlTerm c = t;
            unpack(c, p);
            return seed.dot(term_eval(c, z));
        };
        CHECK(oracle::rel_err(grad, oracle::fd_gradient(probe, th)) < 1e-6);
        CHECK(oracle::rel_err(jt, term_jacobian(t, z).transpose() * seed) < 1e-12);
        CHECK(oracle::rel_err(term_jacobian(t, z),
                              oracle::fd_jacobian([&](const Vec& v) { return term_eval(t, v); }, z)) < 1e-6);
    }
}

TEST_CASE("dense network is not a gradient map")
{
    std::mt19937_64 rng(6);
    const ControlTerm d = make_dense(3, {20, 20}, rng);
    CHECK_FALSE(is_gradient_map(d));
    const Mat j = term_jacobian(d, oracle::random_vec(3, rng));
    CHECK((j - j.transpose()).norm() > 1e-3);
}

TEST_CASE("PI control law")
{
    std::mt19937_64 rng(7);
    const Mat a = Mat::Random(3, 3), b = Mat::Random(3, 3);
    const Mat kp = a * a.transpose() + Mat::Identity(3, 3), ki = b * b.transpose() + Mat::Identity(3, 3);
    PiController lin{MonotoneOperator{full_partition(3), {quadratic_convex(kp)}},
                     MonotoneOperator{full_partition(3), {quadratic_convex(ki)}}, Vec::Constant(3, 5.0), Vec::Zero(3)};
    const Vec y = oracle::random_vec(3, rng) + Vec::Constant(3, 5.0), s = oracle::random_vec(3, rng);
    CHECK(oracle::rel_err(pi_control(lin, y, s), kp * (lin.setpoint - y) + ki * s) < 1e-13);
    CHECK(pi_control(lin, lin.setpoint, Vec::Zero(3)).norm() == 0.0);

    PiController net{scnn_operator(full_partition(3), rng), scnn_operator(full_partition(3), rng), Vec::Constant(3, 5.0),
                     Vec::Zero(3)};
    const Vec expect = scnn_input_gradient(std::get<Scnn>(std::get<MonotoneOperator>(net.proportional).terms[0]), Vec::Zero(3)) +
                       scnn_input_gradient(std::get<Scnn>(std::get<MonotoneOperator>(net.integral).terms[0]), Vec::Zero(3));
    CHECK(pi_control(net, net.setpoint) == expect);
    CHECK(pi_control(net, y, s) == pi_control(net, y, s));
    CHECK_THROWS_AS(pi_control(net, Vec::Zero(2), s), ShapeError);

    // integral state
    integral_step(net, net.setpoint, 0.02);
    CHECK(net.integral_state.norm() == 0.0);
    Vec yy = net.setpoint;
    yy[0] -= 1.0;
    integral_step(net, yy, 0.02);
    CHECK(net.integral_state[0] == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(net.integral_state[1] == 0.0);
    net.integral_state.setZero();
    const Vec err = oracle::random_vec(3, rng);
    for (int k = 0; k < 50; ++k) {
        integral_step(net, net.setpoint - err, 0.01);
    }
    CHECK(oracle::rel_err(net.integral_state, 50 * 0.01 * err) < 1e-13);
    CHECK_THROWS_AS(integral_step(net, yy, 0.0), DomainError);

    // parameter vector round-trip
    const Vec th = controller_params(net);
    PiController copy = net;
    set_controller_params(copy, th);
    CHECK(pi_control(copy, y, s) == pi_control(net, y, s));
}
