#include "npi/plants.hpp"

#include <Eigen/LU>

#include <cmath>
#include <random>

namespace npi {

namespace {

constexpr double half_pi = 1.57079632679489661923;

Mat laplacian(const PlatoonModel& p) { return p.incidence * p.distance_gain.asDiagonal() * p.incidence.transpose(); }

void check_positive(const Vec& v, const char* what)
{
    if (!v.allFinite() || (v.array() <= 0).any()) {
        throw DomainError(std::string(what) + " must be finite and strictly positive");
    }
}

void check_state(const PlantState& x, Index m)
{
    require_dim(x.position.size(), m, "plant state position");
    require_dim(x.output.size(), m, "plant state output");
}

Vec line_flows(const PowerModel& p, const Vec& delta)
{
    return p.incidence * (p.susceptance.array() * (p.incidence.transpose() * delta).array().sin()).matrix();
}

Equilibrium platoon_equilibrium(const PlatoonModel& p, const Vec& u_star)
{
    const Index m = p.dim();
    const Vec inv_gain = p.gain.cwiseInverse();
    const double velocity =
        (u_star.sum() + p.default_velocity.cwiseProduct(inv_gain).sum()) / inv_gain.sum();
    const Vec rhs = u_star - inv_gain.cwiseProduct(Vec::Constant(m, velocity) - p.default_velocity);
    const Mat lhs = laplacian(p) + Mat::Constant(m, m, 1.0 / static_cast<double>(m));
    Eigen::FullPivLU<Mat> lu(lhs);
    Equilibrium eq;
    eq.input = u_star;
    if (!lu.isInvertible()) {
        eq.feasible = false;
        return eq;
    }
    eq.state.position = lu.solve(rhs);
    eq.state.output = Vec::Constant(m, velocity);
    const PlantState f = platoon_derivative(p, eq.state, u_star);
    eq.residual = std::max(f.position.cwiseAbs().maxCoeff(), f.output.cwiseAbs().maxCoeff());
    eq.feasible = std::isfinite(eq.residual);
    return eq;
}

Equilibrium power_equilibrium(const PowerModel& p, const Vec& u_star, const Vec& start)
{
    const Index m = p.dim();
    const double freq = p.nominal + (u_star.sum() - p.load.sum()) / p.damping.sum();
    const Vec target = u_star - p.load - p.damping * (freq - p.nominal);
    const Vec centered_target = center(target);

    Equilibrium eq;
    eq.input = u_star;
    eq.state.output = Vec::Constant(m, freq);

    Vec delta = start.size() == m ? start : Vec::Zero(m);
    auto residual = [&](const Vec& d) -> Vec {
        return line_flows(p, d) - centered_target + Vec::Constant(m, d.mean());
    };
    Vec g = residual(delta);
    double norm = g.norm();
    constexpr int max_iter = 100;
    constexpr double tol = 1e-10;
    // Polish well below the feasibility tolerance; Newton converges quadratically.
    constexpr double polish = 1e-14;
    int it = 0;
    for (; it < max_iter && g.cwiseAbs().maxCoeff() >= polish; ++it) {
        const Vec cosines = (p.incidence.transpose() * delta).array().cos();
        const Mat jac = p.incidence * (p.susceptance.array() * cosines.array()).matrix().asDiagonal() *
                            p.incidence.transpose() +
                        Mat::Constant(m, m, 1.0 / static_cast<double>(m));
        Eigen::FullPivLU<Mat> lu(jac);
        if (!lu.isInvertible()) {
            break;
        }
        const Vec step = lu.solve(-g);
        double alpha = 1.0;
        bool accepted = false;
        while (alpha > 1e-12) {
            const Vec trial = delta + alpha * step;
            const Vec gt = residual(trial);
            if (gt.allFinite() && gt.norm() <= (1.0 - 1e-4 * alpha) * norm) {
                delta = trial;
                g = gt;
                norm = gt.norm();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            break; // no further decrease possible at machine precision
        }
    }
    eq.iterations = it;
    eq.state.position = delta;
    eq.residual = g.cwiseAbs().maxCoeff();
    eq.feasible = eq.residual < tol && in_operating_region(p, delta);
    return eq;
}

} // namespace

Index plant_dim(const PlantModel& model)
{
    return std::visit([](const auto& p) { return p.dim(); }, model);
}

void validate(const PlantModel& model)
{
    std::visit(overloaded{[](const PlatoonModel& p) {
                              const Index m = p.dim();
                              if (m < 2) {
                                  throw ShapeError("platoon: need at least two vehicles");
                              }
                              require_dim(p.gain.size(), m, "platoon gain");
                              require_dim(p.default_velocity.size(), m, "platoon default velocity");
                              require_dim(p.cost_weight.size(), m, "platoon cost weight");
                              require_dim(p.incidence.rows(), m, "platoon incidence rows");
                              require_dim(p.distance_gain.size(), p.incidence.cols(), "platoon distance gain");
                              check_positive(p.sensitivity, "platoon sensitivity");
                              check_positive(p.gain, "platoon gain");
                              check_positive(p.distance_gain, "platoon distance gain");
                              if (!p.default_velocity.allFinite()) {
                                  throw DomainError("platoon default velocity must be finite");
                              }
                          },
                          [](const PowerModel& p) {
                              const Index m = p.dim();
                              if (m < 2) {
                                  throw ShapeError("power: need at least two generators");
                              }
                              require_dim(p.damping.size(), m, "power damping");
                              require_dim(p.load.size(), m, "power load");
                              require_dim(p.incidence.rows(), m, "power incidence rows");
                              require_dim(p.susceptance.size(), p.incidence.cols(), "power susceptance");
                              check_positive(p.inertia, "power inertia");
                              check_positive(p.damping, "power damping");
                              check_positive(p.susceptance, "power susceptance");
                              if (!p.load.allFinite() || !std::isfinite(p.nominal)) {
                                  throw DomainError("power load and nominal frequency must be finite");
                              }
                          }},
               model);
    const Mat& e = std::visit([](const auto& p) -> const Mat& { return p.incidence; }, model);
    // ker(E^T) = span(1) <=> rank(E) = m - 1 and columns sum to zero.
    if (e.cols() == 0 || e.colwise().sum().cwiseAbs().maxCoeff() > 1e-12) {
        throw DomainError("incidence matrix columns must each sum to zero");
    }
    Eigen::FullPivLU<Mat> lu(e);
    if (lu.rank() != e.rows() - 1) {
        throw DomainError("incidence matrix must describe a connected graph");
    }
}

Mat incidence_from_edges(Index m, const std::vector<std::pair<Index, Index>>& edges)
{
    Mat e = Mat::Zero(m, static_cast<Index>(edges.size()));
    for (std::size_t j = 0; j < edges.size(); ++j) {
        const auto [tail, head] = edges[j];
        if (tail < 0 || head < 0 || tail >= m || head >= m || tail == head) {
            throw ConfigError("edge (" + std::to_string(tail) + ", " + std::to_string(head) + ") is invalid");
        }
        e(tail, static_cast<Index>(j)) = 1.0;
        e(head, static_cast<Index>(j)) = -1.0;
    }
    return e;
}

Mat chain_incidence(Index m)
{
    std::vector<std::pair<Index, Index>> edges;
    for (Index i = 0; i + 1 < m; ++i) {
        edges.emplace_back(i, i + 1);
    }
    return incidence_from_edges(m, edges);
}

Mat ring_incidence(Index m)
{
    std::vector<std::pair<Index, Index>> edges;
    for (Index i = 0; i + 1 < m; ++i) {
        edges.emplace_back(i, i + 1);
    }
    if (m > 2) {
        edges.emplace_back(m - 1, 0);
    }
    return incidence_from_edges(m, edges);
}

PlantState platoon_derivative(const PlatoonModel& model, const PlantState& x, const Vec& u)
{
    const Index m = model.dim();
    check_state(x, m);
    require_dim(u.size(), m, "platoon input");
    const Vec spring = model.incidence * model.distance_gain.cwiseProduct(model.incidence.transpose() * x.position);
    PlantState dx;
    dx.position = center(x.output);
    dx.output = model.sensitivity.cwiseProduct(-(x.output - model.default_velocity) +
                                               model.gain.cwiseProduct(u - spring));
    return dx;
}

PlantState power_derivative(const PowerModel& model, const PlantState& x, const Vec& u, bool* region_violation)
{
    const Index m = model.dim();
    check_state(x, m);
    require_dim(u.size(), m, "power input");
    if (region_violation) {
        *region_violation = !in_operating_region(model, x.position);
    }
    PlantState dx;
    dx.position = center(x.output);
    dx.output = (-model.damping.cwiseProduct((x.output.array() - model.nominal).matrix()) - model.load + u -
                 line_flows(model, x.position))
                    .cwiseQuotient(model.inertia);
    return dx;
}

PlantState plant_derivative(const PlantModel& model, const PlantState& x, const Vec& u, bool* region_violation)
{
    return std::visit(overloaded{[&](const PlatoonModel& p) {
                                     if (region_violation) {
                                         *region_violation = false;
                                     }
                                     return platoon_derivative(p, x, u);
                                 },
                                 [&](const PowerModel& p) { return power_derivative(p, x, u, region_violation); }},
                      model);
}

PlantState plant_vjp(const PlantModel& model, const PlantState& x, const Vec& u, const PlantState& w, Vec& adj_u)
{
    (void)u;
    return std::visit(overloaded{[&](const PlatoonModel& p) {
                                     const Vec kr = p.sensitivity.cwiseProduct(p.gain).cwiseProduct(w.output);
                                     PlantState a;
                                     a.position = -(p.incidence * p.distance_gain.cwiseProduct(p.incidence.transpose() * kr));
                                     a.output = center(w.position) - p.sensitivity.cwiseProduct(w.output);
                                     adj_u = kr;
                                     return a;
                                 },
                                 [&](const PowerModel& p) {
                                     const Vec v = w.output.cwiseQuotient(p.inertia);
                                     const Vec cosines = (p.incidence.transpose() * x.position).array().cos();
                                     PlantState a;
                                     a.position = -(p.incidence * (p.susceptance.array() * cosines.array() *
                                                                   (p.incidence.transpose() * v).array())
                                                                      .matrix());
                                     a.output = center(w.position) - p.damping.cwiseProduct(v);
                                     adj_u = v;
                                     return a;
                                 }},
                      model);
}

bool in_operating_region(const PowerModel& model, const Vec& delta)
{
    return ((model.incidence.transpose() * delta).array().abs() < half_pi).all();
}

Equilibrium solve_equilibrium(const PlantModel& model, const Vec& u_star, const Vec& start_angles)
{
    require_dim(u_star.size(), plant_dim(model), "solve_equilibrium input");
    return std::visit(overloaded{[&](const PlatoonModel& p) { return platoon_equilibrium(p, u_star); },
                                 [&](const PowerModel& p) { return power_equilibrium(p, u_star, start_angles); }},
                      model);
}

double storage_value(const PlantModel& model, const PlantState& x, const Equilibrium& eq)
{
    if (!eq.feasible) {
        throw DomainError("storage_value: infeasible equilibrium");
    }
    check_state(x, plant_dim(model));
    const Vec dy = x.output - eq.state.output;
    const Vec dp = x.position - eq.state.position;
    return std::visit(overloaded{[&](const PlatoonModel& p) {
                                     const Vec w = p.sensitivity.cwiseProduct(p.gain).cwiseInverse();
                                     const Vec et = p.incidence.transpose() * dp;
                                     return 0.5 * dy.dot(w.cwiseProduct(dy)) + 0.5 * et.dot(p.distance_gain.cwiseProduct(et));
                                 },
                                 [&](const PowerModel& p) {
                                     const Vec a = p.incidence.transpose() * x.position;
                                     const Vec a_star = p.incidence.transpose() * eq.state.position;
                                     const double kinetic = 0.5 * dy.dot(p.inertia.cwiseProduct(dy));
                                     const double potential =
                                         -p.susceptance.dot((a.array().cos() - a_star.array().cos()).matrix()) -
                                         line_flows(p, eq.state.position).dot(dp);
                                     return kinetic + potential;
                                 }},
                      model);
}

PlantState storage_gradient(const PlantModel& model, const PlantState& x, const Equilibrium& eq)
{
    if (!eq.feasible) {
        throw DomainError("storage_gradient: infeasible equilibrium");
    }
    check_state(x, plant_dim(model));
    const Vec dy = x.output - eq.state.output;
    return std::visit(overloaded{[&](const PlatoonModel& p) {
                                     PlantState g;
                                     g.position = laplacian(p) * (x.position - eq.state.position);
                                     g.output = dy.cwiseQuotient(p.sensitivity.cwiseProduct(p.gain));
                                     return g;
                                 },
                                 [&](const PowerModel& p) {
                                     PlantState g;
                                     g.position = line_flows(p, x.position) - line_flows(p, eq.state.position);
                                     g.output = p.inertia.cwiseProduct(dy);
                                     return g;
                                 }},
                      model);
}

double passivity_rate(const PlantModel& model)
{
    return std::visit(overloaded{[](const PlatoonModel& p) { return p.gain.cwiseInverse().minCoeff(); },
                                 [](const PowerModel& p) { return p.damping.minCoeff(); }},
                      model);
}

double eip_residual(const PlantModel& model, const PlantState& x, const Vec& u, const Equilibrium& eq)
{
    const PlantState grad = storage_gradient(model, x, eq);
    const PlantState f = plant_derivative(model, x, u);
    const double s_dot = grad.position.dot(f.position) + grad.output.dot(f.output);
    const Vec dy = x.output - eq.state.output;
    return s_dot + passivity_rate(model) * dy.squaredNorm() - dy.dot(u - eq.input);
}

PlatoonModel generate_platoon(Index m, std::uint64_t seed, const PlatoonOptions& opt)
{
    if (m < 2) {
        throw ShapeError("generate_platoon: need at least two vehicles");
    }
    std::mt19937_64 rng(seed);
    auto draw = [&](Index n, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        Vec v(n);
        for (Index i = 0; i < n; ++i) {
            v[i] = d(rng);
        }
        return v;
    };
    PlatoonModel p;
    p.sensitivity = Vec::Constant(m, opt.sensitivity);
    p.default_velocity = draw(m, opt.velocity_lo, opt.velocity_hi);
    p.gain = draw(m, opt.gain_lo, opt.gain_hi);
    p.incidence = chain_incidence(m);
    p.distance_gain = draw(m - 1, opt.distance_lo, opt.distance_hi);
    p.cost_weight = draw(m, opt.cost_lo, opt.cost_hi);
    return p;
}

PowerModel generate_power(Index m, std::uint64_t seed, const PowerOptions& opt)
{
    if (m < 2) {
        throw ShapeError("generate_power: need at least two generators");
    }
    std::mt19937_64 rng(seed);
    auto draw = [&](Index n, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        Vec v(n);
        for (Index i = 0; i < n; ++i) {
            v[i] = d(rng);
        }
        return v;
    };
    PowerModel p;
    p.inertia = draw(m, opt.inertia_lo, opt.inertia_hi);
    p.damping = draw(m, opt.damping_lo, opt.damping_hi);
    p.incidence = opt.ring ? ring_incidence(m) : chain_incidence(m);
    p.susceptance = draw(p.incidence.cols(), opt.susceptance_lo, opt.susceptance_hi);
    p.load = opt.base_load > 0 ? center(draw(m, -opt.base_load, opt.base_load)) : Vec::Zero(m);
    return p;
}

} // namespace npi
