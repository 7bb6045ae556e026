#include "npi/monotone.hpp"

#include <algorithm>

namespace npi {

namespace {

Vec gather(const Vec& z, const std::vector<Index>& idx)
{
    Vec out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out[static_cast<Index>(i)] = z[idx[i]];
    }
    return out;
}

void scatter_add(Vec& dst, const Vec& src, const std::vector<Index>& idx)
{
    for (std::size_t i = 0; i < idx.size(); ++i) {
        dst[idx[i]] += src[static_cast<Index>(i)];
    }
}

} // namespace

CommPartition make_partition(Index dim, std::vector<std::vector<Index>> groups)
{
    if (dim < 1) {
        throw ShapeError("partition: dimension must be positive");
    }
    for (const auto& g : groups) {
        if (g.empty()) {
            throw ConfigError("partition: empty group");
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] < 0 || g[i] >= dim) {
                throw ConfigError("partition: index " + std::to_string(g[i]) + " out of range");
            }
            if (i > 0 && g[i] <= g[i - 1]) {
                throw ConfigError("partition: group indices must be sorted and duplicate-free");
            }
        }
    }
    return CommPartition{dim, std::move(groups)};
}

CommPartition full_partition(Index dim)
{
    std::vector<Index> all(static_cast<std::size_t>(dim));
    for (Index i = 0; i < dim; ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    return make_partition(dim, {all});
}

CommPartition decentralized_partition(Index dim)
{
    std::vector<std::vector<Index>> groups;
    for (Index i = 0; i < dim; ++i) {
        groups.push_back({i});
    }
    return make_partition(dim, std::move(groups));
}

CommPartition half_partition(Index dim)
{
    const Index shared = (dim + 1) / 2;
    std::vector<std::vector<Index>> groups(1);
    for (Index i = 0; i < shared; ++i) {
        groups[0].push_back(i);
    }
    for (Index i = shared; i < dim; ++i) {
        groups.push_back({i});
    }
    return make_partition(dim, std::move(groups));
}

std::vector<Index> uncovered_indices(const CommPartition& p)
{
    std::vector<bool> seen(static_cast<std::size_t>(p.dim), false);
    for (const auto& g : p.groups) {
        for (Index i : g) {
            seen[static_cast<std::size_t>(i)] = true;
        }
    }
    std::vector<Index> out;
    for (Index i = 0; i < p.dim; ++i) {
        if (!seen[static_cast<std::size_t>(i)]) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::string> partition_warnings(const CommPartition& p)
{
    std::vector<std::string> out;
    for (Index i : uncovered_indices(p)) {
        out.push_back("index " + std::to_string(i) + " belongs to no communication group; its control term is zero");
    }
    return out;
}

void validate(const MonotoneOperator& op)
{
    if (op.terms.size() != op.partition.groups.size()) {
        throw ShapeError("monotone operator: one convex term per group required");
    }
    for (std::size_t j = 0; j < op.terms.size(); ++j) {
        require_dim(input_dim(op.terms[j]), static_cast<Index>(op.partition.groups[j].size()), "monotone operator group");
        if (const auto* s = std::get_if<Scnn>(&op.terms[j])) {
            validate(*s);
        }
    }
}

Vec operator_eval(const MonotoneOperator& op, const Vec& z)
{
    require_dim(z.size(), op.partition.dim, "operator_eval");
    Vec out = Vec::Zero(op.partition.dim);
    for (std::size_t j = 0; j < op.terms.size(); ++j) {
        const auto& idx = op.partition.groups[j];
        scatter_add(out, convex_gradient(op.terms[j], gather(z, idx)), idx);
    }
    return out;
}

double potential_value(const MonotoneOperator& op, const Vec& z)
{
    require_dim(z.size(), op.partition.dim, "potential_value");
    double v = 0.0;
    for (std::size_t j = 0; j < op.terms.size(); ++j) {
        v += convex_value(op.terms[j], gather(z, op.partition.groups[j]));
    }
    return v;
}

Index term_dim(const ControlTerm& t)
{
    return std::visit(overloaded{[](const MonotoneOperator& op) { return op.partition.dim; },
                                 [](const DenseNet& n) { return n.input_dim(); },
                                 [](const LinearMap& l) { return l.input_dim(); }},
                      t);
}

bool is_gradient_map(const ControlTerm& t) { return std::holds_alternative<MonotoneOperator>(t); }

Vec term_eval(const ControlTerm& t, const Vec& z)
{
    return std::visit(overloaded{[&](const MonotoneOperator& op) { return operator_eval(op, z); },
                                 [&](const DenseNet& n) { return dense_eval(n, z); },
                                 [&](const LinearMap& l) -> Vec {
                                     require_dim(z.size(), l.input_dim(), "linear map");
                                     return l.gain * z;
                                 }},
                      t);
}

Mat term_jacobian(const ControlTerm& t, const Vec& z)
{
    return std::visit(overloaded{[&](const MonotoneOperator& op) -> Mat {
                                     require_dim(z.size(), op.partition.dim, "operator jacobian");
                                     Mat j = Mat::Zero(op.partition.dim, op.partition.dim);
                                     for (std::size_t g = 0; g < op.terms.size(); ++g) {
                                         const auto& idx = op.partition.groups[g];
                                         const Mat h = convex_hessian(op.terms[g], gather(z, idx));
                                         for (std::size_t a = 0; a < idx.size(); ++a) {
                                             for (std::size_t b = 0; b < idx.size(); ++b) {
                                                 j(idx[a], idx[b]) += h(static_cast<Index>(a), static_cast<Index>(b));
                                             }
                                         }
                                     }
                                     return j;
                                 },
                                 [&](const DenseNet& n) { return dense_jacobian(n, z); },
                                 [&](const LinearMap& l) -> Mat { return l.gain; }},
                      t);
}

Vec term_backward(const ControlTerm& t, const Vec& z, const Vec& seed, VecRef param_grad)
{
    return std::visit(
        overloaded{[&](const MonotoneOperator& op) -> Vec {
                       require_dim(z.size(), op.partition.dim, "operator backward");
                       Vec gz = Vec::Zero(op.partition.dim);
                       Index at = 0;
                       for (std::size_t j = 0; j < op.terms.size(); ++j) {
                           const auto& idx = op.partition.groups[j];
                           const Index n = param_count(op.terms[j]);
                           scatter_add(gz,
                                       convex_backward(op.terms[j], gather(z, idx), 0.0, gather(seed, idx),
                                                       param_grad.segment(at, n)),
                                       idx);
                           at += n;
                       }
                       return gz;
                   },
                   [&](const DenseNet& n) { return dense_backward(n, z, seed, param_grad); },
                   [&](const LinearMap& l) -> Vec {
                       const Index n = l.input_dim();
                       Index at = 0;
                       for (Index r = 0; r < n; ++r) {
                           for (Index c = 0; c < n; ++c) {
                               param_grad[at++] += seed[r] * z[c];
                           }
                       }
                       return l.gain.transpose() * seed;
                   }},
        t);
}

Index param_count(const ControlTerm& t)
{
    return std::visit(overloaded{[](const MonotoneOperator& op) {
                                     Index n = 0;
                                     for (const auto& g : op.terms) {
                                         n += param_count(g);
                                     }
                                     return n;
                                 },
                                 [](const DenseNet& d) { return dense_param_count(d); },
                                 [](const LinearMap& l) { return l.gain.size(); }},
                      t);
}

void pack(const ControlTerm& t, VecRef out)
{
    std::visit(overloaded{[&](const MonotoneOperator& op) {
                              Index at = 0;
                              for (const auto& g : op.terms) {
                                  const Index n = param_count(g);
                                  pack(g, out.segment(at, n));
                                  at += n;
                              }
                          },
                          [&](const DenseNet& d) { dense_pack(d, out); },
                          [&](const LinearMap& l) {
                              const Index n = l.input_dim();
                              for (Index r = 0; r < n; ++r) {
                                  for (Index c = 0; c < n; ++c) {
                                      out[r * n + c] = l.gain(r, c);
                                  }
                              }
                          }},
               t);
}

void unpack(ControlTerm& t, ConstVecRef in)
{
    std::visit(overloaded{[&](MonotoneOperator& op) {
                              Index at = 0;
                              for (auto& g : op.terms) {
                                  const Index n = param_count(g);
                                  unpack(g, in.segment(at, n));
                                  at += n;
                              }
                          },
                          [&](DenseNet& d) { dense_unpack(d, in); },
                          [&](LinearMap& l) {
                              const Index n = l.input_dim();
                              for (Index r = 0; r < n; ++r) {
                                  for (Index c = 0; c < n; ++c) {
                                      l.gain(r, c) = in[r * n + c];
                                  }
                              }
                          }},
               t);
}

MonotonicityReport monotonicity_probe(const ControlTerm& t, const std::vector<std::pair<Vec, Vec>>& pairs)
{
    MonotonicityReport rep;
    rep.worst_normalized = std::numeric_limits<double>::infinity();
    for (const auto& [eta, xi] : pairs) {
        const Vec d = eta - xi;
        const double ip = (term_eval(t, eta) - term_eval(t, xi)).dot(d);
        rep.inner_products.push_back(ip);
        if (ip < -1e-12) {
            rep.pass = false;
        }
        if (d.norm() > 1e-6) {
            if (!(ip > 0)) {
                rep.pass = false;
            }
            rep.worst_normalized = std::min(rep.worst_normalized, ip / d.squaredNorm());
        }
    }
    return rep;
}

void validate(const PiController& c)
{
    const Index m = c.setpoint.size();
    require_dim(term_dim(c.proportional), m, "controller proportional term");
    require_dim(term_dim(c.integral), m, "controller integral term");
    require_dim(c.integral_state.size(), m, "controller integral state");
    for (const ControlTerm* t : {&c.proportional, &c.integral}) {
        if (const auto* op = std::get_if<MonotoneOperator>(t)) {
            validate(*op);
        }
    }
}

Vec pi_control(const PiController& c, const Vec& y, const Vec& s)
{
    require_dim(y.size(), c.dim(), "pi_control output");
    require_dim(s.size(), c.dim(), "pi_control integral state");
    return term_eval(c.proportional, c.setpoint - y) + term_eval(c.integral, s);
}

void integral_step(PiController& c, const Vec& y, double dt)
{
    require_dim(y.size(), c.dim(), "integral_step");
    if (!(dt > 0)) {
        throw DomainError("integral_step: dt must be positive");
    }
    c.integral_state += dt * (c.setpoint - y);
}

Index param_count(const PiController& c) { return param_count(c.proportional) + param_count(c.integral); }

Vec controller_params(const PiController& c)
{
    const Index np = param_count(c.proportional);
    Vec theta(param_count(c));
    pack(c.proportional, theta.head(np));
    pack(c.integral, theta.tail(theta.size() - np));
    return theta;
}

void set_controller_params(PiController& c, const Vec& theta)
{
    require_dim(theta.size(), param_count(c), "set_controller_params");
    const Index np = param_count(c.proportional);
    unpack(c.proportional, theta.head(np));
    unpack(c.integral, theta.tail(theta.size() - np));
}

} // namespace npi
