#pragma once

#include "npi/baselines.hpp"
#include "npi/convex.hpp"
#include "npi/core.hpp"

#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace npi {

/// Groups of signal indices (0-based) that may share measurements.
struct CommPartition {
    Index dim = 0;
    std::vector<std::vector<Index>> groups;
};

/// Validates sortedness, uniqueness and range of every group. Indices that
/// appear in no group are allowed; see uncovered_indices.
CommPartition make_partition(Index dim, std::vector<std::vector<Index>> groups);
CommPartition full_partition(Index dim);
CommPartition decentralized_partition(Index dim);
/// First ceil(dim/2) indices share one group; the rest are decentralized.
CommPartition half_partition(Index dim);

std::vector<Index> uncovered_indices(const CommPartition& p);
std::vector<std::string> partition_warnings(const CommPartition& p);

/// Sum over groups of scattered convex-function gradients:
///   q(z) = sum_j scatter(grad g_j(z[v_j]), v_j).
struct MonotoneOperator {
    CommPartition partition;
    std::vector<ConvexFunction> terms; // one per group
};

void validate(const MonotoneOperator& op);
Vec operator_eval(const MonotoneOperator& op, const Vec& z);
/// Sum of group potentials, the convex function whose gradient is operator_eval.
double potential_value(const MonotoneOperator& op, const Vec& z);

/// A proportional or integral control term. Only MonotoneOperator carries the
/// strict-monotonicity guarantee; the others are baselines.
using ControlTerm = std::variant<MonotoneOperator, DenseNet, LinearMap>;

Index term_dim(const ControlTerm& t);
bool is_gradient_map(const ControlTerm& t);
Vec term_eval(const ControlTerm& t, const Vec& z);
Mat term_jacobian(const ControlTerm& t, const Vec& z);
/// Returns J(z)^T seed and accumulates d(seed^T term(z))/dtheta into param_grad.
Vec term_backward(const ControlTerm& t, const Vec& z, const Vec& seed, VecRef param_grad);

Index param_count(const ControlTerm& t);
void pack(const ControlTerm& t, VecRef out);
void unpack(ControlTerm& t, ConstVecRef in);

struct MonotonicityReport {
    std::vector<double> inner_products;
    double worst_normalized = 0.0; // min of inner / |eta - xi|^2 over separated pairs
    bool pass = true;
};

/// (q(eta) - q(xi))^T (eta - xi) for each pair. Passes iff all are >= -1e-12 and
/// every pair with |eta - xi| > 1e-6 is strictly positive.
MonotonicityReport monotonicity_probe(const ControlTerm& t, const std::vector<std::pair<Vec, Vec>>& pairs);

/// u = p(setpoint - y) + r(s), s' = -(y - setpoint).
struct PiController {
    ControlTerm proportional;
    ControlTerm integral;
    Vec setpoint;
    Vec integral_state;

    Index dim() const { return setpoint.size(); }
};

void validate(const PiController& c);
Vec pi_control(const PiController& c, const Vec& y, const Vec& s);
inline Vec pi_control(const PiController& c, const Vec& y) { return pi_control(c, y, c.integral_state); }
/// Explicit Euler update s += dt (setpoint - y).
void integral_step(PiController& c, const Vec& y, double dt);

Index param_count(const PiController& c);
Vec controller_params(const PiController& c);
void set_controller_params(PiController& c, const Vec& theta);

} // namespace npi
