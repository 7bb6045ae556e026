#pragma once

#include "npi/core.hpp"
#include "npi/scnn.hpp"

#include <variant>

namespace npi {

/// g(z) = 1/2 z^T K z with K = L L^T + eps I, L lower triangular.
/// The trainable parameters are the lower-triangular entries of L.
struct Quadratic {
    Mat factor; // L
    double eps = 0.0;

    Index input_dim() const { return factor.rows(); }
    Mat matrix() const { return factor * factor.transpose() + eps * Mat::Identity(factor.rows(), factor.rows()); }
};

/// Handle for g(z) = 1/2 z^T K z. Throws DomainError unless K is symmetric and
/// strictly positive definite.
Quadratic quadratic_convex(const Mat& k);

/// K = L L^T + eps I with L = sqrt(gain - eps) I, used as a trainable Linear-PI term.
Quadratic quadratic_identity(Index dim, double gain = 1.0, double eps = 1e-6);

/// Any strictly convex function whose input-gradient can serve as a controller term.
using ConvexFunction = std::variant<Scnn, Quadratic>;

Index input_dim(const ConvexFunction& g);
double convex_value(const ConvexFunction& g, const Vec& z);
Vec convex_gradient(const ConvexFunction& g, const Vec& z);
Mat convex_hessian(const ConvexFunction& g, const Vec& z);

/// Reverse pass for L = value_seed * g(z) + grad_seed^T grad g(z); accumulates
/// dL/dtheta into param_grad and returns dL/dz.
Vec convex_backward(const ConvexFunction& g, const Vec& z, double value_seed, const Vec& grad_seed,
                    VecRef param_grad);

Index param_count(const ConvexFunction& g);
void pack(const ConvexFunction& g, VecRef out);
void unpack(ConvexFunction& g, ConstVecRef in);

} // namespace npi
