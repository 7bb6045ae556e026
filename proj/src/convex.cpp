#include "npi/convex.hpp"

#include <Eigen/Cholesky>

namespace npi {

namespace {

Index tri_count(Index n) { return n * (n + 1) / 2; }

} // namespace

Quadratic quadratic_convex(const Mat& k)
{
    if (k.rows() != k.cols() || k.rows() == 0) {
        throw ShapeError("quadratic_convex: matrix must be square and non-empty");
    }
    if (!k.allFinite()) {
        throw DomainError("quadratic_convex: non-finite entries");
    }
    const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
    if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw DomainError("quadratic_convex: matrix is not symmetric");
    }
    Eigen::LLT<Mat> llt(0.5 * (k + k.transpose()));
    if (llt.info() != Eigen::Success) {
        throw DomainError("quadratic_convex: matrix is not positive definite");
    }
    Mat l = llt.matrixL();
    if ((l.diagonal().array() <= 0).any()) {
        throw DomainError("quadratic_convex: matrix is not positive definite");
    }
    return Quadratic{std::move(l), 0.0};
}

Quadratic quadratic_identity(Index dim, double gain, double eps)
{
    if (!(gain > eps) || eps < 0) {
        throw DomainError("quadratic_identity: need gain > eps >= 0");
    }
    return Quadratic{std::sqrt(gain - eps) * Mat::Identity(dim, dim), eps};
}

Index input_dim(const ConvexFunction& g)
{
    return std::visit([](const auto& f) { return f.input_dim(); }, g);
}

double convex_value(const ConvexFunction& g, const Vec& z)
{
    return std::visit(overloaded{[&](const Scnn& f) { return scnn_value(f, z); },
                                 [&](const Quadratic& q) {
                                     require_dim(z.size(), q.input_dim(), "quadratic value");
                                     return 0.5 * z.dot(q.matrix() * z);
                                 }},
                      g);
}

Vec convex_gradient(const ConvexFunction& g, const Vec& z)
{
    return std::visit(overloaded{[&](const Scnn& f) { return scnn_input_gradient(f, z); },
                                 [&](const Quadratic& q) -> Vec {
                                     require_dim(z.size(), q.input_dim(), "quadratic gradient");
                                     return q.factor * (q.factor.transpose() * z) + q.eps * z;
                                 }},
                      g);
}

Mat convex_hessian(const ConvexFunction& g, const Vec& z)
{
    return std::visit(overloaded{[&](const Scnn& f) { return scnn_hessian(f, z); },
                                 [&](const Quadratic& q) -> Mat {
                                     require_dim(z.size(), q.input_dim(), "quadratic hessian");
                                     return q.matrix();
                                 }},
                      g);
}

Vec convex_backward(const ConvexFunction& g, const Vec& z, double value_seed, const Vec& grad_seed,
                    VecRef param_grad)
{
    return std::visit(
        overloaded{[&](const Scnn& f) { return scnn_backward(f, scnn_forward(f, z), value_seed, grad_seed, param_grad); },
                   [&](const Quadratic& q) -> Vec {
                       const Index n = q.input_dim();
                       require_dim(z.size(), n, "quadratic backward");
                       require_dim(param_grad.size(), tri_count(n), "quadratic backward param_grad");
                       const Vec c = grad_seed.size() ? grad_seed : Vec::Zero(n);
                       // d/dL of a/2 z^T L L^T z + c^T L L^T z = (a z z^T + c z^T + z c^T) L
                       const Mat outer = value_seed * z * z.transpose() + c * z.transpose() + z * c.transpose();
                       const Mat gl = outer * q.factor;
                       Index at = 0;
                       for (Index r = 0; r < n; ++r) {
                           for (Index col = 0; col <= r; ++col) {
                               param_grad[at++] += gl(r, col);
                           }
                       }
                       const Mat k = q.matrix();
                       return value_seed * (k * z) + k * c;
                   }},
        g);
}

Index param_count(const ConvexFunction& g)
{
    return std::visit(overloaded{[](const Scnn& f) { return scnn_param_count(f); },
                                 [](const Quadratic& q) { return tri_count(q.input_dim()); }},
                      g);
}

void pack(const ConvexFunction& g, VecRef out)
{
    std::visit(overloaded{[&](const Scnn& f) { scnn_pack(f, out); },
                          [&](const Quadratic& q) {
                              require_dim(out.size(), tri_count(q.input_dim()), "quadratic pack");
                              Index at = 0;
                              for (Index r = 0; r < q.input_dim(); ++r) {
                                  for (Index c = 0; c <= r; ++c) {
                                      out[at++] = q.factor(r, c);
                                  }
                              }
                          }},
               g);
}

void unpack(ConvexFunction& g, ConstVecRef in)
{
    std::visit(overloaded{[&](Scnn& f) { scnn_unpack(f, in); },
                          [&](Quadratic& q) {
                              require_dim(in.size(), tri_count(q.input_dim()), "quadratic unpack");
                              Index at = 0;
                              q.factor.setZero();
                              for (Index r = 0; r < q.input_dim(); ++r) {
                                  for (Index c = 0; c <= r; ++c) {
                                      q.factor(r, c) = in[at++];
                                  }
                              }
                          }},
               g);
}

} // namespace npi
