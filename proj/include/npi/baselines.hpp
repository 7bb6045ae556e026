#pragma once

#include "npi/core.hpp"

#include <random>
#include <vector>

namespace npi {

/// Unstructured control term: the same layer recursion as Scnn but with signed
/// hidden weights and a linear vector-valued output layer, so the control is
/// the raw network output rather than a gradient.
struct DenseNet {
    std::vector<Mat> input_weights; // W^(z)_l
    std::vector<Mat> hidden;        // W^(o)_l for l = 1..k-1, stored at l-1 (unconstrained)
    std::vector<Vec> biases;
    double beta_pre = 0.0;

    Index input_dim() const { return input_weights.front().cols(); }
    Index output_dim() const { return input_weights.back().rows(); }
    int layer_count() const { return static_cast<int>(input_weights.size()); }
};

DenseNet make_dense(Index dim, const std::vector<int>& hidden, std::mt19937_64& rng, double beta = 5.0);

Vec dense_eval(const DenseNet& net, const Vec& z);
Mat dense_jacobian(const DenseNet& net, const Vec& z);
/// Returns J(z)^T seed and accumulates d(seed^T net(z))/dtheta.
Vec dense_backward(const DenseNet& net, const Vec& z, const Vec& seed, VecRef param_grad);

Index dense_param_count(const DenseNet& net);
void dense_pack(const DenseNet& net, VecRef out);
void dense_unpack(DenseNet& net, ConstVecRef in);

/// u = K z with an unconstrained square gain matrix.
struct LinearMap {
    Mat gain;
    Index input_dim() const { return gain.cols(); }
};

} // namespace npi
