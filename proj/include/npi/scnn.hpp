#pragma once

#include "npi/activation.hpp"
#include "npi/core.hpp"

#include <random>
#include <vector>

namespace npi {

/// Floor added to the softplus map of hidden pre-parameters; keeps every
/// effective hidden weight strictly positive.
inline constexpr double hidden_weight_floor = 1e-6;

/// Strictly convex scalar network
///   o_{l+1} = softplus_beta(W^(o)_l o_l + W^(z)_l z + b_l),  g(z) = o_k,
/// with o_0 = 0 and W^(o)_0 = 0. Hidden weights are stored as unconstrained
/// pre-parameters P_l and mapped through softplus(P_l) + hidden_weight_floor;
/// beta is stored as log(beta).
struct Scnn {
    std::vector<Mat> input_weights; // W^(z)_l, width_l x m, l = 0..k-1
    std::vector<Mat> hidden_pre;    // P_l for l = 1..k-1, stored at l-1
    std::vector<Vec> biases;        // b_l, l = 0..k-1
    double beta_pre = 0.0;
    std::vector<Mat> hidden;        // effective W^(o)_l cache, see refresh_hidden

    Index input_dim() const { return input_weights.front().cols(); }
    int layer_count() const { return static_cast<int>(input_weights.size()); }
    double beta() const { return std::exp(beta_pre); }
    Index width(int layer) const { return input_weights[layer].rows(); }
};

struct ScnnInit {
    double input_scale = 3.0;  // W^(z) ~ U[-a, a], a = input_scale / sqrt(m)
    double hidden_scale = 3.0; // effective W^(o) ~ U[0.5, 1.5] hidden_scale / fan_in
    double bias_scale = 0.0;   // b ~ U[-bias_scale, bias_scale]
    double beta = 5.0;
    bool mirrored = true;      // paired units; makes g even with grad g(0) = 0
};

/// Builds a k = hidden.size()+1 layer network with a scalar output layer.
Scnn make_scnn(Index input_dim, const std::vector<int>& hidden, std::mt19937_64& rng,
               const ScnnInit& init = {});

/// Recomputes the effective hidden weights from the pre-parameters. Needed
/// only after editing hidden_pre by hand.
void refresh_hidden(Scnn& net);

/// Effective (positive) hidden weight matrix of `layer` in 1..k-1.
inline const Mat& hidden_weight(const Scnn& net, int layer) { return net.hidden[layer - 1]; }

/// Sets the pre-parameters so that hidden_weight(net, layer) == w. Entries of w
/// must exceed hidden_weight_floor.
void set_hidden_weight(Scnn& net, int layer, const Mat& w);

/// Structural and finiteness checks; throws ShapeError / DomainError.
void validate(const Scnn& net);

/// Everything the reverse passes need from one forward evaluation.
struct ScnnRecord {
    Vec z;
    double beta = 1.0;
    std::vector<Vec> pre;     // a_l
    std::vector<Vec> out;     // o_{l+1}
    double value = 0.0;
};

ScnnRecord scnn_forward(const Scnn& net, const Vec& z);
double scnn_value(const Scnn& net, const Vec& z);

Vec scnn_input_gradient(const Scnn& net, const Vec& z);
Vec scnn_input_gradient(const ScnnRecord& rec, const Scnn& net);

/// Hessian-vector product H(z) c.
Vec scnn_hvp(const Scnn& net, const ScnnRecord& rec, const Vec& c);
Mat scnn_hessian(const Scnn& net, const Vec& z);

/// Reverse pass for L = value_seed * g(z) + grad_seed^T grad_z g(z).
/// Accumulates dL/dtheta into `param_grad` (layout of scnn_pack) and returns
/// dL/dz. An empty grad_seed means zero.
Vec scnn_backward(const Scnn& net, const ScnnRecord& rec, double value_seed,
                  const Vec& grad_seed, VecRef param_grad);

Index scnn_param_count(const Scnn& net);
void scnn_pack(const Scnn& net, VecRef out);
void scnn_unpack(Scnn& net, ConstVecRef in);

} // namespace npi
