#include "npi/scnn.hpp"

#include <cmath>

namespace npi {

namespace {

double inverse_softplus(double w) { return std::log(std::expm1(w)); }

} // namespace

void refresh_hidden(Scnn& net)
{
    net.hidden.resize(net.hidden_pre.size());
    for (std::size_t i = 0; i < net.hidden_pre.size(); ++i) {
        net.hidden[i] = net.hidden_pre[i].unaryExpr([](double p) { return softplus(p, 1.0) + hidden_weight_floor; });
    }
}

Scnn make_scnn(Index input_dim, const std::vector<int>& hidden, std::mt19937_64& rng, const ScnnInit& init)
{
    if (input_dim < 1) {
        throw ShapeError("make_scnn: input dimension must be positive");
    }
    if (!(init.beta > 0)) {
        throw DomainError("make_scnn: beta must be positive");
    }
    std::vector<int> widths = hidden;
    widths.push_back(1);

    const double a = init.input_scale / std::sqrt(static_cast<double>(input_dim));
    std::uniform_real_distribution<double> input_dist(-a, a);
    std::uniform_real_distribution<double> bias_dist(-init.bias_scale, init.bias_scale);
    // Effective hidden weights are drawn in [0.5, 1.5] * hidden_scale / fan_in.
    std::uniform_real_distribution<double> hidden_dist(0.5, 1.5);

    // Mirrored layout: units 2j and 2j+1 form a pair with opposite input
    // weights and equal biases, and every hidden weight equals the weight of
    // the partner edge. Then g(-z) = g(z) and grad g(0) = 0 exactly. A unit
    // without a partner (odd width, and the output unit) gets zero input weights.
    auto partner = [&](std::size_t layer, Index i) -> Index {
        if (!init.mirrored) {
            return i;
        }
        const Index w = widths[layer];
        return (i ^ 1) < w ? (i ^ 1) : i;
    };

    Scnn net;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        if (widths[l] < 1) {
            throw ShapeError("make_scnn: layer widths must be positive");
        }
        Mat wz = Mat::Zero(widths[l], input_dim);
        Vec b = Vec::Zero(widths[l]);
        for (Index r = 0; r < widths[l]; ++r) {
            const Index q = partner(l, r);
            if (q < r) {
                wz.row(r) = -wz.row(q);
                b[r] = b[q];
                continue;
            }
            if (q != r || !init.mirrored) {
                for (Index c = 0; c < input_dim; ++c) {
                    wz(r, c) = input_dist(rng);
                }
            }
            b[r] = init.bias_scale > 0 ? bias_dist(rng) : 0.0;
        }
        net.input_weights.push_back(std::move(wz));
        if (l > 0) {
            const double fan_in = widths[l - 1];
            Mat w = Mat::Constant(widths[l], widths[l - 1], -1.0);
            for (Index r = 0; r < w.rows(); ++r) {
                for (Index c = 0; c < w.cols(); ++c) {
                    if (w(r, c) < 0) {
                        const double v = std::max(hidden_dist(rng) * init.hidden_scale / fan_in, 2 * hidden_weight_floor);
                        w(r, c) = v;
                        w(partner(l, r), partner(l - 1, c)) = v;
                    }
                }
            }
            net.hidden_pre.push_back(w.unaryExpr([](double v) { return inverse_softplus(v - hidden_weight_floor); }));
        }
        net.biases.push_back(std::move(b));
    }
    net.beta_pre = std::log(init.beta);
    refresh_hidden(net);
    return net;
}

void set_hidden_weight(Scnn& net, int layer, const Mat& w)
{
    Mat& p = net.hidden_pre.at(layer - 1);
    require_dim(w.rows(), p.rows(), "set_hidden_weight rows");
    require_dim(w.cols(), p.cols(), "set_hidden_weight cols");
    if ((w.array() <= hidden_weight_floor).any()) {
        throw DomainError("set_hidden_weight: weights must exceed the positivity floor");
    }
    p = w.unaryExpr([](double x) { return inverse_softplus(x - hidden_weight_floor); });
    refresh_hidden(net);
}

void validate(const Scnn& net)
{
    const int k = net.layer_count();
    if (k < 1) {
        throw ShapeError("scnn: no layers");
    }
    if (static_cast<int>(net.biases.size()) != k || static_cast<int>(net.hidden_pre.size()) != k - 1 ||
        net.hidden.size() != net.hidden_pre.size()) {
        throw ShapeError("scnn: inconsistent layer count");
    }
    const Index m = net.input_dim();
    for (int l = 0; l < k; ++l) {
        require_dim(net.input_weights[l].cols(), m, "scnn input weight cols");
        require_dim(net.biases[l].size(), net.input_weights[l].rows(), "scnn bias size");
        if (l > 0) {
            require_dim(net.hidden_pre[l - 1].rows(), net.width(l), "scnn hidden rows");
            require_dim(net.hidden_pre[l - 1].cols(), net.width(l - 1), "scnn hidden cols");
            if (!net.hidden_pre[l - 1].allFinite()) {
                throw DomainError("scnn: non-finite hidden weights");
            }
        }
        if (!net.input_weights[l].allFinite() || !net.biases[l].allFinite()) {
            throw DomainError("scnn: non-finite weights");
        }
    }
    require_dim(net.width(k - 1), 1, "scnn output width");
    if (!std::isfinite(net.beta_pre)) {
        throw DomainError("scnn: non-finite beta");
    }
}

ScnnRecord scnn_forward(const Scnn& net, const Vec& z)
{
    require_dim(z.size(), net.input_dim(), "scnn_forward");
    const int k = net.layer_count();
    ScnnRecord rec;
    rec.z = z;
    rec.beta = net.beta();
    rec.pre.resize(k);
    rec.out.resize(k);
    for (int l = 0; l < k; ++l) {
        Vec a = net.input_weights[l] * z + net.biases[l];
        if (l > 0) {
            a.noalias() += net.hidden[l - 1] * rec.out[l - 1];
        }
        const double beta = rec.beta;
        rec.out[l] = a.unaryExpr([beta](double x) { return softplus(x, beta); });
        rec.pre[l] = std::move(a);
    }
    rec.value = rec.out[k - 1][0];
    return rec;
}

double scnn_value(const Scnn& net, const Vec& z) { return scnn_forward(net, z).value; }

Vec scnn_input_gradient(const ScnnRecord& rec, const Scnn& net)
{
    const int k = net.layer_count();
    const double beta = rec.beta;
    auto slope = [beta](double x) { return logistic(beta * x); };
    Vec d = rec.pre[k - 1].unaryExpr(slope);
    Vec grad = net.input_weights[k - 1].transpose() * d;
    for (int l = k - 1; l >= 1; --l) {
        d = rec.pre[l - 1].unaryExpr(slope).cwiseProduct(net.hidden[l - 1].transpose() * d);
        grad.noalias() += net.input_weights[l - 1].transpose() * d;
    }
    return grad;
}

Vec scnn_input_gradient(const Scnn& net, const Vec& z) { return scnn_input_gradient(scnn_forward(net, z), net); }

namespace {

// Reverse pass over the joint primal + tangent graph. The tangent is the
// forward-mode directional derivative along c, so its output equals c^T grad g.
// param_grad may be null when only dL/dz is wanted.
Vec backward_impl(const Scnn& net, const ScnnRecord& rec, double value_seed, const Vec& c, double* param_grad)
{
    const int k = net.layer_count();
    const Index m = net.input_dim();
    const double beta = rec.beta;
    const bool has_tangent = c.size() > 0;
    if (has_tangent) {
        require_dim(c.size(), m, "scnn_backward grad seed");
    }

    // Tangent forward.
    std::vector<Vec> tpre(k), tout(k);
    if (has_tangent) {
        for (int l = 0; l < k; ++l) {
            Vec ta = net.input_weights[l] * c;
            if (l > 0) {
                ta.noalias() += net.hidden[l - 1] * tout[l - 1];
            }
            tout[l] = ta.cwiseProduct(rec.pre[l].unaryExpr([beta](double x) { return logistic(beta * x); }));
            tpre[l] = std::move(ta);
        }
    }

    // Offsets of each layer block inside the packed parameter vector.
    std::vector<Index> block(k);
    Index cursor = 0;
    for (int l = 0; l < k; ++l) {
        block[l] = cursor;
        cursor += net.input_weights[l].size() + net.biases[l].size();
        if (l > 0) {
            cursor += net.hidden_pre[l - 1].size();
        }
    }
    const Index beta_index = cursor;

    Vec gz = Vec::Zero(m);
    Vec adj_out = Vec::Constant(1, value_seed);
    Vec adj_tout = Vec::Constant(1, has_tangent ? 1.0 : 0.0);
    double gbeta = 0.0;

    for (int l = k - 1; l >= 0; --l) {
        const Index w = net.width(l);
        Vec adj_pre(w), adj_tpre(w);
        for (Index i = 0; i < w; ++i) {
            const SoftplusTerms t = softplus_terms(rec.pre[l][i], beta);
            const double ta = has_tangent ? tpre[l][i] : 0.0;
            adj_tpre[i] = adj_tout[i] * t.d1;
            adj_pre[i] = adj_out[i] * t.d1 + adj_tout[i] * t.d2 * ta;
            gbeta += adj_out[i] * t.dbeta + adj_tout[i] * t.d1beta * ta;
        }
        gz.noalias() += net.input_weights[l].transpose() * adj_pre;

        if (param_grad) {
            double* g = param_grad;
            Index at = block[l];
            Mat gwz = adj_pre * rec.z.transpose();
            if (has_tangent) {
                gwz.noalias() += adj_tpre * c.transpose();
            }
            for (Index r = 0; r < gwz.rows(); ++r) {
                for (Index col = 0; col < gwz.cols(); ++col) {
                    g[at++] += gwz(r, col);
                }
            }
            if (l > 0) {
                Mat gwo = adj_pre * rec.out[l - 1].transpose();
                if (has_tangent) {
                    gwo.noalias() += adj_tpre * tout[l - 1].transpose();
                }
                const Mat& pre = net.hidden_pre[l - 1];
                for (Index r = 0; r < gwo.rows(); ++r) {
                    for (Index col = 0; col < gwo.cols(); ++col) {
                        g[at++] += gwo(r, col) * logistic(pre(r, col));
                    }
                }
            }
            for (Index i = 0; i < w; ++i) {
                g[at++] += adj_pre[i];
            }
        }
        if (l > 0) {
            adj_out = net.hidden[l - 1].transpose() * adj_pre;
            adj_tout = net.hidden[l - 1].transpose() * adj_tpre;
        }
    }
    if (param_grad) {
        param_grad[beta_index] += gbeta * beta;
    }
    return gz;
}

} // namespace

Vec scnn_hvp(const Scnn& net, const ScnnRecord& rec, const Vec& c)
{
    return backward_impl(net, rec, 0.0, c, nullptr);
}

Mat scnn_hessian(const Scnn& net, const Vec& z)
{
    const ScnnRecord rec = scnn_forward(net, z);
    const Index m = net.input_dim();
    Mat h(m, m);
    for (Index i = 0; i < m; ++i) {
        h.col(i) = scnn_hvp(net, rec, Vec::Unit(m, i));
    }
    return 0.5 * (h + h.transpose());
}

Vec scnn_backward(const Scnn& net, const ScnnRecord& rec, double value_seed, const Vec& grad_seed, VecRef param_grad)
{
    require_dim(param_grad.size(), scnn_param_count(net), "scnn_backward param_grad");
    return backward_impl(net, rec, value_seed, grad_seed, param_grad.data());
}

Index scnn_param_count(const Scnn& net)
{
    Index n = 1;
    for (int l = 0; l < net.layer_count(); ++l) {
        n += net.input_weights[l].size() + net.biases[l].size();
        if (l > 0) {
            n += net.hidden_pre[l - 1].size();
        }
    }
    return n;
}

void scnn_pack(const Scnn& net, VecRef out)
{
    require_dim(out.size(), scnn_param_count(net), "scnn_pack");
    Index at = 0;
    auto put_rows = [&](const Mat& a) {
        for (Index r = 0; r < a.rows(); ++r) {
            for (Index c = 0; c < a.cols(); ++c) {
                out[at++] = a(r, c);
            }
        }
    };
    for (int l = 0; l < net.layer_count(); ++l) {
        put_rows(net.input_weights[l]);
        if (l > 0) {
            put_rows(net.hidden_pre[l - 1]);
        }
        for (Index i = 0; i < net.biases[l].size(); ++i) {
            out[at++] = net.biases[l][i];
        }
    }
    out[at] = net.beta_pre;
}

void scnn_unpack(Scnn& net, ConstVecRef in)
{
    require_dim(in.size(), scnn_param_count(net), "scnn_unpack");
    Index at = 0;
    auto get_rows = [&](Mat& a) {
        for (Index r = 0; r < a.rows(); ++r) {
            for (Index c = 0; c < a.cols(); ++c) {
                a(r, c) = in[at++];
            }
        }
    };
    for (int l = 0; l < net.layer_count(); ++l) {
        get_rows(net.input_weights[l]);
        if (l > 0) {
            get_rows(net.hidden_pre[l - 1]);
        }
        for (Index i = 0; i < net.biases[l].size(); ++i) {
            net.biases[l][i] = in[at++];
        }
    }
    net.beta_pre = in[at];
    refresh_hidden(net);
}

} // namespace npi
