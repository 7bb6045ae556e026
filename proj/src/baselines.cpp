#include "npi/baselines.hpp"
#include "npi/activation.hpp"

namespace npi {

DenseNet make_dense(Index dim, const std::vector<int>& hidden, std::mt19937_64& rng, double beta)
{
    std::vector<Index> widths(hidden.begin(), hidden.end());
    widths.push_back(dim);
    DenseNet net;
    const double a = 1.0 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> input_dist(-a, a);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        Mat wz(widths[l], dim);
        for (Index i = 0; i < wz.size(); ++i) {
            wz.data()[i] = input_dist(rng);
        }
        net.input_weights.push_back(std::move(wz));
        if (l > 0) {
            const double h = 1.0 / std::sqrt(static_cast<double>(widths[l - 1]));
            std::uniform_real_distribution<double> hidden_dist(-h, h);
            Mat wo(widths[l], widths[l - 1]);
            for (Index i = 0; i < wo.size(); ++i) {
                wo.data()[i] = hidden_dist(rng);
            }
            net.hidden.push_back(std::move(wo));
        }
        net.biases.push_back(Vec::Zero(widths[l]));
    }
    net.beta_pre = std::log(beta);
    return net;
}

namespace {

struct DenseRecord {
    std::vector<Vec> pre;
    std::vector<Vec> out; // activations of layers 0..k-2
};

DenseRecord dense_forward(const DenseNet& net, const Vec& z)
{
    require_dim(z.size(), net.input_dim(), "dense_eval");
    const int k = net.layer_count();
    const double beta = std::exp(net.beta_pre);
    DenseRecord rec;
    rec.pre.resize(k);
    rec.out.resize(k - 1);
    for (int l = 0; l < k; ++l) {
        Vec a = net.input_weights[l] * z + net.biases[l];
        if (l > 0) {
            a.noalias() += net.hidden[l - 1] * rec.out[l - 1];
        }
        if (l < k - 1) {
            rec.out[l] = a.unaryExpr([beta](double x) { return softplus(x, beta); });
        }
        rec.pre[l] = std::move(a);
    }
    return rec;
}

Vec dense_reverse(const DenseNet& net, const Vec& z, const DenseRecord& rec, const Vec& seed, double* g)
{
    const int k = net.layer_count();
    const double beta = std::exp(net.beta_pre);
    std::vector<Index> block(k);
    Index cursor = 0;
    for (int l = 0; l < k; ++l) {
        block[l] = cursor;
        cursor += net.input_weights[l].size() + net.biases[l].size() + (l > 0 ? net.hidden[l - 1].size() : 0);
    }
    Vec gz = Vec::Zero(z.size());
    Vec adj = seed;
    double gbeta = 0.0;
    for (int l = k - 1; l >= 0; --l) {
        gz.noalias() += net.input_weights[l].transpose() * adj;
        if (g) {
            Index at = block[l];
            for (Index r = 0; r < adj.size(); ++r) {
                for (Index c = 0; c < z.size(); ++c) {
                    g[at++] += adj[r] * z[c];
                }
            }
            if (l > 0) {
                const Vec& o = rec.out[l - 1];
                for (Index r = 0; r < adj.size(); ++r) {
                    for (Index c = 0; c < o.size(); ++c) {
                        g[at++] += adj[r] * o[c];
                    }
                }
            }
            for (Index r = 0; r < adj.size(); ++r) {
                g[at++] += adj[r];
            }
        }
        if (l > 0) {
            const Vec adj_out = net.hidden[l - 1].transpose() * adj;
            Vec next(adj_out.size());
            for (Index i = 0; i < next.size(); ++i) {
                const SoftplusTerms t = softplus_terms(rec.pre[l - 1][i], beta);
                next[i] = adj_out[i] * t.d1;
                gbeta += adj_out[i] * t.dbeta;
            }
            adj = std::move(next);
        }
    }
    if (g) {
        g[cursor] += gbeta * beta;
    }
    return gz;
}

} // namespace

Vec dense_eval(const DenseNet& net, const Vec& z) { return dense_forward(net, z).pre.back(); }

Mat dense_jacobian(const DenseNet& net, const Vec& z)
{
    const DenseRecord rec = dense_forward(net, z);
    const Index n = net.output_dim();
    Mat j(n, z.size());
    for (Index i = 0; i < n; ++i) {
        j.row(i) = dense_reverse(net, z, rec, Vec::Unit(n, i), nullptr).transpose();
    }
    return j;
}

Vec dense_backward(const DenseNet& net, const Vec& z, const Vec& seed, VecRef param_grad)
{
    require_dim(seed.size(), net.output_dim(), "dense_backward seed");
    require_dim(param_grad.size(), dense_param_count(net), "dense_backward param_grad");
    return dense_reverse(net, z, dense_forward(net, z), seed, param_grad.data());
}

Index dense_param_count(const DenseNet& net)
{
    Index n = 1;
    for (int l = 0; l < net.layer_count(); ++l) {
        n += net.input_weights[l].size() + net.biases[l].size() + (l > 0 ? net.hidden[l - 1].size() : 0);
    }
    return n;
}

void dense_pack(const DenseNet& net, VecRef out)
{
    require_dim(out.size(), dense_param_count(net), "dense_pack");
    Index at = 0;
    auto put = [&](const Mat& a) {
        for (Index r = 0; r < a.rows(); ++r) {
            for (Index c = 0; c < a.cols(); ++c) {
                out[at++] = a(r, c);
            }
        }
    };
    for (int l = 0; l < net.layer_count(); ++l) {
        put(net.input_weights[l]);
        if (l > 0) {
            put(net.hidden[l - 1]);
        }
        put(net.biases[l]);
    }
    out[at] = net.beta_pre;
}

void dense_unpack(DenseNet& net, ConstVecRef in)
{
    require_dim(in.size(), dense_param_count(net), "dense_unpack");
    Index at = 0;
    auto get = [&](auto& a) {
        for (Index r = 0; r < a.rows(); ++r) {
            for (Index c = 0; c < a.cols(); ++c) {
                a(r, c) = in[at++];
            }
        }
    };
    for (int l = 0; l < net.layer_count(); ++l) {
        get(net.input_weights[l]);
        if (l > 0) {
            get(net.hidden[l - 1]);
        }
        get(net.biases[l]);
    }
    net.beta_pre = in[at];
}

} // namespace npi
