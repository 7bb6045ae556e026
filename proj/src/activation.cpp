#include "npi/activation.hpp"
#include "npi/core.hpp"

#include <algorithm>

namespace npi {

double activation_eval(const Activation& a, double x)
{
    if (!std::isfinite(x)) {
        throw DomainError("activation_eval: non-finite input");
    }
    switch (a.kind) {
    case ActivationKind::relu:
        return std::max(x, 0.0);
    case ActivationKind::softplus_beta:
        if (!(a.beta > 0) || !std::isfinite(a.beta)) {
            throw DomainError("activation_eval: softplus beta must be positive");
        }
        return softplus(x, a.beta);
    }
    throw DomainError("activation_eval: unknown activation");
}

double softplus_relu_gap(double beta, double x, double delta)
{
    if (!(delta > 0)) {
        throw DomainError("softplus_relu_gap: delta must be positive");
    }
    return activation_eval({ActivationKind::softplus_beta, beta}, x + delta) -
           activation_eval({ActivationKind::relu, 1.0}, x);
}

} // namespace npi
