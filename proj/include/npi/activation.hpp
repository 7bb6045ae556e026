#pragma once

#include <cmath>

namespace npi {

enum class ActivationKind { softplus_beta, relu };

struct Activation {
    ActivationKind kind = ActivationKind::softplus_beta;
    double beta = 1.0;
};

/// (1/beta) log(1 + exp(beta x)), evaluated as max(x,0) + log1p(exp(-beta|x|))/beta.
inline double softplus(double x, double beta)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-beta * std::abs(x))) / beta;
}

/// Logistic function 1/(1+exp(-t)) without overflow for large |t|.
inline double logistic(double t)
{
    if (t >= 0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    const double e = std::exp(t);
    return e / (1.0 + e);
}

/// Derivatives of softplus-beta with respect to x and beta, evaluated together.
struct SoftplusTerms {
    double value; // sigma
    double d1;    // d sigma / dx
    double d2;    // d^2 sigma / dx^2
    double dbeta; // d sigma / d beta
    double d1beta; // d^2 sigma / dx d beta
};

inline SoftplusTerms softplus_terms(double x, double beta)
{
    const double s = logistic(beta * x);
    const double sc = s * (1.0 - s);
    SoftplusTerms t;
    t.value = softplus(x, beta);
    t.d1 = s;
    t.d2 = beta * sc;
    t.dbeta = (x * s - t.value) / beta;
    t.d1beta = x * sc;
    return t;
}

/// Throws DomainError for non-finite x or non-positive beta.
double activation_eval(const Activation& a, double x);

/// softplus_beta(x + delta) - relu(x). Bounded in (0, delta + log(2)/beta).
double softplus_relu_gap(double beta, double x, double delta);

} // namespace npi
