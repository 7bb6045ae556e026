#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace npi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using VecRef = Eigen::Ref<Vec>;
using ConstVecRef = Eigen::Ref<const Vec>;

/// Thrown when vector or matrix dimensions do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown for inputs outside an operation's mathematical domain
/// (non-finite values, non-PD matrices, infeasible equilibria).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Configuration or file-format problem. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

inline void require_dim(Index got, Index want, const char* what)
{
    if (got != want) {
        throw ShapeError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
    }
}

/// Visitor helper for std::variant.
template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline bool all_finite(const Eigen::Ref<const Mat>& a) { return a.allFinite(); }

/// Centering projector I - (1/m) 1 1^T.
inline Mat centering(Index m)
{
    return Mat::Identity(m, m) - Mat::Constant(m, m, 1.0 / static_cast<double>(m));
}

/// v - mean(v) * 1, i.e. centering(m) * v without forming the matrix.
inline Vec center(const Vec& v) { return v.array() - v.mean(); }

/// FNV-1a, used to stamp artifacts with a stable config hash.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace npi
