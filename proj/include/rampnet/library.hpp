#pragma once

/// @file library.hpp
/// @brief Polynomial candidate-term library over states x and inputs u.
///
/// Columns are ordered by total degree. Within a degree, variables are taken
/// in the order x_1..x_n, u_1..u_m and monomials are enumerated as
/// non-decreasing index tuples, so for degree two the order is
/// x1^2, x1x2, ..., x1u_m, x2^2, ..., u_m^2.

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rampnet {

struct FeatureLibrarySpec {
  int polynomial_order = 2;
  bool include_constant = true;

  bool operator==(const FeatureLibrarySpec&) const = default;
};

/// A monomial as the multiset of variable indices it multiplies
/// (indices < n address states, the rest address inputs).
struct Monomial {
  std::vector<std::size_t> factors;

  std::size_t degree() const { return factors.size(); }
  bool operator==(const Monomial&) const = default;
};

class FeatureLibrary {
 public:
  FeatureLibrary() = default;
  FeatureLibrary(std::size_t n, std::size_t m, FeatureLibrarySpec spec) : n_(n), m_(m), spec_(spec) {
    if (spec.polynomial_order < 1) throw std::invalid_argument("polynomial order must be >= 1");
    const std::size_t vars = n + m;
    if (spec.include_constant) terms_.push_back({});
    std::vector<std::size_t> idx;
    for (int deg = 1; deg <= spec.polynomial_order; ++deg) enumerate(vars, static_cast<std::size_t>(deg), 0, idx);
  }

  /// Rebuilds a library from stored exponent vectors (as written by to_json).
  static FeatureLibrary from_exponents(std::size_t n, std::size_t m, FeatureLibrarySpec spec,
                                       const std::vector<std::vector<int>>& exps) {
    FeatureLibrary lib;
    lib.n_ = n;
    lib.m_ = m;
    lib.spec_ = spec;
    for (const auto& e : exps) {
      if (e.size() != n + m) throw std::invalid_argument("exponent vector has wrong length");
      Monomial t;
      for (std::size_t v = 0; v < e.size(); ++v)
        for (int p = 0; p < e[v]; ++p) t.factors.push_back(v);
      lib.terms_.push_back(std::move(t));
    }
    return lib;
  }

  std::size_t state_dim() const { return n_; }
  std::size_t input_dim() const { return m_; }
  std::size_t size() const { return terms_.size(); }
  const FeatureLibrarySpec& spec() const { return spec_; }
  const std::vector<Monomial>& terms() const { return terms_; }

  std::vector<int> exponents(std::size_t term) const {
    std::vector<int> e(n_ + m_, 0);
    for (auto v : terms_.at(term).factors) ++e[v];
    return e;
  }

  std::string variable_name(std::size_t v) const {
    return v < n_ ? "x" + std::to_string(v + 1) : "u" + std::to_string(v - n_ + 1);
  }

  /// Human-readable monomial, e.g. "1", "x3", "x1*u2", "u4^2".
  std::string term_name(std::size_t term) const {
    const auto& f = terms_.at(term).factors;
    if (f.empty()) return "1";
    std::ostringstream os;
    for (std::size_t i = 0; i < f.size();) {
      std::size_t j = i;
      while (j < f.size() && f[j] == f[i]) ++j;
      if (i > 0) os << '*';
      os << variable_name(f[i]);
      if (j - i > 1) os << '^' << (j - i);
      i = j;
    }
    return os.str();
  }

  /// theta(x, u) for one sample.
  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const {
    check_dims(x.size(), u.size());
    Eigen::VectorXd z(x.size() + u.size());
    z << x, u;
    Eigen::VectorXd theta(static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      double p = 1.0;
      for (auto v : terms_[t].factors) p *= z[static_cast<Eigen::Index>(v)];
      theta[static_cast<Eigen::Index>(t)] = p;
    }
    return theta;
  }

  /// d theta / d z with z = (x, u); an h x (n + m) matrix.
  Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const {
    check_dims(x.size(), u.size());
    Eigen::VectorXd z(x.size() + u.size());
    z << x, u;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(terms_.size()), z.size());
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      const auto& f = terms_[t].factors;
      for (std::size_t skip = 0; skip < f.size(); ++skip) {
        double p = 1.0;
        for (std::size_t i = 0; i < f.size(); ++i)
          if (i != skip) p *= z[static_cast<Eigen::Index>(f[i])];
        jac(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f[skip])) += p;
      }
    }
    return jac;
  }

  /// Theta(X, U): one row per sample.
  Eigen::MatrixXd build(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) const {
    if (X.rows() != U.rows()) throw std::invalid_argument("X and U row counts differ");
    check_dims(X.cols(), U.cols());
    Eigen::MatrixXd theta(X.rows(), static_cast<Eigen::Index>(terms_.size()));
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      theta.row(r) = evaluate(X.row(r).transpose(), U.row(r).transpose()).transpose();
    return theta;
  }

  bool operator==(const FeatureLibrary& o) const {
    return n_ == o.n_ && m_ == o.m_ && spec_ == o.spec_ && terms_ == o.terms_;
  }

 private:
  void enumerate(std::size_t vars, std::size_t deg, std::size_t start, std::vector<std::size_t>& idx) {
    if (idx.size() == deg) {
      terms_.push_back({idx});
      return;
    }
    for (std::size_t v = start; v < vars; ++v) {
      idx.push_back(v);
      enumerate(vars, deg, v, idx);
      idx.pop_back();
    }
  }

  void check_dims(Eigen::Index n, Eigen::Index m) const {
    if (static_cast<std::size_t>(n) != n_ || static_cast<std::size_t>(m) != m_)
      throw std::invalid_argument("dimension mismatch: library expects n=" + std::to_string(n_) +
                                  ", m=" + std::to_string(m_) + ", got n=" + std::to_string(n) +
                                  ", m=" + std::to_string(m));
  }

  std::size_t n_ = 0;
  std::size_t m_ = 0;
  FeatureLibrarySpec spec_;
  std::vector<Monomial> terms_;
};

inline FeatureLibrary build_library(std::size_t n, std::size_t m, FeatureLibrarySpec spec = {}) {
  return FeatureLibrary(n, m, spec);
}

/// Theta(X, U) together with its term descriptors.
struct LibraryMatrix {
  FeatureLibrary library;
  Eigen::MatrixXd theta;
};

inline LibraryMatrix build_library(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, FeatureLibrarySpec spec = {}) {
  FeatureLibrary lib(static_cast<std::size_t>(X.cols()), static_cast<std::size_t>(U.cols()), spec);
  Eigen::MatrixXd theta = lib.build(X, U);
  return {std::move(lib), std::move(theta)};
}

}  // namespace rampnet
