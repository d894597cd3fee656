#pragma once

/// @file sysid.hpp
/// @brief Data-driven identification of x' = Xi * theta(x, u).
///
/// SINDYc: numerically differentiate logged occupancies, build a polynomial
/// candidate library, and find a sparse coefficient matrix by sequentially
/// thresholded least squares. DMDc: the same pipeline restricted to a
/// constant plus linear terms, fitted by plain least squares.
///
/// Time unit convention: one log row is one control step and the model's
/// derivative is expressed per control step, so a forward-Euler step with
/// h = 1 advances the model by exactly one control step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "library.hpp"
#include "plant.hpp"

namespace rampnet {

class SysIdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Trajectory logs

/// Stacked episodes: row r of X and U are x(k), u(k) of some episode.
struct TrajectoryLog {
  Eigen::MatrixXd X;  ///< d x n occupancies (%)
  Eigen::MatrixXd U;  ///< d x m metering rates (veh/h)
  double dt = 1.0;    ///< model time units between rows
  std::vector<std::size_t> episode_starts{0};

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t episodes() const { return X.rows() == 0 ? 0 : episode_starts.size(); }
  std::pair<std::size_t, std::size_t> episode_range(std::size_t e) const {
    const std::size_t begin = episode_starts.at(e);
    const std::size_t end = e + 1 < episode_starts.size() ? episode_starts[e + 1] : rows();
    return {begin, end};
  }
};

inline TrajectoryLog make_log(std::span<const EpisodeRecord> episodes, double dt = 1.0) {
  TrajectoryLog log;
  log.dt = dt;
  log.episode_starts.clear();
  Eigen::Index d = 0;
  for (const auto& e : episodes) d += static_cast<Eigen::Index>(e.rows());
  if (episodes.empty()) {
    log.episode_starts.push_back(0);
    return log;
  }
  log.X.resize(d, episodes.front().occupancy.cols());
  log.U.resize(d, episodes.front().rates.cols());
  Eigen::Index r = 0;
  for (const auto& e : episodes) {
    if (e.occupancy.cols() != log.X.cols() || e.rates.cols() != log.U.cols())
      throw SysIdError("episodes disagree on sensor or ramp count");
    log.episode_starts.push_back(static_cast<std::size_t>(r));
    log.X.middleRows(r, e.occupancy.rows()) = e.occupancy;
    log.U.middleRows(r, e.rates.rows()) = e.rates;
    r += e.occupancy.rows();
  }
  return log;
}

/// Samples aligned for regression: row r of Xdot is the derivative at X.row(r), U.row(r).
struct DerivativeData {
  Eigen::MatrixXd X;
  Eigen::MatrixXd U;
  Eigen::MatrixXd Xdot;
};

namespace detail {

inline Eigen::MatrixXd moving_average(const Eigen::MatrixXd& x, int window) {
  if (window <= 1) return x;
  const Eigen::Index half = window / 2;
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, r - half);
    const Eigen::Index hi = std::min<Eigen::Index>(x.rows() - 1, r + half);
    out.row(r) = x.middleRows(lo, hi - lo + 1).colwise().mean();
  }
  return out;
}

}  // namespace detail

/// Central differences (x(k+1) - x(k-1)) / (2 dt) at interior rows of each
/// episode; episode endpoints are dropped. `smoothing_window` > 1 applies a
/// centred moving average to X first (the regression still sees raw X).
inline DerivativeData differentiate(const TrajectoryLog& log, int smoothing_window = 1) {
  if (log.dt <= 0.0) throw SysIdError("log dt must be positive");
  std::size_t kept = 0;
  for (std::size_t e = 0; e < log.episodes(); ++e) {
    const auto [b, end] = log.episode_range(e);
    if (end - b < 3)
      throw SysIdError("episode " + std::to_string(e) + " has " + std::to_string(end - b) +
                       " rows; central differencing needs at least 3");
    kept += end - b - 2;
  }
  DerivativeData out;
  const auto n = log.X.cols();
  out.X.resize(static_cast<Eigen::Index>(kept), n);
  out.U.resize(static_cast<Eigen::Index>(kept), log.U.cols());
  out.Xdot.resize(static_cast<Eigen::Index>(kept), n);
  Eigen::Index r = 0;
  for (std::size_t e = 0; e < log.episodes(); ++e) {
    const auto [b, end] = log.episode_range(e);
    const auto bi = static_cast<Eigen::Index>(b);
    const auto len = static_cast<Eigen::Index>(end - b);
    const Eigen::MatrixXd xs = detail::moving_average(log.X.middleRows(bi, len), smoothing_window);
    for (Eigen::Index k = 1; k + 1 < len; ++k, ++r) {
      out.X.row(r) = log.X.row(bi + k);
      out.U.row(r) = log.U.row(bi + k);
      out.Xdot.row(r) = (xs.row(k + 1) - xs.row(k - 1)) / (2.0 * log.dt);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequentially thresholded least squares

struct StlsOptions {
  /// lambda. Each thresholding solve minimizes mean((y - A xi)^2) + lambda |xi|^2,
  /// i.e. a ridge of lambda * rows on the normal equations.
  double ridge = 0.05;
  double threshold = 2e-4;   ///< coefficients with smaller magnitude are zeroed
  int max_iterations = 20;
  /// The surviving support is refit without the ridge only when there are at
  /// least this many rows per active term; otherwise the ridge fit is kept.
  double unbias_rows_per_term = 10.0;
};

struct StlsResult {
  Eigen::MatrixXd coefficients;             ///< n x h
  std::vector<bool> all_eliminated;         ///< per target column
  std::vector<int> iterations;              ///< thresholding passes per target column
};

namespace detail {

inline Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, double ridge) {
  Eigen::MatrixXd G = A.transpose() * A;
  G.diagonal().array() += ridge;
  return G.ldlt().solve(A.transpose() * y);
}

/// Plain least squares; falls back to ridge when A is column-rank deficient.
inline Eigen::VectorXd ls_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, double ridge, bool* rank_deficient = nullptr) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  const bool deficient = qr.rank() < A.cols();
  if (rank_deficient) *rank_deficient = deficient;
  if (deficient) return ridge_solve(A, y, ridge > 0.0 ? ridge : 1e-8);
  return qr.solve(y);
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& A, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(A.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = A.col(cols[j]);
  return out;
}

}  // namespace detail

/// Sparse regression of each column of `xdot` onto `theta`. Per target:
/// ridge solve on the active columns, zero every coefficient below the
/// threshold, repeat until the active set stops changing (at most
/// max_iterations passes). A well-determined support is then refit by plain
/// least squares, pruning again if the refit drops a coefficient below the
/// threshold.
inline StlsResult stls_regress(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& xdot, const StlsOptions& opt = {}) {
  if (theta.rows() != xdot.rows()) throw SysIdError("library and derivative row counts differ");
  const Eigen::Index h = theta.cols();
  const auto rows = static_cast<double>(theta.rows());
  const double penalty = opt.ridge * rows;
  StlsResult res;
  res.coefficients = Eigen::MatrixXd::Zero(xdot.cols(), h);
  res.all_eliminated.assign(static_cast<std::size_t>(xdot.cols()), false);
  res.iterations.assign(static_cast<std::size_t>(xdot.cols()), 0);

  for (Eigen::Index k = 0; k < xdot.cols(); ++k) {
    const Eigen::VectorXd y = xdot.col(k);
    std::vector<Eigen::Index> active(static_cast<std::size_t>(h));
    for (Eigen::Index j = 0; j < h; ++j) active[static_cast<std::size_t>(j)] = j;

    Eigen::VectorXd xi;
    int it = 0;
    while (!active.empty() && it < opt.max_iterations) {
      ++it;
      xi = detail::ridge_solve(detail::select_columns(theta, active), y, penalty);
      std::vector<Eigen::Index> keep;
      for (std::size_t j = 0; j < active.size(); ++j)
        if (std::abs(xi[static_cast<Eigen::Index>(j)]) >= opt.threshold) keep.push_back(active[j]);
      if (keep.size() == active.size()) break;
      active = std::move(keep);
    }
    if (!active.empty() && xi.size() != static_cast<Eigen::Index>(active.size()))
      xi = detail::ridge_solve(detail::select_columns(theta, active), y, penalty);
    // Refit without the ridge; the active set shrinks on every pass.
    while (!active.empty() && rows >= opt.unbias_rows_per_term * static_cast<double>(active.size())) {
      xi = detail::ls_solve(detail::select_columns(theta, active), y, penalty);
      std::vector<Eigen::Index> keep;
      for (std::size_t j = 0; j < active.size(); ++j)
        if (std::abs(xi[static_cast<Eigen::Index>(j)]) >= opt.threshold) keep.push_back(active[j]);
      if (keep.size() == active.size()) break;
      active = std::move(keep);
    }
    res.iterations[static_cast<std::size_t>(k)] = it;
    if (active.empty()) {
      res.all_eliminated[static_cast<std::size_t>(k)] = true;
      continue;
    }
    for (std::size_t j = 0; j < active.size(); ++j) res.coefficients(k, active[j]) = xi[static_cast<Eigen::Index>(j)];
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sparse model

struct SparseModel {
  std::string method = "sindyc";
  FeatureLibrary library;
  Eigen::MatrixXd coefficients;             ///< Xi in physical units, n x h
  Eigen::MatrixXd normalized_coefficients;  ///< Xi on scaled columns/targets
  Eigen::VectorXd column_scale;             ///< h
  Eigen::VectorXd target_scale;             ///< n
  std::vector<std::string> diagnostics;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t state_dim() const { return library.state_dim(); }
  std::size_t input_dim() const { return library.input_dim(); }
  std::size_t term_count() const { return library.size(); }
  std::size_t active_terms() const { return static_cast<std::size_t>((coefficients.array() != 0.0).count()); }

  /// Indices of library terms with at least one nonzero coefficient.
  std::vector<std::size_t> active_columns() const {
    std::vector<std::size_t> out;
    for (Eigen::Index j = 0; j < coefficients.cols(); ++j)
      if ((coefficients.col(j).array() != 0.0).any()) out.push_back(static_cast<std::size_t>(j));
    return out;
  }
};

/// Model right-hand side and its Jacobians at one point.
struct ModelLinearization {
  Eigen::VectorXd f;
  Eigen::MatrixXd A;  ///< df/dx, n x n
  Eigen::MatrixXd B;  ///< df/du, n x m
};

/// f(x, u) = Xi theta(x, u).
inline Eigen::VectorXd evaluate(const SparseModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& u) {
  return model.coefficients * model.library.evaluate(x, u);
}

/// Evaluates f together with df/dx and df/du, touching only active terms.
class ModelEvaluator {
 public:
  explicit ModelEvaluator(const SparseModel& model) : model_(&model) {
    if (model.coefficients.rows() != static_cast<Eigen::Index>(model.state_dim()) ||
        model.coefficients.cols() != static_cast<Eigen::Index>(model.term_count()))
      throw SysIdError("coefficient matrix does not match the library");
    for (auto j : model.active_columns()) {
      Term t;
      t.factors = model.library.terms()[j].factors;
      t.coef = model.coefficients.col(static_cast<Eigen::Index>(j));
      terms_.push_back(std::move(t));
    }
  }

  std::size_t state_dim() const { return model_->state_dim(); }
  std::size_t input_dim() const { return model_->input_dim(); }

  Eigen::VectorXd f(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const {
    check(x, u);
    const auto n = static_cast<Eigen::Index>(state_dim());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (const auto& t : terms_) {
      double p = 1.0;
      for (auto v : t.factors) p *= var(x, u, v);
      out.noalias() += p * t.coef;
    }
    return out;
  }

  ModelLinearization linearize(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const {
    check(x, u);
    const auto n = static_cast<Eigen::Index>(state_dim());
    const auto m = static_cast<Eigen::Index>(input_dim());
    ModelLinearization lin{Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, m)};
    for (const auto& t : terms_) {
      const auto& fac = t.factors;
      double p = 1.0;
      for (auto v : fac) p *= var(x, u, v);
      lin.f.noalias() += p * t.coef;
      for (std::size_t skip = 0; skip < fac.size(); ++skip) {
        double d = 1.0;
        for (std::size_t i = 0; i < fac.size(); ++i)
          if (i != skip) d *= var(x, u, fac[i]);
        const auto v = static_cast<Eigen::Index>(fac[skip]);
        if (v < n)
          lin.A.col(v).noalias() += d * t.coef;
        else
          lin.B.col(v - n).noalias() += d * t.coef;
      }
    }
    return lin;
  }

 private:
  struct Term {
    std::vector<std::size_t> factors;
    Eigen::VectorXd coef;
  };

  double var(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u, std::size_t v) const {
    const auto n = static_cast<std::size_t>(x.size());
    return v < n ? x[static_cast<Eigen::Index>(v)] : u[static_cast<Eigen::Index>(v - n)];
  }
  void check(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const {
    if (static_cast<std::size_t>(x.size()) != state_dim() || static_cast<std::size_t>(u.size()) != input_dim())
      throw std::invalid_argument("dimension mismatch: model expects n=" + std::to_string(state_dim()) +
                                  ", m=" + std::to_string(input_dim()));
  }

  const SparseModel* model_;
  std::vector<Term> terms_;
};

/// Forward Euler: x + h f(x, u).
inline Eigen::VectorXd one_step_predict(const SparseModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& u, double h = 1.0) {
  return x + h * evaluate(model, x, u);
}

// ---------------------------------------------------------------------------
// Discovery

struct SindyOptions {
  FeatureLibrarySpec library;
  StlsOptions stls;
  bool normalize = true;
  int smoothing_window = 1;
  /// Training needs at least this many rows per candidate term.
  double min_rows_per_term = 2.0;
};

namespace detail {

/// Column scale: standard deviation, or RMS for constant columns, or 1.
inline double column_scale(const Eigen::VectorXd& c) {
  if (c.size() == 0) return 1.0;
  const double mean = c.mean();
  const double sd = std::sqrt((c.array() - mean).square().mean());
  if (sd > 1e-12 * std::max(1.0, std::abs(mean))) return sd;
  const double rms = std::sqrt(c.array().square().mean());
  return rms > 0.0 ? rms : 1.0;
}

inline SparseModel fit_scaled(const FeatureLibrary& lib, const Eigen::MatrixXd& theta, const Eigen::MatrixXd& xdot,
                              bool normalize, const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>& solver) {
  SparseModel model;
  model.library = lib;
  const Eigen::Index h = theta.cols();
  const Eigen::Index n = xdot.cols();
  model.column_scale = Eigen::VectorXd::Ones(h);
  model.target_scale = Eigen::VectorXd::Ones(n);
  if (normalize) {
    for (Eigen::Index j = 0; j < h; ++j) model.column_scale[j] = column_scale(theta.col(j));
    for (Eigen::Index k = 0; k < n; ++k) model.target_scale[k] = column_scale(xdot.col(k));
  }
  const Eigen::MatrixXd theta_n = theta * model.column_scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd xdot_n = xdot * model.target_scale.cwiseInverse().asDiagonal();
  model.normalized_coefficients = solver(theta_n, xdot_n);
  model.coefficients = model.target_scale.asDiagonal() * model.normalized_coefficients *
                       model.column_scale.cwiseInverse().asDiagonal();
  return model;
}

}  // namespace detail

/// SINDYc regression on samples whose derivatives are already known.
inline SparseModel fit_sindyc(const DerivativeData& data, const SindyOptions& opt = {}) {
  if (data.X.rows() != data.U.rows() || data.X.rows() != data.Xdot.rows() || data.X.cols() != data.Xdot.cols())
    throw SysIdError("inconsistent derivative data");
  const FeatureLibrary lib(static_cast<std::size_t>(data.X.cols()), static_cast<std::size_t>(data.U.cols()), opt.library);
  const double need = opt.min_rows_per_term * static_cast<double>(lib.size());
  if (static_cast<double>(data.X.rows()) < need)
    throw SysIdError("underdetermined regression: " + std::to_string(data.X.rows()) + " usable rows for " +
                     std::to_string(lib.size()) + " candidate terms (need at least " +
                     std::to_string(static_cast<long>(std::ceil(need))) + "); collect more episodes");
  const Eigen::MatrixXd theta = lib.build(data.X, data.U);

  StlsResult stls;
  auto model = detail::fit_scaled(lib, theta, data.Xdot, opt.normalize, [&](const Eigen::MatrixXd& t, const Eigen::MatrixXd& y) {
    stls = stls_regress(t, y, opt.stls);
    return stls.coefficients;
  });
  model.method = "sindyc";
  if ((data.Xdot.array() == 0.0).all()) model.diagnostics.push_back("no dynamics excited: all derivatives are zero");
  for (std::size_t k = 0; k < stls.all_eliminated.size(); ++k)
    if (stls.all_eliminated[k]) model.diagnostics.push_back("state " + std::to_string(k + 1) + ": every term eliminated");
  model.provenance = {{"ridge", opt.stls.ridge},
                      {"threshold", opt.stls.threshold},
                      {"max_iterations", opt.stls.max_iterations},
                      {"unbias_rows_per_term", opt.stls.unbias_rows_per_term},
                      {"polynomial_order", opt.library.polynomial_order},
                      {"include_constant", opt.library.include_constant},
                      {"normalize", opt.normalize},
                      {"smoothing_window", opt.smoothing_window},
                      {"training_rows", data.X.rows()}};
  return model;
}

/// SINDYc on a trajectory log.
inline SparseModel discover_sindyc(const TrajectoryLog& log, const SindyOptions& opt = {}) {
  auto model = fit_sindyc(differentiate(log, opt.smoothing_window), opt);
  model.provenance["episodes"] = log.episodes();
  return model;
}

/// DMDc baseline: x' = c + A x + B u by least squares, no thresholding.
inline SparseModel discover_dmdc(const TrajectoryLog& log, double fallback_ridge = 0.05) {
  const auto data = differentiate(log);
  const FeatureLibrary lib(static_cast<std::size_t>(data.X.cols()), static_cast<std::size_t>(data.U.cols()),
                           FeatureLibrarySpec{1, true});
  if (data.X.rows() < static_cast<Eigen::Index>(lib.size()))
    throw SysIdError("underdetermined DMDc regression: " + std::to_string(data.X.rows()) + " rows for " +
                     std::to_string(lib.size()) + " terms; collect more episodes");
  const Eigen::MatrixXd theta = lib.build(data.X, data.U);
  bool deficient = false;
  auto model = detail::fit_scaled(lib, theta, data.Xdot, true, [&](const Eigen::MatrixXd& t, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd xi(y.cols(), t.cols());
    for (Eigen::Index k = 0; k < y.cols(); ++k) {
      bool d = false;
      xi.row(k) = detail::ls_solve(t, y.col(k), fallback_ridge, &d).transpose();
      deficient = deficient || d;
    }
    return xi;
  });
  model.method = "dmdc";
  if (deficient) model.diagnostics.push_back("warning: rank-deficient data, ridge fallback used");
  model.provenance = {{"ridge_fallback", fallback_ridge}, {"training_rows", data.X.rows()}, {"episodes", log.episodes()}};
  return model;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct FitReport {
  std::vector<double> rmse;  ///< per state
  std::vector<double> r2;    ///< per state
  double mean_r2 = 0.0;
  std::vector<std::string> equations;  ///< active terms per state, human readable
};

inline std::vector<std::string> describe(const SparseModel& model, int precision = 6) {
  std::vector<std::string> out;
  for (Eigen::Index k = 0; k < model.coefficients.rows(); ++k) {
    std::ostringstream os;
    os.precision(precision);
    os << "x" << (k + 1) << "' =";
    bool any = false;
    for (Eigen::Index j = 0; j < model.coefficients.cols(); ++j) {
      const double c = model.coefficients(k, j);
      if (c == 0.0) continue;
      os << (c < 0 ? " - " : (any ? " + " : " ")) << std::abs(c);
      if (j != 0 || !model.library.terms()[0].factors.empty()) os << " " << model.library.term_name(static_cast<std::size_t>(j));
      any = true;
    }
    if (!any) os << " 0";
    out.push_back(os.str());
  }
  return out;
}

/// Compares the model's x' with numerically differentiated x' on a log.
inline FitReport fit_report(const SparseModel& model, const TrajectoryLog& holdout) {
  const auto data = differentiate(holdout);
  const ModelEvaluator eval(model);
  Eigen::MatrixXd pred(data.Xdot.rows(), data.Xdot.cols());
  for (Eigen::Index r = 0; r < data.X.rows(); ++r)
    pred.row(r) = eval.f(data.X.row(r).transpose(), data.U.row(r).transpose()).transpose();
  FitReport rep;
  for (Eigen::Index k = 0; k < data.Xdot.cols(); ++k) {
    const Eigen::VectorXd y = data.Xdot.col(k);
    const double ss_res = (y - pred.col(k)).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).square().sum();
    rep.rmse.push_back(std::sqrt(ss_res / static_cast<double>(std::max<Eigen::Index>(1, y.size()))));
    rep.r2.push_back(ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0));
  }
  double s = 0.0;
  for (double v : rep.r2) s += v;
  rep.mean_r2 = rep.r2.empty() ? 0.0 : s / static_cast<double>(rep.r2.size());
  rep.equations = describe(model);
  return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SparseModel& model) {
  using nlohmann::json;
  json j;
  j["format"] = "rampnet.sparse_model";
  j["version"] = 1;
  j["method"] = model.method;
  j["state_dim"] = model.state_dim();
  j["input_dim"] = model.input_dim();
  j["library"] = {{"polynomial_order", model.library.spec().polynomial_order},
                  {"include_constant", model.library.spec().include_constant}};
  j["terms"] = json::array();
  j["term_names"] = json::array();
  for (std::size_t t = 0; t < model.term_count(); ++t) {
    j["terms"].push_back(model.library.exponents(t));
    j["term_names"].push_back(model.library.term_name(t));
  }
  auto row_major = [](const Eigen::MatrixXd& a) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(a.size()));
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c) v.push_back(a(r, c));
    return v;
  };
  j["coefficients"] = row_major(model.coefficients);
  j["normalized_coefficients"] = row_major(model.normalized_coefficients);
  j["column_scale"] = std::vector<double>(model.column_scale.data(), model.column_scale.data() + model.column_scale.size());
  j["target_scale"] = std::vector<double>(model.target_scale.data(), model.target_scale.data() + model.target_scale.size());
  j["diagnostics"] = model.diagnostics;
  j["provenance"] = model.provenance;
  return j;
}

inline SparseModel sparse_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "rampnet.sparse_model") throw SysIdError("not a sparse model document");
    SparseModel m;
    m.method = j.at("method").get<std::string>();
    const auto n = j.at("state_dim").get<std::size_t>();
    const auto u = j.at("input_dim").get<std::size_t>();
    FeatureLibrarySpec spec{j.at("library").at("polynomial_order").get<int>(),
                            j.at("library").at("include_constant").get<bool>()};
    m.library = FeatureLibrary::from_exponents(n, u, spec, j.at("terms").get<std::vector<std::vector<int>>>());
    const auto h = static_cast<Eigen::Index>(m.library.size());
    auto matrix = [&](const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != n * static_cast<std::size_t>(h)) throw SysIdError(std::string("bad size for ") + key);
      Eigen::MatrixXd a(static_cast<Eigen::Index>(n), h);
      for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < h; ++c) a(r, c) = v[static_cast<std::size_t>(r * h + c)];
      return a;
    };
    m.coefficients = matrix("coefficients");
    m.normalized_coefficients = matrix("normalized_coefficients");
    const auto cs = j.at("column_scale").get<std::vector<double>>();
    const auto ts = j.at("target_scale").get<std::vector<double>>();
    m.column_scale = Eigen::Map<const Eigen::VectorXd>(cs.data(), static_cast<Eigen::Index>(cs.size()));
    m.target_scale = Eigen::Map<const Eigen::VectorXd>(ts.data(), static_cast<Eigen::Index>(ts.size()));
    m.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    m.provenance = j.value("provenance", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SysIdError(std::string("malformed model document: ") + e.what());
  }
}

inline void save_model(const SparseModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SysIdError("cannot write '" + path + "'");
  out << to_json(model).dump(1) << '\n';
}

inline SparseModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SysIdError("cannot open model file '" + path + "'");
  try {
    return sparse_model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SysIdError("parse error in '" + path + "': " + e.what());
  }
}

}  // namespace rampnet
