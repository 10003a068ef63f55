#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "vsg/core.hpp"
#include "vsg/dependency.hpp"

namespace vsg {

/// How prerequisite-free steps are made reachable in the base matrix.
enum class FixupRule {
  /// Every step can transition into a step whose dependency row is empty.
  Column,
  /// Literal row reading: a row of D^T that sums to zero is set to all ones.
  Row,
};

/// How the "none" state enters the (S+1)x(S+1) transition matrix.
enum class NoneMode {
  /// Fixed escape mass from every step row; uniform outgoing row.
  Augmented,
  /// "none" is an ordinary state with no prerequisites and no successors.
  Plain,
};

struct TransitionOptions {
  double epsilon = 1e-8;
  NoneMode none_mode = NoneMode::Augmented;
  /// Escape mass into "none"; a negative value means 1/(S+1).
  double epsilon_none = -1.0;
  bool use_readiness = true;
  bool use_validity = true;
  FixupRule fixup = FixupRule::Column;

  double none_mass(std::size_t num_steps) const {
    return epsilon_none < 0.0 ? 1.0 / static_cast<double>(num_steps + 1) : epsilon_none;
  }
};

/// Row-stochastic S x S base transition matrix, plus the (S+1)x(S+1) form in
/// which "none" is an ordinary prerequisite-free state.
class BaseTransition {
 public:
  BaseTransition() = default;

  /// Wraps a given step matrix. The "none"-extended form gets mass 1/(S+1)
  /// into "none" from every row and a uniform "none" row.
  explicit BaseTransition(Matrix steps) : m_(std::move(steps)) {
    const std::size_t S = m_.rows();
    const double share = 1.0 / static_cast<double>(S + 1);
    with_none_ = Matrix(S + 1, S + 1, share);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) with_none_(i, j) = m_(i, j) * (1.0 - share);
  }

  BaseTransition(Matrix steps, Matrix with_none) : m_(std::move(steps)), with_none_(std::move(with_none)) {}

  std::size_t size() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }
  const Matrix& with_none() const noexcept { return with_none_; }

 private:
  Matrix m_;
  Matrix with_none_;
};

inline void normalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double sum = 0.0;
    for (double x : r) sum += x;
    if (sum > 0.0)
      for (double& x : r) x /= sum;
  }
}

namespace detail {

inline Matrix init_base(const Matrix& d, FixupRule rule) {
  const std::size_t n = d.rows();
  Matrix t = d.transposed();
  if (rule == FixupRule::Row) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (double x : t.row(i)) sum += x;
      if (sum == 0.0)
        for (double& x : t.row(i)) x = 1.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  if (rule == FixupRule::Column) {
    for (std::size_t j = 0; j < n; ++j) {
      double prereq = 0.0;
      for (double x : d.row(j)) prereq += x;
      if (prereq != 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) t(i, j) = 1.0;
    }
  }
  normalize_rows(t);
  return t;
}

}  // namespace detail

/// T = D^T with self-transitions, every step able to reach prerequisite-free
/// steps, then row-normalized.
inline BaseTransition init_transition(const DependencyMatrix& d, FixupRule rule = FixupRule::Column) {
  const std::size_t S = d.size();
  Matrix extended(S + 1, S + 1);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) extended(i, j) = d(i, j);
  return BaseTransition(detail::init_base(d.matrix(), rule), detail::init_base(extended, rule));
}

/// Per-step maximum progress over past segments, each in [0,1].
class ProgressTracker {
 public:
  ProgressTracker() = default;
  explicit ProgressTracker(std::size_t num_steps) : max_(num_steps, 0.0) {}

  std::size_t size() const noexcept { return max_.size(); }
  double operator[](std::size_t i) const { return max_[i]; }
  std::span<const double> values() const noexcept { return max_; }

  friend bool operator==(const ProgressTracker&, const ProgressTracker&) = default;

 private:
  friend ProgressTracker observe_progress(ProgressTracker, std::span<const double>);
  std::vector<double> max_;
};

/// Folds one segment's progress into the running max. Call only after that
/// segment's belief has been emitted.
inline ProgressTracker observe_progress(ProgressTracker tracker, std::span<const double> per_step_progress) {
  if (per_step_progress.size() != tracker.size()) {
    throw Error(ErrorCode::DimensionMismatch, "progress vector has " + std::to_string(per_step_progress.size()) +
                                                  " entries, tracker has " + std::to_string(tracker.size()));
  }
  for (std::size_t i = 0; i < tracker.size(); ++i) {
    const double p = per_step_progress[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::OutOfRangeProgress, "progress of step " + std::to_string(i) + " is " + std::to_string(p));
    }
    tracker.max_[i] = std::max(tracker.max_[i], p);
  }
  return tracker;
}

inline std::vector<double> readiness(const DependencyMatrix& d, const ProgressTracker& tracker) {
  const std::size_t S = d.size();
  if (tracker.size() != S) throw Error(ErrorCode::DimensionMismatch, "tracker size differs from D");
  std::vector<double> r(S, 1.0);
  for (std::size_t i = 0; i < S; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      num += d(i, j) * tracker[j];
      den += d(i, j);
    }
    if (den > 0.0) r[i] = num / den;
  }
  return r;
}

inline std::vector<double> validity(const DependencyMatrix& d, const ProgressTracker& tracker) {
  const std::size_t S = d.size();
  if (tracker.size() != S) throw Error(ErrorCode::DimensionMismatch, "tracker size differs from D");
  std::vector<double> v(S, 1.0);
  for (std::size_t i = 0; i < S; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      num += d(j, i) * (1.0 - tracker[j]);
      den += d(j, i);
    }
    if (den > 0.0) v[i] = num / den;
  }
  return v;
}

/// Row-stochastic (S+1)x(S+1) matrix with "none" at index S.
class AdjustedTransition {
 public:
  AdjustedTransition() = default;
  explicit AdjustedTransition(Matrix m) : m_(std::move(m)) {}

  std::size_t size() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

/// Readiness/validity-weighted step block, each row normalized over steps.
/// With epsilon == 0 a row whose weights all vanish stays zero.
inline Matrix adjust_step_block(const BaseTransition& t, std::span<const double> r, std::span<const double> v,
                                double epsilon) {
  const std::size_t S = t.size();
  if (r.size() != S || v.size() != S) throw Error(ErrorCode::DimensionMismatch, "readiness/validity length");
  Matrix block(S, S);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) block(i, j) = t(i, j) * r[j] * v[j] + epsilon;
  normalize_rows(block);
  return block;
}

inline AdjustedTransition adjust(const BaseTransition& t, std::span<const double> r, std::span<const double> v,
                                 const TransitionOptions& opt = {}) {
  const std::size_t S = t.size();
  std::vector<double> rr(r.begin(), r.end()), vv(v.begin(), v.end());
  if (!opt.use_readiness) std::fill(rr.begin(), rr.end(), 1.0);
  if (!opt.use_validity) std::fill(vv.begin(), vv.end(), 1.0);

  Matrix full(S + 1, S + 1);
  if (opt.none_mode == NoneMode::Augmented) {
    const Matrix block = adjust_step_block(t, rr, vv, opt.epsilon);
    const double escape = opt.none_mass(S);
    for (std::size_t i = 0; i < S; ++i) {
      double step_mass = 0.0;
      for (std::size_t j = 0; j < S; ++j) step_mass += block(i, j);
      if (step_mass > 0.0) {
        for (std::size_t j = 0; j < S; ++j) full(i, j) = (1.0 - escape) * block(i, j);
        full(i, S) = escape;
      } else {
        full(i, S) = 1.0;  // every step blocked with epsilon disabled
      }
    }
    for (std::size_t j = 0; j <= S; ++j) full(S, j) = 1.0 / static_cast<double>(S + 1);
    return AdjustedTransition(std::move(full));
  }

  // Plain: "none" is an ordinary state with r = v = 1.
  full = t.with_none();
  rr.push_back(1.0);
  vv.push_back(1.0);
  for (std::size_t i = 0; i <= S; ++i)
    for (std::size_t j = 0; j <= S; ++j) full(i, j) = full(i, j) * rr[j] * vv[j] + opt.epsilon;
  normalize_rows(full);
  return AdjustedTransition(std::move(full));
}

}  // namespace vsg
