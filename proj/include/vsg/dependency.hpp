#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vsg/core.hpp"

namespace vsg {

/// D(i, j) = probability that step j is a prerequisite of step i.
class DependencyMatrix {
 public:
  DependencyMatrix() = default;

  explicit DependencyMatrix(Matrix m) : m_(std::move(m)) {
    if (!m_.square()) throw Error(ErrorCode::DimensionMismatch, "dependency matrix must be square");
    for (std::size_t i = 0; i < m_.rows(); ++i) {
      for (std::size_t j = 0; j < m_.cols(); ++j) {
        const double x = m_(i, j);
        if (!(x >= 0.0 && x <= 1.0)) {
          throw Error(ErrorCode::MalformedRecord, "dependency entry (" + std::to_string(i) + "," +
                                                      std::to_string(j) + ") outside [0,1]");
        }
      }
      if (m_(i, i) != 0.0) {
        throw Error(ErrorCode::MalformedRecord, "dependency diagonal must be zero at " + std::to_string(i));
      }
    }
  }

  static DependencyMatrix zeros(std::size_t num_steps) { return DependencyMatrix(Matrix(num_steps, num_steps)); }

  std::size_t size() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }

  /// Sum of row i: total prerequisite weight of step i.
  double prerequisite_weight(std::size_t i) const {
    double s = 0.0;
    for (double x : m_.row(i)) s += x;
    return s;
  }

  /// Sum of column i: total weight of steps that require step i.
  double successor_weight(std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = 0; j < m_.rows(); ++j) s += m_(j, i);
    return s;
  }

  friend bool operator==(const DependencyMatrix&, const DependencyMatrix&) = default;

 private:
  Matrix m_;
};

inline json dependency_to_json(const std::string& task_id, const DependencyMatrix& d) {
  return json{{"task_id", task_id}, {"matrix", d.matrix().to_rows()}};
}

inline DependencyMatrix dependency_from_json(const json& raw, std::size_t expected_steps) {
  Matrix m;
  try {
    m = Matrix::from_rows(raw.at("matrix").get<std::vector<std::vector<double>>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("dependency file field 'matrix': ") + e.what());
  }
  if (m.rows() != expected_steps || m.cols() != expected_steps) {
    throw Error(ErrorCode::DimensionMismatch, "dependency matrix is " + std::to_string(m.rows()) + "x" +
                                                  std::to_string(m.cols()) + ", task has " +
                                                  std::to_string(expected_steps) + " steps");
  }
  return DependencyMatrix(std::move(m));
}

// ---------------------------------------------------------------------------
// Construction from a language model.

/// Answers "is `prerequisite` strictly required before `step`" with P(Yes).
class PrerequisiteProvider {
 public:
  virtual ~PrerequisiteProvider() = default;
  virtual double probability_yes(const TaskSpec& task, std::size_t step, std::size_t prerequisite) = 0;
};

/// Queries every ordered pair (i, j), i != j. Either the whole matrix is
/// produced or the first provider error propagates; callers persist only a
/// returned matrix.
inline DependencyMatrix build_dependency_remote(const TaskSpec& task, PrerequisiteProvider& provider,
                                                std::size_t max_concurrency = 1) {
  const std::size_t S = task.num_steps();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j)
      if (i != j) pairs.emplace_back(i, j);

  Matrix m(S, S);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= pairs.size()) return;
      const auto [i, j] = pairs[k];
      try {
        const double p = provider.probability_yes(task, i, j);
        if (!(p >= 0.0 && p <= 1.0)) {
          throw Error(ErrorCode::MalformedProviderResponse,
                      "prerequisite probability " + std::to_string(p) + " outside [0,1]");
        }
        m(i, j) = p;  // pair-indexed slot, no two workers share one
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(max_concurrency, 1, std::max<std::size_t>(pairs.size(), 1));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return DependencyMatrix(std::move(m));
}

// ---------------------------------------------------------------------------
// Oracle built from one video's annotated order.

/// Steps ordered by first-occurrence start; consecutive pairs (p then q) give
/// D(q, p) = 1. Steps absent from the annotation keep zero rows and columns.
inline DependencyMatrix build_dependency_chain_oracle(const GroundTruthAnnotation& ann, std::size_t num_steps) {
  if (ann.intervals.empty()) throw Error(ErrorCode::EmptyAnnotation, "annotation '" + ann.video_id + "' is empty");
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t s : ann.steps_present()) {
    if (s >= num_steps) throw Error(ErrorCode::DimensionMismatch, "annotation step exceeds task size");
    order.emplace_back(ann.first_start(s), s);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  Matrix m(num_steps, num_steps);
  for (std::size_t k = 1; k < order.size(); ++k) m(order[k].second, order[k - 1].second) = 1.0;
  return DependencyMatrix(std::move(m));
}

// ---------------------------------------------------------------------------
// Consistency analysis.

using BinaryMatrix = std::vector<std::vector<std::uint8_t>>;

/// Entry is on iff D >= theta, except at theta == 0 where the rule is D > 0
/// so exact zeros stay off.
inline BinaryMatrix threshold_matrix(const DependencyMatrix& d, double theta) {
  const std::size_t S = d.size();
  BinaryMatrix out(S, std::vector<std::uint8_t>(S, 0));
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) {
      if (i == j) continue;
      const double x = d(i, j);
      out[i][j] = theta == 0.0 ? (x > 0.0) : (x >= theta);
    }
  return out;
}

struct TaskViolations {
  std::string task_id;
  std::size_t declared = 0;
  std::size_t violated = 0;
  /// (dependent step, prerequisite step) pairs found violated.
  std::vector<std::pair<std::size_t, std::size_t>> violated_pairs;
};

struct ViolationStats {
  double threshold = 0.0;
  double violated_dependency_fraction = 0.0;
  double tasks_with_violation_fraction = 0.0;
  std::vector<TaskViolations> per_task;
};

struct TaskDependencies {
  std::string task_id;
  BinaryMatrix dependencies;
  std::vector<GroundTruthAnnotation> annotations;
};

/// True iff some video shows `step` starting before the first start of its
/// `prerequisite` while both are present.
inline bool dependency_violated(std::size_t step, std::size_t prerequisite,
                                const std::vector<GroundTruthAnnotation>& annotations) {
  for (const auto& ann : annotations) {
    const double s = ann.first_start(step);
    const double p = ann.first_start(prerequisite);
    if (s >= 0.0 && p >= 0.0 && s < p) return true;
  }
  return false;
}

inline TaskViolations analyze_task_violations(const TaskDependencies& task) {
  const std::size_t S = task.dependencies.size();
  TaskViolations out;
  out.task_id = task.task_id;
  for (const auto& row : task.dependencies) {
    if (row.size() != S) throw Error(ErrorCode::DimensionMismatch, "dependency matrix is not square");
  }
  for (const auto& ann : task.annotations) {
    for (const auto& iv : ann.intervals) {
      if (iv.step >= S) {
        throw Error(ErrorCode::DimensionMismatch, "annotation '" + ann.video_id + "' step " +
                                                      std::to_string(iv.step) + " exceeds S=" + std::to_string(S));
      }
    }
  }
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) {
      if (i == j || !task.dependencies[i][j]) continue;
      ++out.declared;
      if (dependency_violated(i, j, task.annotations)) {
        ++out.violated;
        out.violated_pairs.emplace_back(i, j);
      }
    }
  return out;
}

/// Pools declared dependencies over all tasks. Tasks declaring nothing count
/// as violation-free.
inline ViolationStats analyze_violations(const std::vector<TaskDependencies>& tasks, double threshold = 0.0) {
  ViolationStats stats;
  stats.threshold = threshold;
  std::size_t declared = 0, violated = 0, tasks_violating = 0;
  for (const auto& t : tasks) {
    auto tv = analyze_task_violations(t);
    declared += tv.declared;
    violated += tv.violated;
    if (tv.violated > 0) ++tasks_violating;
    stats.per_task.push_back(std::move(tv));
  }
  stats.violated_dependency_fraction = declared == 0 ? 0.0 : static_cast<double>(violated) / declared;
  stats.tasks_with_violation_fraction =
      tasks.empty() ? 0.0 : static_cast<double>(tasks_violating) / static_cast<double>(tasks.size());
  return stats;
}

struct SoftTaskDependencies {
  std::string task_id;
  DependencyMatrix dependencies;
  std::vector<GroundTruthAnnotation> annotations;
};

inline std::vector<double> default_violation_thresholds() {
  std::vector<double> out;
  for (int k = 0; k <= 10; ++k) out.push_back(k / 10.0);
  return out;
}

inline std::vector<ViolationStats> violation_sweep(const std::vector<SoftTaskDependencies>& tasks,
                                                   const std::vector<double>& thresholds) {
  std::vector<ViolationStats> out;
  for (double theta : thresholds) {
    std::vector<TaskDependencies> hard;
    hard.reserve(tasks.size());
    for (const auto& t : tasks) hard.push_back({t.task_id, threshold_matrix(t.dependencies, theta), t.annotations});
    out.push_back(analyze_violations(hard, theta));
  }
  return out;
}

}  // namespace vsg
