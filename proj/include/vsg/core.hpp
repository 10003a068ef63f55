#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace vsg {

using json = nlohmann::json;

enum class ErrorCode {
  EmptySteps,
  DuplicateStepIndex,
  MalformedRecord,
  NonPositiveDuration,
  NotSimplex,
  DimensionMismatch,
  EmptyAnnotation,
  OutOfRangeProgress,
  ProviderUnavailable,
  MalformedProviderResponse,
  LogitsUnavailable,
  LabelTokenCollision,
  MissingObservation,
  CorruptReplayFile,
  EmptyGroundTruth,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySteps: return "EmptySteps";
    case ErrorCode::DuplicateStepIndex: return "DuplicateStepIndex";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::NonPositiveDuration: return "NonPositiveDuration";
    case ErrorCode::NotSimplex: return "NotSimplex";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyAnnotation: return "EmptyAnnotation";
    case ErrorCode::OutOfRangeProgress: return "OutOfRangeProgress";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::MalformedProviderResponse: return "MalformedProviderResponse";
    case ErrorCode::LogitsUnavailable: return "LogitsUnavailable";
    case ErrorCode::LabelTokenCollision: return "LabelTokenCollision";
    case ErrorCode::MissingObservation: return "MissingObservation";
    case ErrorCode::CorruptReplayFile: return "CorruptReplayFile";
    case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Provider failures that may succeed on a later attempt.
  bool retryable() const noexcept { return code_ == ErrorCode::ProviderUnavailable; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix. Sizes here are tiny (tens of steps), so a flat
// vector is all we need.

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) {
        throw Error(ErrorCode::DimensionMismatch, "ragged matrix row " + std::to_string(i));
      }
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  std::vector<std::vector<double>> to_rows() const {
    std::vector<std::vector<double>> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i].assign(row(i).begin(), row(i).end());
    return out;
  }

  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Probability simplex vectors.

inline constexpr double kSimplexTolerance = 1e-6;

inline bool is_simplex(std::span<const double> v, double tol = kSimplexTolerance) {
  if (v.empty()) return false;
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0 || x > 1.0 + tol) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

/// The one place normalization happens. Throws NotSimplex when there is no
/// mass to normalize.
inline std::vector<double> renormalize(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) {
      throw Error(ErrorCode::NotSimplex, "cannot renormalize negative or non-finite entry");
    }
    sum += x;
  }
  if (!(sum > 0.0)) throw Error(ErrorCode::NotSimplex, "cannot renormalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= sum;
  return out;
}

/// Immutable probability vector. The tag only separates the domain roles at
/// the type level.
template <typename Tag>
class Distribution {
 public:
  Distribution() = default;

  explicit Distribution(std::vector<double> values) : values_(std::move(values)) {
    if (!is_simplex(values_)) {
      throw Error(ErrorCode::NotSimplex, std::string(Tag::name) + " is not a probability simplex");
    }
  }

  static Distribution uniform(std::size_t n) {
    return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static Distribution one_hot(std::size_t n, std::size_t k) {
    std::vector<double> v(n, 0.0);
    v.at(k) = 1.0;
    return Distribution(std::move(v));
  }

  static Distribution normalized(std::span<const double> v) { return Distribution(renormalize(v)); }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) - values_.begin());
  }

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  std::vector<double> values_;
};

struct ObservationTag { static constexpr const char* name = "ObservationScores"; };
struct ProgressTag { static constexpr const char* name = "ProgressDistribution"; };
struct BeliefTag { static constexpr const char* name = "Belief"; };

/// Scores over S steps plus "none" at index S.
using ObservationScores = Distribution<ObservationTag>;
/// Probabilities over progress tokens 0..9.
using ProgressDistribution = Distribution<ProgressTag>;
/// Filter posterior over S steps plus "none" at index S.
using Belief = Distribution<BeliefTag>;

inline constexpr std::size_t kProgressLevels = 10;

// ---------------------------------------------------------------------------
// Task, timeline, annotations.

struct TaskSpec {
  std::string task_id;
  std::string goal;
  std::vector<std::string> steps;

  std::size_t num_steps() const noexcept { return steps.size(); }
  /// Index of the "none" state.
  std::size_t none_index() const noexcept { return steps.size(); }
  std::size_t num_states() const noexcept { return steps.size() + 1; }
};

inline TaskSpec validate_task(const json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::MalformedRecord, "task record must be an object");
  TaskSpec task;
  try {
    if (raw.contains("task_id")) task.task_id = raw.at("task_id").get<std::string>();
    task.goal = raw.at("goal").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("field 'goal'/'task_id': ") + e.what());
  }
  if (!raw.contains("steps") || !raw.at("steps").is_array()) {
    throw Error(ErrorCode::MalformedRecord, "field 'steps' must be an array");
  }
  const json& steps = raw.at("steps");
  if (steps.empty()) throw Error(ErrorCode::EmptySteps, "field 'steps' is empty");

  // Steps are either plain strings in order, or {"index", "description"} objects.
  std::vector<std::string> slots(steps.size());
  std::vector<bool> seen(steps.size(), false);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const json& s = steps[k];
    std::size_t index = k;
    std::string text;
    if (s.is_string()) {
      text = s.get<std::string>();
    } else if (s.is_object() && s.contains("index") && s.contains("description")) {
      if (!s.at("index").is_number_integer() || s.at("index").get<long long>() < 0) {
        throw Error(ErrorCode::MalformedRecord, "field 'steps[" + std::to_string(k) + "].index'");
      }
      index = s.at("index").get<std::size_t>();
      if (!s.at("description").is_string()) {
        throw Error(ErrorCode::MalformedRecord, "field 'steps[" + std::to_string(k) + "].description'");
      }
      text = s.at("description").get<std::string>();
    } else {
      throw Error(ErrorCode::MalformedRecord, "field 'steps[" + std::to_string(k) + "]'");
    }
    if (index >= steps.size()) {
      throw Error(ErrorCode::MalformedRecord,
                  "field 'steps[" + std::to_string(k) + "].index' is not dense in 0..S-1");
    }
    if (seen[index]) {
      throw Error(ErrorCode::DuplicateStepIndex, "field 'steps' repeats index " + std::to_string(index));
    }
    if (text.empty()) {
      throw Error(ErrorCode::MalformedRecord, "field 'steps[" + std::to_string(k) + "]' is empty");
    }
    seen[index] = true;
    slots[index] = std::move(text);
  }
  task.steps = std::move(slots);
  return task;
}

inline json to_json(const TaskSpec& task) {
  return json{{"task_id", task.task_id}, {"goal", task.goal}, {"steps", task.steps}};
}

enum class SegmentRounding { Ceil, Floor };

struct SegmentTimeline {
  std::string video_id;
  double segment_duration_s = 2.0;
  std::size_t num_segments = 1;

  double start_s(std::size_t t) const { return static_cast<double>(t) * segment_duration_s; }
  double end_s(std::size_t t) const { return static_cast<double>(t + 1) * segment_duration_s; }
  double midpoint_s(std::size_t t) const { return (static_cast<double>(t) + 0.5) * segment_duration_s; }
};

inline SegmentTimeline timeline_from_duration(double video_length_s, double segment_duration_s,
                                              SegmentRounding rounding = SegmentRounding::Ceil,
                                              std::string video_id = {}) {
  if (!(video_length_s > 0.0) || !(segment_duration_s > 0.0)) {
    throw Error(ErrorCode::NonPositiveDuration, "video length and segment duration must be > 0");
  }
  const double ratio = video_length_s / segment_duration_s;
  double count = rounding == SegmentRounding::Ceil ? std::ceil(ratio) : std::floor(ratio);
  // A video shorter than one segment still occupies one index.
  count = std::max(count, 1.0);
  return SegmentTimeline{std::move(video_id), segment_duration_s, static_cast<std::size_t>(count)};
}

struct AnnotatedInterval {
  std::size_t step = 0;
  double start_s = 0.0;
  double end_s = 0.0;

  friend bool operator==(const AnnotatedInterval&, const AnnotatedInterval&) = default;
};

struct GroundTruthAnnotation {
  std::string video_id;
  std::string task_id;
  double length_s = 0.0;
  std::vector<AnnotatedInterval> intervals;

  /// Distinct annotated steps, ascending.
  std::vector<std::size_t> steps_present() const {
    std::vector<std::size_t> out;
    for (const auto& iv : intervals) out.push_back(iv.step);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Earliest start time of a step, or a negative value when absent.
  double first_start(std::size_t step) const {
    double best = -1.0;
    for (const auto& iv : intervals) {
      if (iv.step == step && (best < 0.0 || iv.start_s < best)) best = iv.start_s;
    }
    return best;
  }
};

inline GroundTruthAnnotation validate_annotation(const json& raw, std::size_t num_steps) {
  GroundTruthAnnotation ann;
  try {
    ann.video_id = raw.at("video_id").get<std::string>();
    if (raw.contains("task_id")) ann.task_id = raw.at("task_id").get<std::string>();
    if (raw.contains("length_s")) ann.length_s = raw.at("length_s").get<double>();
    for (const json& seg : raw.at("segments")) {
      AnnotatedInterval iv;
      const long long step = seg.at("step").get<long long>();
      iv.start_s = seg.at("start_s").get<double>();
      iv.end_s = seg.at("end_s").get<double>();
      if (step < 0 || static_cast<std::size_t>(step) >= num_steps) {
        throw Error(ErrorCode::MalformedRecord, "annotation step index " + std::to_string(step) +
                                                    " out of range for S=" + std::to_string(num_steps));
      }
      iv.step = static_cast<std::size_t>(step);
      if (!(iv.start_s >= 0.0) || !(iv.start_s < iv.end_s)) {
        throw Error(ErrorCode::MalformedRecord, "annotation interval must satisfy 0 <= start_s < end_s");
      }
      ann.intervals.push_back(iv);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("annotation: ") + e.what());
  }
  if (ann.length_s <= 0.0) {
    for (const auto& iv : ann.intervals) ann.length_s = std::max(ann.length_s, iv.end_s);
  }
  return ann;
}

inline json to_json(const GroundTruthAnnotation& ann) {
  json segs = json::array();
  for (const auto& iv : ann.intervals) {
    segs.push_back({{"step", iv.step}, {"start_s", iv.start_s}, {"end_s", iv.end_s}});
  }
  return json{{"video_id", ann.video_id}, {"task_id", ann.task_id}, {"length_s", ann.length_s}, {"segments", segs}};
}

/// One belief row per processed segment, S+1 columns.
class AlignmentMatrix {
 public:
  AlignmentMatrix() = default;
  explicit AlignmentMatrix(std::size_t num_states) : num_states_(num_states) {}

  void append(const Belief& belief) {
    if (belief.size() != num_states_) {
      throw Error(ErrorCode::DimensionMismatch, "belief width does not match alignment matrix");
    }
    rows_.push_back(belief);
  }

  std::size_t num_segments() const noexcept { return rows_.size(); }
  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t num_steps() const noexcept { return num_states_ == 0 ? 0 : num_states_ - 1; }
  const Belief& row(std::size_t t) const { return rows_.at(t); }
  double at(std::size_t t, std::size_t state) const { return rows_.at(t)[state]; }
  const std::vector<Belief>& rows() const noexcept { return rows_; }

  std::vector<double> column(std::size_t state) const {
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r[state]);
    return out;
  }

  friend bool operator==(const AlignmentMatrix&, const AlignmentMatrix&) = default;

 private:
  std::size_t num_states_ = 0;
  std::vector<Belief> rows_;
};

}  // namespace vsg
