#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vsg/core.hpp"

namespace vsg {

/// Expected progress token (sum j * p_j over tokens 0..9), scaled by 1/9 into [0,1].
inline double expected_progress(const ProgressDistribution& dist) {
  if (dist.size() != kProgressLevels) throw Error(ErrorCode::DimensionMismatch, "progress distribution width");
  double e = 0.0;
  for (std::size_t j = 0; j < kProgressLevels; ++j) e += static_cast<double>(j) * dist[j];
  return std::clamp(e / 9.0, 0.0, 1.0);
}

/// Distribution over tokens 0..9 whose expected_progress is `fraction`:
/// linear split between the two neighbouring tokens.
inline ProgressDistribution progress_from_fraction(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::OutOfRangeProgress, "progress fraction " + std::to_string(fraction));
  }
  const double x = fraction * 9.0;
  const std::size_t lo = std::min<std::size_t>(static_cast<std::size_t>(std::floor(x)), 8);
  const double w = x - static_cast<double>(lo);
  std::vector<double> p(kProgressLevels, 0.0);
  p[lo] = 1.0 - w;
  p[lo + 1] += w;
  return ProgressDistribution(std::move(p));
}

/// Softmax over candidate logits only. -inf candidates get zero mass.
inline std::vector<double> restricted_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (std::isnan(x)) throw Error(ErrorCode::MalformedProviderResponse, "NaN logit");
    mx = std::max(mx, x);
  }
  if (!std::isfinite(mx)) throw Error(ErrorCode::LogitsUnavailable, "no candidate token has a finite logit");
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isfinite(logits[i]) ? std::exp(logits[i] - mx) : 0.0;
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Per-segment record, the unit of caching and replay.

struct SegmentRecord {
  std::size_t t = 0;
  ObservationScores vsg;
  std::vector<ProgressDistribution> progress;
  std::optional<ObservationScores> next_step;

  /// Expected progress per step, in [0,1].
  std::vector<double> progress_values() const {
    std::vector<double> out;
    out.reserve(progress.size());
    for (const auto& p : progress) out.push_back(expected_progress(p));
    return out;
  }

  friend bool operator==(const SegmentRecord&, const SegmentRecord&) = default;
};

inline json to_json(const SegmentRecord& r) {
  json progress = json::array();
  for (const auto& p : r.progress) progress.push_back(p.vector());
  json out{{"t", r.t}, {"vsg", r.vsg.vector()}, {"progress", progress}};
  if (r.next_step) out["next"] = r.next_step->vector();
  return out;
}

inline SegmentRecord segment_record_from_json(const json& j, std::size_t num_steps) {
  SegmentRecord r;
  try {
    r.t = j.at("t").get<std::size_t>();
    auto vsg = j.at("vsg").get<std::vector<double>>();
    if (vsg.size() != num_steps + 1) {
      throw Error(ErrorCode::CorruptReplayFile, "segment " + std::to_string(r.t) + ": 'vsg' has " +
                                                    std::to_string(vsg.size()) + " entries, expected " +
                                                    std::to_string(num_steps + 1));
    }
    r.vsg = ObservationScores(std::move(vsg));
    const json& prog = j.at("progress");
    if (!prog.is_array() || prog.size() != num_steps) {
      throw Error(ErrorCode::CorruptReplayFile, "segment " + std::to_string(r.t) + ": 'progress' must have S rows");
    }
    for (const json& row : prog) {
      auto p = row.get<std::vector<double>>();
      if (p.size() != kProgressLevels) {
        throw Error(ErrorCode::CorruptReplayFile, "segment " + std::to_string(r.t) + ": progress row width");
      }
      r.progress.emplace_back(std::move(p));
    }
    if (j.contains("next")) r.next_step = ObservationScores(j.at("next").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptReplayFile, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptReplayFile) throw;
    throw Error(ErrorCode::CorruptReplayFile, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Provider contract.

/// Source of per-segment step scores and progress distributions. Given its
/// configuration, repeated calls with the same arguments return the same values.
class ObservationProvider {
 public:
  virtual ~ObservationProvider() = default;

  virtual std::size_t num_steps() const = 0;
  virtual ObservationScores vsg_scores(std::size_t t) = 0;
  virtual ProgressDistribution progress(std::size_t t, std::size_t step) = 0;
  virtual std::optional<ObservationScores> next_step_scores(std::size_t /*t*/) { return std::nullopt; }

  /// Number of segments this provider can serve, when it knows.
  virtual std::optional<std::size_t> available_segments() const { return std::nullopt; }

  virtual SegmentRecord segment(std::size_t t, bool with_next_step = false) {
    SegmentRecord r;
    r.t = t;
    r.vsg = vsg_scores(t);
    for (std::size_t i = 0; i < num_steps(); ++i) r.progress.push_back(progress(t, i));
    if (with_next_step) {
      r.next_step = next_step_scores(t);
      if (!r.next_step) throw Error(ErrorCode::MissingObservation, "provider has no next-step scores");
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Replay from a JSON Lines file.

class ReplayProvider final : public ObservationProvider {
 public:
  ReplayProvider(const std::filesystem::path& path, std::size_t num_steps) : num_steps_(num_steps) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open replay file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string content = buffer.str();
    if (!content.empty() && content.back() != '\n') {
      throw Error(ErrorCode::CorruptReplayFile, path.string() + " ends with a partial record");
    }
    std::istringstream lines(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptReplayFile, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      SegmentRecord r = segment_record_from_json(j, num_steps_);
      // Append-log semantics: a later record for the same segment wins.
      const std::size_t t = r.t;
      records_[t] = std::move(r);
    }
  }

  explicit ReplayProvider(std::map<std::size_t, SegmentRecord> records, std::size_t num_steps)
      : num_steps_(num_steps), records_(std::move(records)) {}

  std::size_t num_steps() const override { return num_steps_; }
  ObservationScores vsg_scores(std::size_t t) override { return lookup(t).vsg; }
  ProgressDistribution progress(std::size_t t, std::size_t step) override { return lookup(t).progress.at(step); }
  std::optional<ObservationScores> next_step_scores(std::size_t t) override { return lookup(t).next_step; }

  SegmentRecord segment(std::size_t t, bool with_next_step = false) override {
    SegmentRecord r = lookup(t);
    if (with_next_step && !r.next_step) {
      throw Error(ErrorCode::MissingObservation, "segment " + std::to_string(t) + " has no next-step scores");
    }
    if (!with_next_step) r.next_step.reset();
    return r;
  }

  /// Contiguous prefix length 0..n-1 present in the file.
  std::optional<std::size_t> available_segments() const override {
    std::size_t n = 0;
    while (records_.count(n)) ++n;
    return n;
  }

 private:
  const SegmentRecord& lookup(std::size_t t) const {
    auto it = records_.find(t);
    if (it == records_.end()) throw Error(ErrorCode::MissingObservation, "segment " + std::to_string(t) + " not in replay");
    return it->second;
  }

  std::size_t num_steps_;
  std::map<std::size_t, SegmentRecord> records_;
};

// ---------------------------------------------------------------------------
// Append-only cache in front of an expensive provider.

/// Serves completed segments from `path` and appends new ones as they are
/// fetched, one flushed line per segment. A trailing partial line left by an
/// interrupted run is dropped on open.
class CachingProvider final : public ObservationProvider {
 public:
  CachingProvider(std::shared_ptr<ObservationProvider> inner, std::filesystem::path path)
      : inner_(std::move(inner)), path_(std::move(path)) {
    if (std::filesystem::exists(path_)) load_existing();
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  std::size_t num_steps() const override { return inner_->num_steps(); }
  ObservationScores vsg_scores(std::size_t t) override { return segment(t).vsg; }
  ProgressDistribution progress(std::size_t t, std::size_t step) override { return segment(t).progress.at(step); }
  std::optional<ObservationScores> next_step_scores(std::size_t t) override { return segment(t, true).next_step; }
  std::optional<std::size_t> available_segments() const override { return inner_->available_segments(); }

  SegmentRecord segment(std::size_t t, bool with_next_step = false) override {
    {
      std::lock_guard lock(mutex_);
      auto it = records_.find(t);
      if (it != records_.end() && (!with_next_step || it->second.next_step)) {
        ++hits_;
        SegmentRecord r = it->second;
        if (!with_next_step) r.next_step.reset();
        return r;
      }
    }
    SegmentRecord r = inner_->segment(t, with_next_step);
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::IoError, "cannot append to cache " + path_.string());
    out << to_json(r).dump() << '\n';
    out.flush();
    records_[t] = r;
    return r;
  }

  std::size_t cache_hits() const noexcept { return hits_; }
  std::size_t cached_segments() const noexcept { return records_.size(); }

 private:
  void load_existing() {
    std::ifstream in(path_, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string content = buffer.str();
    std::size_t complete = content.rfind('\n');
    complete = complete == std::string::npos ? 0 : complete + 1;
    if (complete != content.size()) {
      content.resize(complete);
      std::ofstream rewrite(path_, std::ios::binary | std::ios::trunc);
      rewrite << content;
    }
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptReplayFile, path_.string() + ": " + e.what());
      }
      SegmentRecord r = segment_record_from_json(j, inner_->num_steps());
      records_[r.t] = std::move(r);
    }
  }

  std::shared_ptr<ObservationProvider> inner_;
  std::filesystem::path path_;
  std::mutex mutex_;
  std::map<std::size_t, SegmentRecord> records_;
  std::size_t hits_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic oracle driven by ground-truth annotations.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Uniform double in [0,1) from 53 high bits.
inline double unit_double(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Class of segment t: the annotated step covering its midpoint, else "none".
inline std::size_t true_class(const GroundTruthAnnotation& ann, const SegmentTimeline& timeline, std::size_t t,
                              std::size_t num_steps) {
  const double mid = timeline.midpoint_s(t);
  for (const auto& iv : ann.intervals) {
    if (iv.start_s <= mid && mid < iv.end_s) return iv.step;
  }
  return num_steps;
}

/// Fraction of step `step` completed at the midpoint of segment t, maximized
/// over the step's intervals; 0 for unannotated steps.
inline double oracle_progress(const GroundTruthAnnotation& ann, const SegmentTimeline& timeline, std::size_t t,
                              std::size_t step) {
  const double mid = timeline.midpoint_s(t);
  double best = 0.0;
  for (const auto& iv : ann.intervals) {
    if (iv.step != step) continue;
    best = std::max(best, std::clamp((mid - iv.start_s) / (iv.end_s - iv.start_s), 0.0, 1.0));
  }
  return best;
}

/// Scores concentrated on the true class; with probability `noise` the
/// concentrated class is replaced by a uniformly drawn wrong one. Scores are
/// (1 - noise) one-hot plus noise spread uniformly over all S+1 classes.
class SyntheticOracleProvider final : public ObservationProvider {
 public:
  SyntheticOracleProvider(GroundTruthAnnotation ann, SegmentTimeline timeline, std::size_t num_steps, double noise,
                          std::uint64_t seed)
      : ann_(std::move(ann)), timeline_(std::move(timeline)), num_steps_(num_steps), noise_(noise) {
    if (!(noise >= 0.0 && noise <= 1.0)) throw Error(ErrorCode::ConfigError, "noise must be in [0,1]");
    stream_ = detail::splitmix64(seed ^ detail::fnv1a(ann_.video_id));
  }

  std::size_t num_steps() const override { return num_steps_; }
  std::optional<std::size_t> available_segments() const override { return timeline_.num_segments; }

  /// The class the scores concentrate on at segment t.
  std::size_t emitted_class(std::size_t t) const {
    const std::size_t truth = true_class(ann_, timeline_, t, num_steps_);
    if (noise_ == 0.0) return truth;
    const std::uint64_t a = detail::splitmix64(stream_ ^ detail::splitmix64(2 * t + 1));
    if (detail::unit_double(a) >= noise_) return truth;
    const std::uint64_t b = detail::splitmix64(a);
    const std::size_t k = static_cast<std::size_t>(detail::unit_double(b) * static_cast<double>(num_steps_));
    return k >= truth ? k + 1 : k;  // skip the true class among S+1
  }

  ObservationScores vsg_scores(std::size_t t) override {
    check_range(t);
    const std::size_t n = num_steps_ + 1;
    std::vector<double> v(n, noise_ / static_cast<double>(n));
    v[emitted_class(t)] += 1.0 - noise_;
    return ObservationScores(std::move(v));
  }

  ProgressDistribution progress(std::size_t t, std::size_t step) override {
    check_range(t);
    return progress_from_fraction(oracle_progress(ann_, timeline_, t, step));
  }

  /// Halfway between the current scores and uniform.
  std::optional<ObservationScores> next_step_scores(std::size_t t) override {
    const ObservationScores cur = vsg_scores(t);
    std::vector<double> v(cur.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * cur[i] + 0.5 / static_cast<double>(v.size());
    return ObservationScores(std::move(v));
  }

 private:
  void check_range(std::size_t t) const {
    if (t >= timeline_.num_segments) {
      throw Error(ErrorCode::MissingObservation, "segment " + std::to_string(t) + " beyond timeline");
    }
  }

  GroundTruthAnnotation ann_;
  SegmentTimeline timeline_;
  std::size_t num_steps_;
  double noise_;
  std::uint64_t stream_;
};

}  // namespace vsg
