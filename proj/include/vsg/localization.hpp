#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vsg/core.hpp"

namespace vsg {

enum class ScaleSpacing { Logarithmic, Linear };

/// Gaussian standard deviations, in segment units.
class ScaleSet {
 public:
  static constexpr std::size_t kDefaultCount = 13;
  static constexpr double kDefaultMin = 1.0;
  static constexpr double kDefaultMax = 480.0;

  explicit ScaleSet(ScaleSpacing spacing = ScaleSpacing::Logarithmic, std::size_t count = kDefaultCount,
                    double min_sigma = kDefaultMin, double max_sigma = kDefaultMax) {
    if (count < 2 || !(min_sigma > 0.0) || !(max_sigma > min_sigma)) {
      throw Error(ErrorCode::ConfigError, "scale set needs count >= 2 and 0 < min < max");
    }
    sigmas_.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      const double f = static_cast<double>(k) / static_cast<double>(count - 1);
      sigmas_[k] = spacing == ScaleSpacing::Logarithmic ? min_sigma * std::pow(max_sigma / min_sigma, f)
                                                        : min_sigma + (max_sigma - min_sigma) * f;
    }
    sigmas_.front() = min_sigma;
    sigmas_.back() = max_sigma;
  }

  std::size_t size() const noexcept { return sigmas_.size(); }
  double operator[](std::size_t k) const { return sigmas_[k]; }
  std::span<const double> values() const noexcept { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

/// Half-sample symmetric reflection (... b a | a b c ... z | z y ...) of an
/// arbitrary index into [0, n).
inline std::size_t reflect_index(long long i, std::size_t n) {
  const long long period = 2 * static_cast<long long>(n);
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - 1 - m);
}

/// Sampled second derivative of a Gaussian on [-ceil(4 sigma), ceil(4 sigma)],
/// shifted to zero sum so constants map to zero.
inline std::vector<double> log_kernel(double sigma) {
  const long long radius = static_cast<long long>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  const double s2 = sigma * sigma;
  const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * sigma);
  double sum = 0.0;
  for (long long x = -radius; x <= radius; ++x) {
    const double xx = static_cast<double>(x * x);
    const double v = (xx / (s2 * s2) - 1.0 / s2) * norm * std::exp(-xx / (2.0 * s2));
    k[static_cast<std::size_t>(x + radius)] = v;
    sum += v;
  }
  const double mean = sum / static_cast<double>(k.size());
  for (double& v : k) v -= mean;
  return k;
}

/// sigma^2 * (signal * LoG_sigma), reflect-padded. Reflection is periodic
/// with period 2n, so taps are first summed modulo 2n; long kernels on short
/// signals then cost O(n^2) instead of O(n sigma).
inline std::vector<double> log_response(std::span<const double> signal, double sigma) {
  if (signal.empty()) throw Error(ErrorCode::DimensionMismatch, "empty signal");
  if (!(sigma > 0.0)) throw Error(ErrorCode::ConfigError, "sigma must be > 0");
  const std::vector<double> k = log_kernel(sigma);
  const long long radius = static_cast<long long>(k.size() / 2);
  const std::size_t n = signal.size();
  const long long period = 2 * static_cast<long long>(n);
  std::vector<double> out(n, 0.0);
  const double scale = sigma * sigma;
  if (static_cast<long long>(k.size()) > period) {
    std::vector<double> folded(static_cast<std::size_t>(period), 0.0);
    for (long long o = -radius; o <= radius; ++o) {
      folded[static_cast<std::size_t>(((o % period) + period) % period)] += k[static_cast<std::size_t>(o + radius)];
    }
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (long long m = 0; m < period; ++m) {
        acc += folded[static_cast<std::size_t>(m)] * signal[reflect_index(static_cast<long long>(x) - m, n)];
      }
      out[x] = scale * acc;
    }
    return out;
  }
  for (std::size_t x = 0; x < n; ++x) {
    double acc = 0.0;
    for (long long o = -radius; o <= radius; ++o) {
      acc += k[static_cast<std::size_t>(o + radius)] * signal[reflect_index(static_cast<long long>(x) - o, n)];
    }
    out[x] = scale * acc;
  }
  return out;
}

struct Blob {
  std::size_t center = 0;
  double sigma = 0.0;
  /// Negated scale-normalized LoG; positive for bright bumps.
  double response = 0.0;

  double lo() const { return static_cast<double>(center) - std::sqrt(2.0) * sigma; }
  double hi() const { return static_cast<double>(center) + std::sqrt(2.0) * sigma; }

  friend bool operator==(const Blob&, const Blob&) = default;
};

/// How two blob extents are compared during suppression.
enum class BlobOverlap {
  /// Intersection over the shorter extent; removes blobs nested in a stronger one.
  SmallerExtent,
  /// Intersection over union.
  IoU,
};

struct BlobOptions {
  double response_threshold = 1e-3;
  double nms_iou = 0.5;
  BlobOverlap overlap = BlobOverlap::SmallerExtent;
};

inline double interval_iou(double a_lo, double a_hi, double b_lo, double b_hi) {
  const double inter = std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
  const double uni = std::max(a_hi, b_hi) - std::min(a_lo, b_lo);
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double blob_overlap(const Blob& a, const Blob& b, BlobOverlap measure) {
  if (measure == BlobOverlap::IoU) return interval_iou(a.lo(), a.hi(), b.lo(), b.hi());
  const double inter = std::max(0.0, std::min(a.hi(), b.hi()) - std::max(a.lo(), b.lo()));
  const double shorter = std::min(a.hi() - a.lo(), b.hi() - b.lo());
  return shorter > 0.0 ? inter / shorter : 0.0;
}

/// Greedy suppression in descending response order; a blob is dropped when
/// it overlaps a kept blob by more than `threshold`.
inline std::vector<Blob> suppress_overlaps(std::vector<Blob> blobs, double threshold,
                                           BlobOverlap measure = BlobOverlap::SmallerExtent) {
  std::stable_sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.center != b.center) return a.center < b.center;
    return a.sigma < b.sigma;
  });
  std::vector<Blob> kept;
  for (const Blob& b : blobs) {
    bool overlaps = false;
    for (const Blob& k : kept) {
      if (blob_overlap(b, k, measure) > threshold) {
        overlaps = true;
        break;
      }
    }
    if (!overlaps) kept.push_back(b);
  }
  return kept;
}

/// Local maxima of the negated response over the (scale x position) stack,
/// each dominating its 3x3 neighbourhood, above threshold, then suppressed.
/// Equal neighbours are resolved in raster order: a candidate must strictly
/// exceed neighbours that precede it, so a flat top yields one maximum.
inline std::vector<Blob> detect_blobs(std::span<const double> signal, const ScaleSet& scales,
                                      const BlobOptions& opt = {}) {
  const std::size_t n = signal.size();
  const std::size_t m = scales.size();
  std::vector<std::vector<double>> stack(m);
  for (std::size_t s = 0; s < m; ++s) {
    stack[s] = log_response(signal, scales[s]);
    for (double& v : stack[s]) v = -v;
  }
  std::vector<Blob> candidates;
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t x = 0; x < n; ++x) {
      const double v = stack[s][x];
      if (!(v > opt.response_threshold)) continue;
      bool is_max = true;
      for (long long ds = -1; ds <= 1 && is_max; ++ds) {
        for (long long dx = -1; dx <= 1; ++dx) {
          if (ds == 0 && dx == 0) continue;
          const long long ss = static_cast<long long>(s) + ds;
          const long long xx = static_cast<long long>(x) + dx;
          if (ss < 0 || ss >= static_cast<long long>(m) || xx < 0 || xx >= static_cast<long long>(n)) continue;
          const double u = stack[static_cast<std::size_t>(ss)][static_cast<std::size_t>(xx)];
          const bool precedes = ds < 0 || (ds == 0 && dx < 0);
          if (u > v || (precedes && u == v)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({x, scales[s], v});
    }
  }
  return suppress_overlaps(std::move(candidates), opt.nms_iou, opt.overlap);
}

struct DetectedSegment {
  std::string video_id;
  std::size_t step = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  double confidence = 0.0;

  friend bool operator==(const DetectedSegment&, const DetectedSegment&) = default;
};

/// Extent center +- sqrt(2) sigma clamped to [0, T) in segment units, scaled
/// to seconds. Confidence is the mean belief over segments the extent touches.
inline std::vector<DetectedSegment> blobs_to_segments(const std::vector<Blob>& blobs, std::size_t step,
                                                      std::span<const double> belief_column,
                                                      double segment_duration_s) {
  const double T = static_cast<double>(belief_column.size());
  std::vector<DetectedSegment> out;
  for (const Blob& b : blobs) {
    const double lo = std::clamp(b.lo(), 0.0, T);
    const double hi = std::clamp(b.hi(), 0.0, T);
    if (!(hi > lo)) continue;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(belief_column.size(), static_cast<std::size_t>(std::ceil(hi)));
    double sum = 0.0;
    for (std::size_t t = first; t < last; ++t) sum += belief_column[t];
    const double conf = last > first ? sum / static_cast<double>(last - first) : 0.0;
    out.push_back({"", step, lo * segment_duration_s, hi * segment_duration_s, std::clamp(conf, 0.0, 1.0)});
  }
  return out;
}

/// Blob detection over every step column of an alignment matrix; "none" is skipped.
inline std::vector<DetectedSegment> localize(const AlignmentMatrix& alignment, double segment_duration_s,
                                             const ScaleSet& scales, const BlobOptions& opt = {},
                                             const std::string& video_id = {}) {
  std::vector<DetectedSegment> out;
  if (alignment.num_segments() == 0) return out;
  for (std::size_t step = 0; step < alignment.num_steps(); ++step) {
    const std::vector<double> column = alignment.column(step);
    auto segs = blobs_to_segments(detect_blobs(column, scales, opt), step, column, segment_duration_s);
    for (auto& s : segs) {
      s.video_id = video_id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline json to_json(const DetectedSegment& d) {
  return json{{"step", d.step}, {"start_s", d.start_s}, {"end_s", d.end_s}, {"confidence", d.confidence}};
}

}  // namespace vsg
