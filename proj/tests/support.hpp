#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerical code.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vsg/core.hpp"

namespace vsgtest {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline Vec random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  Vec v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = e(rng) + 1e-12);
  for (auto& x : v) x /= s;
  return v;
}

inline Mat random_stochastic(std::mt19937_64& rng, std::size_t n) {
  Mat m;
  for (std::size_t i = 0; i < n; ++i) m.push_back(random_simplex(rng, n));
  return m;
}

/// Filtering marginals P(x_t | o_1..t) by summing over every state path
/// x_0..x_t with x_0 ~ init, x_k ~ T_k(x_{k-1}, .), o_k weighting x_k.
inline std::vector<Vec> path_sum_marginals(const Vec& init, const std::vector<Mat>& transitions,
                                           const std::vector<Vec>& obs) {
  const std::size_t n = init.size();
  std::vector<Vec> out;
  for (std::size_t t = 1; t <= obs.size(); ++t) {
    Vec acc(n, 0.0);
    std::vector<std::size_t> path(t + 1, 0);
    for (;;) {
      double w = init[path[0]];
      for (std::size_t k = 1; k <= t; ++k) w *= transitions[k - 1][path[k - 1]][path[k]] * obs[k - 1][path[k]];
      acc[path[t]] += w;
      std::size_t d = 0;
      while (d <= t && ++path[d] == n) path[d++] = 0;
      if (d > t) break;
    }
    double z = 0.0;
    for (double x : acc) z += x;
    for (double& x : acc) x /= z;
    out.push_back(acc);
  }
  return out;
}

/// Mirror the signal explicitly (half-sample symmetric) until it covers
/// [-pad, n + pad), then correlate with a freshly computed kernel.
inline Vec brute_force_log(const Vec& signal, double sigma) {
  const long long n = static_cast<long long>(signal.size());
  const long long r = static_cast<long long>(std::ceil(4.0 * sigma));
  Vec kernel;
  for (long long x = -r; x <= r; ++x) {
    const double g = std::exp(-0.5 * (x / sigma) * (x / sigma)) / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
    kernel.push_back(g * (static_cast<double>(x * x) - sigma * sigma) / std::pow(sigma, 4));
  }
  double mean = 0.0;
  for (double k : kernel) mean += k;
  mean /= static_cast<double>(kernel.size());
  for (double& k : kernel) k -= mean;

  // Build the extended sequence block by block: forward, reversed, forward, ...
  Vec forward = signal;
  Vec backward(signal.rbegin(), signal.rend());
  const long long blocks = r / n + 2;
  Vec ext;
  for (long long b = -blocks; b <= blocks; ++b) {
    const Vec& blk = (b % 2 == 0) ? forward : backward;
    ext.insert(ext.end(), blk.begin(), blk.end());
  }
  const long long origin = blocks * n;  // ext[origin] == signal[0]

  Vec out(signal.size(), 0.0);
  for (long long x = 0; x < n; ++x) {
    double acc = 0.0;
    for (long long o = -r; o <= r; ++o) acc += kernel[static_cast<std::size_t>(o + r)] * ext[origin + x - o];
    out[static_cast<std::size_t>(x)] = sigma * sigma * acc;
  }
  return out;
}

/// One-sided sign test: P(at least `wins` successes of `n` fair coin flips).
inline double sign_test_p(std::size_t wins, std::size_t n) {
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  return p;
}

/// Random procedural video: a subset of steps in random order, each with
/// one interval, separated by optional background gaps.
inline vsg::GroundTruthAnnotation random_video(std::mt19937_64& rng, std::size_t num_steps, const std::string& id,
                                               double segment_duration_s = 2.0) {
  std::vector<std::size_t> order(num_steps);
  for (std::size_t i = 0; i < num_steps; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> keep(std::max<std::size_t>(2, num_steps / 2), num_steps);
  order.resize(keep(rng));
  std::uniform_int_distribution<int> gap(0, 3), len(3, 8);
  vsg::GroundTruthAnnotation ann;
  ann.video_id = id;
  ann.task_id = "synthetic";
  double t = gap(rng) * segment_duration_s;
  for (std::size_t s : order) {
    const double d = len(rng) * segment_duration_s;
    ann.intervals.push_back({s, t, t + d});
    t += d + gap(rng) * segment_duration_s;
  }
  ann.length_s = t + segment_duration_s;
  return ann;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vsg_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace vsgtest
