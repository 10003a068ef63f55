#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vsg/core.hpp"
#include "vsg/localization.hpp"

namespace vsg {

/// Earliest segment with the maximum score in `column` of `rows`.
inline std::size_t earliest_argmax(const std::vector<std::vector<double>>& rows, std::size_t column) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < rows.size(); ++t) {
    if (rows[t][column] > rows[best][column]) best = t;
  }
  return best;
}

/// R@1 over a segments x states score table (beliefs or raw observations).
/// Columns beyond the annotated steps ("none") are never consulted.
inline double recall_at_1(const std::vector<std::vector<double>>& rows, const GroundTruthAnnotation& gt,
                          const SegmentTimeline& timeline) {
  const std::vector<std::size_t> steps = gt.steps_present();
  if (steps.empty()) throw Error(ErrorCode::EmptyGroundTruth, "video " + gt.video_id + " has no annotated steps");
  if (rows.empty()) throw Error(ErrorCode::DimensionMismatch, "no segments to evaluate");
  std::size_t hits = 0;
  for (std::size_t step : steps) {
    for (const auto& r : rows) {
      if (step >= r.size()) throw Error(ErrorCode::DimensionMismatch, "annotated step outside score columns");
    }
    const double mid = timeline.midpoint_s(earliest_argmax(rows, step));
    for (const auto& iv : gt.intervals) {
      if (iv.step == step && mid >= iv.start_s && mid <= iv.end_s) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(steps.size());
}

inline double recall_at_1(const AlignmentMatrix& m, const GroundTruthAnnotation& gt, const SegmentTimeline& timeline) {
  std::vector<std::vector<double>> rows;
  rows.reserve(m.num_segments());
  for (const auto& b : m.rows()) rows.push_back(b.vector());
  return recall_at_1(rows, gt, timeline);
}

/// Mean over videos within each task, then unweighted mean over tasks.
inline double avg_recall_at_1(const std::vector<std::pair<std::string, double>>& per_video) {
  if (per_video.empty()) return 0.0;
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [task, r] : per_video) {
    auto& a = acc[task];
    a.first += r;
    ++a.second;
  }
  double sum = 0.0;
  for (const auto& [task, a] : acc) sum += a.first / static_cast<double>(a.second);
  return sum / static_cast<double>(acc.size());
}

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

inline double iou(Interval a, Interval b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

enum class ApInterpolation { AllPoint, Point101 };

struct GroundTruthSegment {
  std::string video_id;
  std::size_t step = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

inline std::vector<GroundTruthSegment> ground_truth_segments(const GroundTruthAnnotation& ann) {
  std::vector<GroundTruthSegment> out;
  for (const auto& iv : ann.intervals) out.push_back({ann.video_id, iv.step, iv.start_s, iv.end_s});
  return out;
}

/// Confidence descending, longer first, then a total order on content.
inline void sort_detections(std::vector<DetectedSegment>& dets) {
  std::sort(dets.begin(), dets.end(), [](const DetectedSegment& a, const DetectedSegment& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    const double la = a.end_s - a.start_s;
    const double lb = b.end_s - b.start_s;
    if (la != lb) return la > lb;
    return std::tie(a.video_id, a.step, a.start_s, a.end_s) < std::tie(b.video_id, b.step, b.start_s, b.end_s);
  });
}

inline double area_under_pr(const std::vector<double>& precision, const std::vector<double>& recall,
                            ApInterpolation interp) {
  if (precision.empty()) return 0.0;
  if (interp == ApInterpolation::Point101) {
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
      const double r = k / 100.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r - 1e-12) p = std::max(p, precision[i]);
      }
      sum += p;
    }
    return sum / 101.0;
  }
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

/// AP of one activity. Each detection is matched to the unmatched ground
/// truth of the same video and step with the highest IoU >= tau.
inline double average_precision(std::vector<DetectedSegment> dets, const std::vector<GroundTruthSegment>& gts,
                                double tau, ApInterpolation interp = ApInterpolation::AllPoint) {
  if (gts.empty() || dets.empty()) return 0.0;
  sort_detections(dets);
  std::vector<bool> used(gts.size(), false);
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const auto& d = dets[k];
    double best = -1.0;
    std::size_t best_i = gts.size();
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (used[i] || gts[i].video_id != d.video_id || gts[i].step != d.step) continue;
      const double o = iou({d.start_s, d.end_s}, {gts[i].start_s, gts[i].end_s});
      if (o >= tau && o > best) {
        best = o;
        best_i = i;
      }
    }
    if (best_i < gts.size()) {
      used[best_i] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  return area_under_pr(precision, recall, interp);
}

struct ActivityData {
  std::vector<DetectedSegment> detections;
  std::vector<GroundTruthSegment> ground_truth;
};

/// Unweighted mean of per-activity AP; activities without ground truth are skipped.
inline double map_at_iou(const std::map<std::string, ActivityData>& activities, double tau,
                         ApInterpolation interp = ApInterpolation::AllPoint) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [name, a] : activities) {
    if (a.ground_truth.empty()) continue;
    sum += average_precision(a.detections, a.ground_truth, tau, interp);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline const std::vector<double>& report_iou_thresholds() {
  static const std::vector<double> v{0.3, 0.5, 0.7};
  return v;
}

inline const std::vector<double>& averaged_iou_thresholds() {
  static const std::vector<double> v{0.3, 0.4, 0.5, 0.6, 0.7};
  return v;
}

struct VideoMetrics {
  std::string video_id;
  std::string task_id;
  double recall_at_1 = 0.0;
  double baseline_recall_at_1 = 0.0;
  std::size_t num_gt_steps = 0;
  std::size_t num_segments = 0;
  std::size_t num_detections = 0;
  std::size_t degenerate_updates = 0;
};

inline json to_json(const VideoMetrics& m) {
  return json{{"video_id", m.video_id},
              {"task_id", m.task_id},
              {"recall_at_1", m.recall_at_1},
              {"baseline_recall_at_1", m.baseline_recall_at_1},
              {"num_gt_steps", m.num_gt_steps},
              {"num_segments", m.num_segments},
              {"num_detections", m.num_detections},
              {"degenerate_updates", m.degenerate_updates}};
}

struct EvalReport {
  std::vector<VideoMetrics> videos;
  std::map<std::string, double> task_recall_at_1;
  double recall_at_1 = 0.0;
  double avg_recall_at_1 = 0.0;
  double baseline_recall_at_1 = 0.0;
  std::vector<std::pair<double, double>> map_at;
  double map_mean = 0.0;
  std::size_t num_steps_evaluated = 0;
  std::size_t num_tasks = 0;
  std::vector<std::string> failed_videos;
};

/// Single-threaded reduction of per-video results into a report.
inline EvalReport aggregate(std::vector<VideoMetrics> videos, const std::map<std::string, ActivityData>& activities,
                            ApInterpolation interp = ApInterpolation::AllPoint) {
  EvalReport r;
  std::sort(videos.begin(), videos.end(),
            [](const VideoMetrics& a, const VideoMetrics& b) { return a.video_id < b.video_id; });
  r.videos = std::move(videos);
  std::vector<std::pair<std::string, double>> pv;
  std::map<std::string, std::pair<double, std::size_t>> per_task;
  double sum = 0.0;
  double base = 0.0;
  for (const auto& v : r.videos) {
    pv.emplace_back(v.task_id, v.recall_at_1);
    auto& t = per_task[v.task_id];
    t.first += v.recall_at_1;
    ++t.second;
    sum += v.recall_at_1;
    base += v.baseline_recall_at_1;
    r.num_steps_evaluated += v.num_gt_steps;
  }
  for (const auto& [task, t] : per_task) r.task_recall_at_1[task] = t.first / static_cast<double>(t.second);
  r.num_tasks = per_task.size();
  if (!r.videos.empty()) {
    r.recall_at_1 = sum / static_cast<double>(r.videos.size());
    r.baseline_recall_at_1 = base / static_cast<double>(r.videos.size());
    r.avg_recall_at_1 = avg_recall_at_1(pv);
  }
  for (double tau : report_iou_thresholds()) r.map_at.emplace_back(tau, map_at_iou(activities, tau, interp));
  double m = 0.0;
  for (double tau : averaged_iou_thresholds()) m += map_at_iou(activities, tau, interp);
  r.map_mean = m / static_cast<double>(averaged_iou_thresholds().size());
  return r;
}

inline std::string format_iou(double tau) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", tau);
  return buf;
}

inline json to_json(const EvalReport& r) {
  json videos = json::array();
  for (const auto& v : r.videos) videos.push_back(to_json(v));
  json tasks = json::object();
  for (const auto& [t, v] : r.task_recall_at_1) tasks[t] = v;
  json maps = json::object();
  for (const auto& [tau, v] : r.map_at) maps[format_iou(tau)] = v;
  return json{{"recall_at_1", r.recall_at_1},
              {"avg_recall_at_1", r.avg_recall_at_1},
              {"baseline_recall_at_1", r.baseline_recall_at_1},
              {"task_recall_at_1", tasks},
              {"map_at_iou", maps},
              {"map_mean", r.map_mean},
              {"num_videos", r.videos.size()},
              {"num_tasks", r.num_tasks},
              {"num_steps_evaluated", r.num_steps_evaluated},
              {"failed_videos", r.failed_videos},
              {"videos", videos}};
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

inline std::string to_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "scope,id,metric,value\n";
  os << "all,,recall_at_1," << r.recall_at_1 << "\n";
  os << "all,,avg_recall_at_1," << r.avg_recall_at_1 << "\n";
  os << "all,,baseline_recall_at_1," << r.baseline_recall_at_1 << "\n";
  for (const auto& [tau, v] : r.map_at) os << "all,,map@" << format_iou(tau) << "," << v << "\n";
  os << "all,,map@avg," << r.map_mean << "\n";
  for (const auto& [t, v] : r.task_recall_at_1) os << "task," << t << ",recall_at_1," << v << "\n";
  for (const auto& v : r.videos) {
    os << "video," << v.video_id << ",recall_at_1," << v.recall_at_1 << "\n";
    os << "video," << v.video_id << ",baseline_recall_at_1," << v.baseline_recall_at_1 << "\n";
  }
  return os.str();
}

/// Fixed-width table, values x100 with one decimal.
inline std::string to_table(const EvalReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %8s %10s %10s %9s %9s %9s %9s\n", "", "R@1", "Avg R@1", "Base R@1",
                "mAP@0.3", "mAP@0.5", "mAP@0.7", "mAP@avg");
  os << line;
  auto map_or = [&](std::size_t i) { return i < r.map_at.size() ? percent(r.map_at[i].second) : std::string("-"); };
  std::snprintf(line, sizeof line, "%-10s %8s %10s %10s %9s %9s %9s %9s\n", "BaGLM", percent(r.recall_at_1).c_str(),
                percent(r.avg_recall_at_1).c_str(), percent(r.baseline_recall_at_1).c_str(), map_or(0).c_str(),
                map_or(1).c_str(), map_or(2).c_str(), percent(r.map_mean).c_str());
  os << line;
  os << "\nper task R@1\n";
  for (const auto& [t, v] : r.task_recall_at_1) {
    std::snprintf(line, sizeof line, "  %-30s %6s\n", t.c_str(), percent(v).c_str());
    os << line;
  }
  os << "\nvideos " << r.videos.size() << ", tasks " << r.num_tasks << ", steps " << r.num_steps_evaluated;
  if (!r.failed_videos.empty()) os << ", failed " << r.failed_videos.size();
  os << "\n";
  return os.str();
}

}  // namespace vsg
