#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "vsg/core.hpp"
#include "vsg/dependency.hpp"
#include "vsg/filter.hpp"
#include "vsg/io.hpp"
#include "vsg/localization.hpp"
#include "vsg/metrics.hpp"
#include "vsg/observation.hpp"
#include "vsg/remote.hpp"

namespace vsg {

enum class ProviderKind { Remote, Replay, Synthetic };
enum class DependencySource { RemoteLlm, OracleChain, File };

struct RunConfig {
  /// Base for relative paths in a manifest; defaults to the manifest's directory.
  fs::path dataset_root;
  ProviderKind provider = ProviderKind::Synthetic;
  DependencySource deps_source = DependencySource::OracleChain;
  /// File source: <deps_dir>/<task_id>.json. Remote source: cache location.
  fs::path deps_dir;
  double segment_duration_s = 2.0;
  SegmentRounding rounding = SegmentRounding::Ceil;
  StepPrior step_prior = StepPrior::Uniform;
  VsgPromptKind vsg_prompt = VsgPromptKind::MultiChoice;
  TransitionOptions transition;
  bool localize = true;
  ScaleSpacing scale_spacing = ScaleSpacing::Logarithmic;
  BlobOptions blobs;
  ApInterpolation ap_interp = ApInterpolation::AllPoint;
  fs::path output_dir = "out";
  /// Remote observation caches; defaults to <output_dir>/cache.
  fs::path cache_dir;
  std::uint64_t seed = 0;
  double noise = 0.0;
  /// 0 picks the number of hardware threads.
  std::size_t jobs = 0;
  RemoteEndpointConfig endpoint;

  void validate() const {
    if (!(segment_duration_s > 0.0)) throw Error(ErrorCode::ConfigError, "segment duration must be > 0");
    if (!(noise >= 0.0 && noise <= 1.0)) throw Error(ErrorCode::ConfigError, "noise must be in [0,1]");
    if (!(transition.epsilon >= 0.0)) throw Error(ErrorCode::ConfigError, "epsilon must be >= 0");
    if (transition.epsilon_none >= 1.0) throw Error(ErrorCode::ConfigError, "epsilon-none must be < 1");
    if (deps_source == DependencySource::File && !fs::is_directory(deps_dir)) {
      throw Error(ErrorCode::ConfigError, "dependency directory not found: " + deps_dir.string());
    }
    if (provider == ProviderKind::Remote || deps_source == DependencySource::RemoteLlm) endpoint.validate();
  }

  std::size_t worker_count(std::size_t videos) const {
    std::size_t n = jobs != 0 ? jobs : std::max(1u, std::thread::hardware_concurrency());
    if (provider == ProviderKind::Remote) n = std::min(n, endpoint.max_concurrency);
    return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(videos, 1));
  }

  fs::path effective_cache_dir() const { return cache_dir.empty() ? output_dir / "cache" : cache_dir; }
};

/// One manifest entry with its files already loaded.
struct VideoJob {
  TaskSpec task;
  GroundTruthAnnotation annotation;
  std::optional<fs::path> replay;
  std::string media;
};

/// {"videos": [{"task": path, "annotation": path, "replay"?: path, "media"?: string}]}
inline std::vector<VideoJob> load_manifest(const fs::path& manifest, const fs::path& root_override = {}) {
  const json raw = read_json(manifest);
  const fs::path root = root_override.empty() ? manifest.parent_path() : root_override;
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : root / path;
  };
  std::vector<VideoJob> jobs;
  std::map<fs::path, TaskSpec> tasks;
  try {
    for (const json& entry : raw.at("videos")) {
      VideoJob job;
      const fs::path task_path = resolve(entry.at("task").get<std::string>());
      auto it = tasks.find(task_path);
      if (it == tasks.end()) it = tasks.emplace(task_path, load_task(task_path)).first;
      job.task = it->second;
      job.annotation = load_annotation(resolve(entry.at("annotation").get<std::string>()), job.task.num_steps());
      if (job.annotation.task_id.empty()) job.annotation.task_id = job.task.task_id;
      if (entry.contains("replay")) job.replay = resolve(entry.at("replay").get<std::string>());
      if (entry.contains("media")) job.media = entry.at("media").get<std::string>();
      jobs.push_back(std::move(job));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, manifest.string() + ": " + e.what());
  }
  std::set<std::string> ids;
  for (const auto& j : jobs) {
    if (!ids.insert(j.annotation.video_id).second) {
      throw Error(ErrorCode::MalformedRecord, "duplicate video id in manifest: " + j.annotation.video_id);
    }
  }
  return jobs;
}

struct VideoResult {
  SegmentTimeline timeline;
  AlignmentMatrix alignment;
  std::vector<SegmentRecord> observations;
  std::vector<DetectedSegment> detections;
  VideoMetrics metrics;
};

inline std::shared_ptr<ObservationProvider> make_provider(const RunConfig& config, const VideoJob& job,
                                                          const SegmentTimeline& timeline,
                                                          const std::shared_ptr<RemoteClient>& client) {
  const std::size_t S = job.task.num_steps();
  switch (config.provider) {
    case ProviderKind::Synthetic:
      return std::make_shared<SyntheticOracleProvider>(job.annotation, timeline, S, config.noise, config.seed);
    case ProviderKind::Replay:
      if (!job.replay) throw Error(ErrorCode::ConfigError, "video " + job.annotation.video_id + " has no replay file");
      return std::make_shared<ReplayProvider>(*job.replay, S);
    case ProviderKind::Remote: {
      if (!client) throw Error(ErrorCode::ConfigError, "remote provider needs an endpoint client");
      if (job.media.empty()) throw Error(ErrorCode::ConfigError, "video " + job.annotation.video_id + " has no media");
      auto remote = std::make_shared<RemoteObservationProvider>(job.task, job.media, config.segment_duration_s,
                                                                client, config.vsg_prompt);
      return std::make_shared<CachingProvider>(remote,
                                               config.effective_cache_dir() / (job.annotation.video_id + ".jsonl"));
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown provider kind");
}

inline SegmentTimeline timeline_for(const RunConfig& config, const GroundTruthAnnotation& ann) {
  return timeline_from_duration(ann.length_s, config.segment_duration_s, config.rounding, ann.video_id);
}

/// Streams every segment of one video through the filter.
inline VideoResult run_video(const RunConfig& config, const VideoJob& job, const DependencyMatrix& deps,
                             ObservationProvider& provider) {
  VideoResult out;
  out.timeline = timeline_for(config, job.annotation);
  FilterOptions fopt;
  fopt.transition = config.transition;
  fopt.step_prior = config.step_prior;
  BayesFilter filter(job.task, deps, fopt);
  const bool with_next = config.step_prior == StepPrior::NextStep;
  std::vector<std::vector<double>> raw;
  for (std::size_t t = 0; t < out.timeline.num_segments; ++t) {
    SegmentRecord rec = provider.segment(t, with_next);
    if (rec.vsg.size() != job.task.num_states() || rec.progress.size() != job.task.num_steps()) {
      throw Error(ErrorCode::DimensionMismatch, "segment " + std::to_string(t) + " does not match task width");
    }
    const auto progress = rec.progress_values();
    filter.step(rec.vsg, progress, rec.next_step ? &*rec.next_step : nullptr);
    raw.push_back(rec.vsg.vector());
    out.observations.push_back(std::move(rec));
  }
  out.alignment = filter.alignment();

  auto& m = out.metrics;
  m.video_id = job.annotation.video_id;
  m.task_id = job.task.task_id;
  m.num_segments = out.timeline.num_segments;
  m.num_gt_steps = job.annotation.steps_present().size();
  m.recall_at_1 = recall_at_1(out.alignment, job.annotation, out.timeline);
  m.baseline_recall_at_1 = recall_at_1(raw, job.annotation, out.timeline);
  m.degenerate_updates = filter.degenerate_updates();
  if (config.localize) {
    out.detections = localize(out.alignment, config.segment_duration_s, ScaleSet(config.scale_spacing), config.blobs,
                              job.annotation.video_id);
  }
  m.num_detections = out.detections.size();
  return out;
}

inline void write_video_outputs(const fs::path& dir, const VideoResult& r) {
  fs::create_directories(dir);
  write_text_atomic(dir / "alignment.jsonl", alignment_jsonl(r.alignment));
  write_text_atomic(dir / "alignment.csv", alignment_csv(r.alignment));
  std::string obs;
  for (const auto& rec : r.observations) obs += to_json(rec).dump() + "\n";
  write_text_atomic(dir / "observations.jsonl", obs);
  write_json(dir / "detections.json", detections_json(r.detections));
  write_json(dir / "metrics.json", to_json(r.metrics));
}

// ---------------------------------------------------------------------------
// Dependency matrices.

inline fs::path dependency_path(const RunConfig& config, const std::string& task_id) {
  const fs::path dir = config.deps_dir.empty() ? config.output_dir / "deps" : config.deps_dir;
  return dir / (task_id + ".json");
}

inline std::shared_ptr<RemoteClient> make_client(const RunConfig& config) {
  if (config.provider != ProviderKind::Remote && config.deps_source != DependencySource::RemoteLlm) return nullptr;
  return std::make_shared<RemoteClient>(config.endpoint);
}

/// Loads or builds one matrix per task for task-level sources. Missing files
/// for the file source are reported before any video runs.
inline std::map<std::string, DependencyMatrix> prepare_dependencies(const RunConfig& config,
                                                                    const std::vector<VideoJob>& jobs,
                                                                    const std::shared_ptr<RemoteClient>& client) {
  std::map<std::string, DependencyMatrix> out;
  if (config.deps_source == DependencySource::OracleChain) return out;
  std::map<std::string, const TaskSpec*> tasks;
  for (const auto& j : jobs) tasks.emplace(j.task.task_id, &j.task);
  for (const auto& [id, task] : tasks) {
    const fs::path path = dependency_path(config, id);
    if (config.deps_source == DependencySource::File) {
      if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "dependency file not found: " + path.string());
      out.emplace(id, load_dependencies(path, task->num_steps()));
      continue;
    }
    if (fs::exists(path)) {
      out.emplace(id, load_dependencies(path, task->num_steps()));
      continue;
    }
    RemotePrerequisiteProvider provider(client);
    DependencyMatrix d = build_dependency_remote(*task, provider, config.endpoint.max_concurrency);
    save_dependencies(path, id, d);
    out.emplace(id, std::move(d));
  }
  return out;
}

inline DependencyMatrix dependencies_for(const RunConfig& config, const VideoJob& job,
                                         const std::map<std::string, DependencyMatrix>& per_task) {
  if (config.deps_source == DependencySource::OracleChain) {
    return build_dependency_chain_oracle(job.annotation, job.task.num_steps());
  }
  return per_task.at(job.task.task_id);
}

// ---------------------------------------------------------------------------
// Batch runs.

struct BenchmarkOutcome {
  EvalReport report;
  /// video id -> error message
  std::map<std::string, std::string> failures;

  int exit_code() const { return failures.empty() ? 0 : 2; }
};

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  if (workers <= 1 || n <= 1) {
    loop();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(loop);
}

inline BenchmarkOutcome run_benchmark(const RunConfig& config, const std::vector<VideoJob>& jobs) {
  config.validate();
  const auto client = make_client(config);
  const auto per_task = prepare_dependencies(config, jobs, client);

  std::vector<std::optional<VideoResult>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), config.worker_count(jobs.size()), [&](std::size_t i) {
    const VideoJob& job = jobs[i];
    try {
      const SegmentTimeline timeline = timeline_for(config, job.annotation);
      auto provider = make_provider(config, job, timeline, client);
      VideoResult r = run_video(config, job, dependencies_for(config, job, per_task), *provider);
      write_video_outputs(config.output_dir / job.annotation.video_id, r);
      results[i] = std::move(r);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  BenchmarkOutcome outcome;
  std::vector<VideoMetrics> metrics;
  std::map<std::string, ActivityData> activities;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) {
      outcome.failures[jobs[i].annotation.video_id] = errors[i];
      continue;
    }
    metrics.push_back(results[i]->metrics);
    auto& act = activities[jobs[i].task.task_id];
    for (const auto& d : results[i]->detections) act.detections.push_back(d);
    for (auto& g : ground_truth_segments(jobs[i].annotation)) act.ground_truth.push_back(std::move(g));
  }
  outcome.report = aggregate(std::move(metrics), activities, config.ap_interp);
  for (const auto& [id, msg] : outcome.failures) outcome.report.failed_videos.push_back(id);

  json report = to_json(outcome.report);
  json failures = json::object();
  for (const auto& [id, msg] : outcome.failures) failures[id] = msg;
  report["failures"] = failures;
  write_json(config.output_dir / "report.json", report);
  write_text_atomic(config.output_dir / "report.csv", to_csv(outcome.report));
  write_text_atomic(config.output_dir / "report.txt", to_table(outcome.report));
  return outcome;
}

// ---------------------------------------------------------------------------
// Dependency violation analysis.

/// Task-level sources pool all videos of a task against one matrix. The
/// oracle-chain source yields one matrix per video, so each video is its own unit.
inline std::vector<SoftTaskDependencies> violation_inputs(const RunConfig& config, const std::vector<VideoJob>& jobs) {
  std::vector<SoftTaskDependencies> out;
  if (config.deps_source == DependencySource::OracleChain) {
    for (const auto& j : jobs) {
      out.push_back({j.task.task_id + "/" + j.annotation.video_id,
                     build_dependency_chain_oracle(j.annotation, j.task.num_steps()),
                     {j.annotation}});
    }
    return out;
  }
  const auto per_task = prepare_dependencies(config, jobs, make_client(config));
  std::map<std::string, std::size_t> index;
  for (const auto& j : jobs) {
    auto it = index.find(j.task.task_id);
    if (it == index.end()) {
      it = index.emplace(j.task.task_id, out.size()).first;
      out.push_back({j.task.task_id, per_task.at(j.task.task_id), {}});
    }
    out[it->second].annotations.push_back(j.annotation);
  }
  return out;
}

inline std::vector<ViolationStats> run_violation_analysis(const RunConfig& config, const std::vector<VideoJob>& jobs,
                                                          const std::vector<double>& thresholds =
                                                              default_violation_thresholds()) {
  config.validate();
  return violation_sweep(violation_inputs(config, jobs), thresholds);
}

inline json to_json(const std::vector<ViolationStats>& sweep) {
  json rows = json::array();
  for (const auto& s : sweep) {
    json tasks = json::array();
    for (const auto& t : s.per_task) {
      json pairs = json::array();
      for (const auto& [i, j] : t.violated_pairs) pairs.push_back({i, j});
      tasks.push_back({{"task_id", t.task_id}, {"declared", t.declared}, {"violated", t.violated}, {"pairs", pairs}});
    }
    rows.push_back({{"threshold", s.threshold},
                    {"violated_dependency_fraction", s.violated_dependency_fraction},
                    {"tasks_with_violation_fraction", s.tasks_with_violation_fraction},
                    {"per_task", tasks}});
  }
  return rows;
}

/// Two rows across the threshold columns, percentages with one decimal.
inline std::string violation_table(const std::vector<ViolationStats>& sweep) {
  std::string head = "threshold                  ";
  std::string a = "Violated dependencies (%) ";
  std::string b = "Tasks with violations (%) ";
  char buf[32];
  for (const auto& s : sweep) {
    std::snprintf(buf, sizeof buf, " %6.1f", s.threshold);
    head += buf;
    std::snprintf(buf, sizeof buf, " %6.1f", 100.0 * s.violated_dependency_fraction);
    a += buf;
    std::snprintf(buf, sizeof buf, " %6.1f", 100.0 * s.tasks_with_violation_fraction);
    b += buf;
  }
  return head + "\n" + a + "\n" + b + "\n";
}

}  // namespace vsg
