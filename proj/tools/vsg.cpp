#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsg/harness.hpp"

namespace {

using namespace vsg;

template <class E>
std::map<std::string, E> choices(std::initializer_list<std::pair<const std::string, E>> items) {
  return std::map<std::string, E>(items);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

struct Cli {
  RunConfig cfg;
  bool no_readiness = false;
  bool no_validity = false;
  bool no_localize = false;
  std::string endpoint_dialect = "chat";

  void add_run_flags(CLI::App& app) {
    app.add_option("--provider", cfg.provider, "Observation source")
        ->transform(CLI::CheckedTransformer(choices<ProviderKind>({{"remote", ProviderKind::Remote},
                                                                   {"replay", ProviderKind::Replay},
                                                                   {"synthetic", ProviderKind::Synthetic}})));
    add_deps_flags(app);
    app.add_option("--segment-duration", cfg.segment_duration_s, "Segment length in seconds")
        ->check(CLI::PositiveNumber);
    app.add_option("--segment-rounding", cfg.rounding, "Partial trailing segment handling")
        ->transform(CLI::CheckedTransformer(
            choices<SegmentRounding>({{"ceil", SegmentRounding::Ceil}, {"floor", SegmentRounding::Floor}})));
    app.add_option("--step-prior", cfg.step_prior, "Step prior divided out of observations")
        ->transform(CLI::CheckedTransformer(choices<StepPrior>({{"uniform", StepPrior::Uniform},
                                                                {"next-step", StepPrior::NextStep},
                                                                {"propagated", StepPrior::Propagated}})));
    app.add_option("--vsg-prompt", cfg.vsg_prompt, "Grounding prompt variant")
        ->transform(CLI::CheckedTransformer(choices<VsgPromptKind>(
            {{"multi-choice", VsgPromptKind::MultiChoice}, {"binary", VsgPromptKind::Binary}})));
    app.add_option("--epsilon", cfg.transition.epsilon, "Additive smoothing of adjusted transitions");
    app.add_option("--epsilon-none", cfg.transition.epsilon_none, "Escape mass into 'none' (negative: 1/(S+1))");
    app.add_option("--none-mode", cfg.transition.none_mode, "How the 'none' state enters the transition")
        ->transform(CLI::CheckedTransformer(
            choices<NoneMode>({{"augmented", NoneMode::Augmented}, {"plain", NoneMode::Plain}})));
    app.add_flag("--no-readiness", no_readiness, "Disable the readiness factor");
    app.add_flag("--no-validity", no_validity, "Disable the validity factor");
    app.add_option("--fixup", cfg.transition.fixup, "Base transition fix-up for steps without prerequisites")
        ->transform(
            CLI::CheckedTransformer(choices<FixupRule>({{"column", FixupRule::Column}, {"row", FixupRule::Row}})));
    app.add_flag("--no-localize", no_localize, "Skip segment detection and mAP");
    app.add_option("--scale-spacing", cfg.scale_spacing, "Blob detection scale spacing")
        ->transform(CLI::CheckedTransformer(
            choices<ScaleSpacing>({{"log", ScaleSpacing::Logarithmic}, {"linear", ScaleSpacing::Linear}})));
    app.add_option("--ap-interp", cfg.ap_interp, "Average precision interpolation")
        ->transform(CLI::CheckedTransformer(
            choices<ApInterpolation>({{"all-point", ApInterpolation::AllPoint}, {"101-point", ApInterpolation::Point101}})));
    app.add_option("--seed", cfg.seed, "Synthetic provider seed");
    app.add_option("--noise", cfg.noise, "Synthetic provider noise level")->check(CLI::Range(0.0, 1.0));
    app.add_option("--jobs", cfg.jobs, "Concurrent videos (0 = hardware threads)");
    app.add_option("--out", cfg.output_dir, "Output directory");
    app.add_option("--cache-dir", cfg.cache_dir, "Remote observation cache directory");
    add_endpoint_flags(app);
  }

  void add_deps_flags(CLI::App& app) {
    app.add_option("--deps-source", cfg.deps_source, "Dependency matrix source")
        ->transform(CLI::CheckedTransformer(choices<DependencySource>({{"remote-llm", DependencySource::RemoteLlm},
                                                                       {"oracle-chain", DependencySource::OracleChain},
                                                                       {"file", DependencySource::File}})));
    app.add_option("--deps-dir", cfg.deps_dir, "Directory of <task_id>.json dependency files");
  }

  void add_endpoint_flags(CLI::App& app) {
    app.add_option("--endpoint", cfg.endpoint.base_url, "Model server base URL (http://host:port[/prefix])");
    app.add_option("--model", cfg.endpoint.model, "Model name sent with each request");
    app.add_option("--dialect", endpoint_dialect, "Endpoint dialect")->check(CLI::IsMember({"chat", "completions"}));
    app.add_option("--auth-env", cfg.endpoint.auth_env, "Environment variable holding the bearer token");
    app.add_option("--max-concurrency", cfg.endpoint.max_concurrency, "Concurrent requests")
        ->check(CLI::Range(1, 1024));
    app.add_option("--timeout", cfg.endpoint.timeout_s, "Request timeout in seconds");
    app.add_option("--retries", cfg.endpoint.retries, "Retries on transient failures");
    app.add_option("--frames", cfg.endpoint.frames_per_segment, "Frames sampled per segment");
    app.add_option("--top-logprobs", cfg.endpoint.top_logprobs, "Alternatives requested per token");
  }

  void finish() {
    cfg.transition.use_readiness = !no_readiness;
    cfg.transition.use_validity = !no_validity;
    cfg.localize = !no_localize;
    cfg.endpoint.dialect = endpoint_dialect == "chat" ? Dialect::Chat : Dialect::Completions;
  }
};

std::vector<VideoJob> single_job(const std::string& task_path, const std::string& ann_path, const std::string& replay,
                                 const std::string& media) {
  VideoJob job;
  job.task = load_task(task_path);
  job.annotation = load_annotation(ann_path, job.task.num_steps());
  if (job.annotation.task_id.empty()) job.annotation.task_id = job.task.task_id;
  if (!replay.empty()) job.replay = replay;
  job.media = media;
  return {job};
}

int report_outcome(const BenchmarkOutcome& outcome) {
  std::cout << to_table(outcome.report);
  for (const auto& [id, msg] : outcome.failures) std::cerr << "failed: " << id << ": " << msg << "\n";
  return outcome.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online video step grounding with a Bayesian filter over model-scored observations"};
  app.require_subcommand(1);
  Cli cli;

  // deps
  auto* deps = app.add_subcommand("deps", "Build or check dependency matrices");
  deps->require_subcommand(1);
  std::string deps_task, deps_ann, deps_file;
  auto* deps_build = deps->add_subcommand("build", "Build a dependency matrix for one task");
  deps_build->add_option("--task", deps_task, "Task file")->required()->check(CLI::ExistingFile);
  deps_build->add_option("--annotation", deps_ann, "Annotation for the oracle-chain source")->check(CLI::ExistingFile);
  deps_build->add_option("--output", deps_file, "Destination file")->required();
  cli.add_deps_flags(*deps_build);
  cli.add_endpoint_flags(*deps_build);
  auto* deps_check = deps->add_subcommand("check", "Validate a dependency file against a task");
  deps_check->add_option("--task", deps_task, "Task file")->required()->check(CLI::ExistingFile);
  deps_check->add_option("--deps", deps_file, "Dependency file")->required();

  // run / replay
  std::string run_task, run_ann, run_replay, run_media;
  auto* run = app.add_subcommand("run", "Process one video");
  run->add_option("--task", run_task, "Task file")->required()->check(CLI::ExistingFile);
  run->add_option("--annotation", run_ann, "Ground-truth annotation")->required()->check(CLI::ExistingFile);
  run->add_option("--replay", run_replay, "Replay file for --provider replay");
  run->add_option("--media", run_media, "Media reference for --provider remote");
  cli.add_run_flags(*run);
  auto* replay = app.add_subcommand("replay", "Re-run one video from recorded observations");
  replay->add_option("--task", run_task, "Task file")->required()->check(CLI::ExistingFile);
  replay->add_option("--annotation", run_ann, "Ground-truth annotation")->required()->check(CLI::ExistingFile);
  replay->add_option("--replay", run_replay, "Observation log (JSON Lines)")->required()->check(CLI::ExistingFile);
  cli.add_run_flags(*replay);

  // bench
  std::string manifest, sweep_durations;
  bool sweep_prior = false;
  auto* bench = app.add_subcommand("bench", "Run a manifest of videos and aggregate metrics");
  bench->add_option("--manifest", manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  bench->add_option("--sweep-durations", sweep_durations, "Comma-separated segment durations, one run each");
  bench->add_flag("--sweep-step-prior", sweep_prior, "One run per step-prior variant");
  cli.add_run_flags(*bench);

  // violations
  std::string thresholds;
  auto* viol = app.add_subcommand("violations", "Dependency violations against annotations across thresholds");
  viol->add_option("--manifest", manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  viol->add_option("--thresholds", thresholds, "Comma-separated thresholds (default 0.0,0.1,...,1.0)");
  viol->add_option("--out", cli.cfg.output_dir, "Output directory");
  cli.add_deps_flags(*viol);
  cli.add_endpoint_flags(*viol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  cli.finish();
  RunConfig& cfg = cli.cfg;

  try {
    if (deps_build->parsed()) {
      const TaskSpec task = load_task(deps_task);
      DependencyMatrix d;
      if (cfg.deps_source == DependencySource::OracleChain) {
        if (deps_ann.empty()) throw Error(ErrorCode::ConfigError, "--annotation is required for oracle-chain");
        d = build_dependency_chain_oracle(load_annotation(deps_ann, task.num_steps()), task.num_steps());
      } else if (cfg.deps_source == DependencySource::RemoteLlm) {
        RemotePrerequisiteProvider provider(std::make_shared<RemoteClient>(cfg.endpoint));
        d = build_dependency_remote(task, provider, cfg.endpoint.max_concurrency);
        if (provider.degraded_queries() > 0) {
          std::cerr << provider.degraded_queries() << " pairs scored by sampling (no logprobs)\n";
        }
      } else {
        throw Error(ErrorCode::ConfigError, "deps build needs --deps-source remote-llm or oracle-chain");
      }
      save_dependencies(deps_file, task.task_id, d);
      std::cout << "wrote " << deps_file << " (" << d.size() << "x" << d.size() << ")\n";
      return 0;
    }
    if (deps_check->parsed()) {
      const TaskSpec task = load_task(deps_task);
      const DependencyMatrix d = load_dependencies(deps_file, task.num_steps());
      std::size_t nonzero = 0;
      for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j) nonzero += d(i, j) > 0.0;
      std::cout << "ok: " << task.task_id << " " << d.size() << " steps, " << nonzero << " nonzero entries\n";
      return 0;
    }
    if (run->parsed() || replay->parsed()) {
      if (replay->parsed()) cfg.provider = ProviderKind::Replay;
      return report_outcome(run_benchmark(cfg, single_job(run_task, run_ann, run_replay, run_media)));
    }
    if (bench->parsed()) {
      const auto jobs = load_manifest(manifest);
      if (!sweep_durations.empty() || sweep_prior) {
        const fs::path root = cfg.output_dir;
        std::vector<std::pair<std::string, RunConfig>> runs;
        for (double d : parse_list(sweep_durations)) {
          RunConfig c = cfg;
          c.segment_duration_s = d;
          std::ostringstream name;
          name << "duration_" << d;
          runs.emplace_back(name.str(), c);
        }
        if (sweep_prior) {
          for (const auto& [name, p] : std::vector<std::pair<std::string, StepPrior>>{
                   {"uniform", StepPrior::Uniform}, {"next-step", StepPrior::NextStep},
                   {"propagated", StepPrior::Propagated}}) {
            RunConfig c = cfg;
            c.step_prior = p;
            runs.emplace_back("prior_" + name, c);
          }
        }
        std::string csv = "run,recall_at_1,avg_recall_at_1,baseline_recall_at_1,map_mean,failed\n";
        int code = 0;
        for (auto& [name, c] : runs) {
          c.output_dir = root / name;
          const auto outcome = run_benchmark(c, jobs);
          const auto& r = outcome.report;
          std::cout << "== " << name << "\n" << to_table(r);
          std::ostringstream row;
          row.precision(17);
          row << name << "," << r.recall_at_1 << "," << r.avg_recall_at_1 << "," << r.baseline_recall_at_1 << ","
              << r.map_mean << "," << outcome.failures.size() << "\n";
          csv += row.str();
          code = std::max(code, outcome.exit_code());
        }
        write_text_atomic(root / "sweep.csv", csv);
        return code;
      }
      return report_outcome(run_benchmark(cfg, jobs));
    }
    if (viol->parsed()) {
      const auto jobs = load_manifest(manifest);
      const auto th = thresholds.empty() ? default_violation_thresholds() : parse_list(thresholds);
      const auto sweep = run_violation_analysis(cfg, jobs, th);
      write_json(cfg.output_dir / "violations.json", to_json(sweep));
      write_text_atomic(cfg.output_dir / "violations.txt", violation_table(sweep));
      std::cout << violation_table(sweep);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
