#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "fake_endpoint.hpp"
#include "support.hpp"
#include "vsg/harness.hpp"

using namespace vsg;
using vsgtest::chat_reply;
using vsgtest::reply;

namespace {

const fs::path kSamples = VSG_SAMPLES;
const fs::path kManifest = kSamples / "manifest.json";

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + VSG_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig synthetic(const fs::path& out, double noise = 0.0, std::uint64_t seed = 0) {
  RunConfig c;
  c.provider = ProviderKind::Synthetic;
  c.deps_source = DependencySource::OracleChain;
  c.noise = noise;
  c.seed = seed;
  c.output_dir = out;
  c.jobs = 2;
  return c;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = vsgtest::slurp(e.path());
  }
  return out;
}

/// Answers every prompt kind the pipeline sends: labels, digits, yes/no.
void model_handler(const json& body, const httplib::Request&, httplib::Response& res) {
  const json& content = body["messages"][0]["content"];
  std::string text = content.is_string() ? content.get<std::string>() : "";
  if (content.is_array()) {
    for (const auto& part : content)
      if (part.value("type", "") == "text") text += part["text"].get<std::string>();
  }
  if (text.find("Options:") != std::string::npos) return reply(res, chat_reply({{"A", -0.2}, {"B", -2.0}, {"C", -3.0}}));
  if (text.find("Rate how far") != std::string::npos) return reply(res, chat_reply({{"5", -0.1}, {"0", -2.5}}, "5"));
  reply(res, chat_reply({{"Yes", std::log(0.7)}, {"No", std::log(0.3)}}, "Yes"));
}

}  // namespace

TEST(Harness, ManifestLoads) {
  const auto jobs = load_manifest(kManifest);
  ASSERT_EQ(jobs.size(), 3u);
  EXPECT_EQ(jobs[0].task.task_id, "latte");
  EXPECT_EQ(jobs[2].task.steps[1], "put tea leaves in the infuser");
  EXPECT_TRUE(jobs[0].replay.has_value());
}

TEST(Harness, OracleEndToEndIsPerfect) {
  const auto out = vsgtest::scratch_dir("oracle");
  const auto jobs = load_manifest(kManifest);
  const auto outcome = run_benchmark(synthetic(out), jobs);
  EXPECT_EQ(outcome.exit_code(), 0);
  EXPECT_EQ(outcome.report.recall_at_1, 1.0);
  EXPECT_EQ(outcome.report.avg_recall_at_1, 1.0);
  EXPECT_EQ(outcome.report.num_tasks, 2u);
  EXPECT_EQ(outcome.report.task_recall_at_1.size(), 2u);
  for (const auto& j : jobs) {
    for (const char* f : {"alignment.jsonl", "alignment.csv", "observations.jsonl", "detections.json", "metrics.json"}) {
      EXPECT_TRUE(fs::exists(out / j.annotation.video_id / f)) << f;
    }
  }
  for (const char* f : {"report.json", "report.csv", "report.txt"}) EXPECT_TRUE(fs::exists(out / f));
  const json report = read_json(out / "report.json");
  EXPECT_EQ(report["num_videos"], 3);
  EXPECT_TRUE(report["failures"].empty());
}

TEST(Harness, RunsAreDeterministicAndReplayIsByteIdentical) {
  const auto jobs = load_manifest(kManifest);
  const auto a = vsgtest::scratch_dir("det_a"), b = vsgtest::scratch_dir("det_b");
  run_benchmark(synthetic(a, 0.3, 11), jobs);
  run_benchmark(synthetic(b, 0.3, 11), jobs);
  EXPECT_EQ(tree(a), tree(b));

  // Feed the recorded observations back through the replay provider.
  auto replay_jobs = jobs;
  for (auto& j : replay_jobs) j.replay = a / j.annotation.video_id / "observations.jsonl";
  RunConfig rc = synthetic(vsgtest::scratch_dir("det_r1"));
  rc.provider = ProviderKind::Replay;
  RunConfig rc2 = rc;
  rc2.output_dir = vsgtest::scratch_dir("det_r2");
  run_benchmark(rc, replay_jobs);
  run_benchmark(rc2, replay_jobs);
  EXPECT_EQ(tree(rc.output_dir), tree(rc2.output_dir));
  EXPECT_EQ(tree(rc.output_dir), tree(a));
}

TEST(Harness, MissingDependencyFileFailsBeforeAnyVideo) {
  const auto out = vsgtest::scratch_dir("missing_deps");
  const auto deps = vsgtest::scratch_dir("missing_deps_dir");
  fs::copy_file(kSamples / "deps" / "latte.json", deps / "latte.json");
  RunConfig c = synthetic(out);
  c.deps_source = DependencySource::File;
  c.deps_dir = deps;
  try {
    run_benchmark(c, load_manifest(kManifest));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("tea.json"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(out / "latte_01"));
  c.deps_dir = out / "nowhere";
  EXPECT_THROW(run_benchmark(c, load_manifest(kManifest)), Error);
}

TEST(Harness, FileDependencies) {
  RunConfig c = synthetic(vsgtest::scratch_dir("file_deps"));
  c.deps_source = DependencySource::File;
  c.deps_dir = kSamples / "deps";
  const auto outcome = run_benchmark(c, load_manifest(kManifest));
  EXPECT_EQ(outcome.exit_code(), 0);
  EXPECT_EQ(outcome.report.videos.size(), 3u);
}

TEST(Harness, PartialFailureIsRecorded) {
  auto jobs = load_manifest(kManifest);
  const auto out = vsgtest::scratch_dir("partial");
  run_benchmark(synthetic(out), jobs);
  for (auto& j : jobs) j.replay = out / j.annotation.video_id / "observations.jsonl";
  jobs[1].replay = out / "does_not_exist.jsonl";
  RunConfig c = synthetic(vsgtest::scratch_dir("partial_replay"));
  c.provider = ProviderKind::Replay;
  const auto outcome = run_benchmark(c, jobs);
  EXPECT_EQ(outcome.exit_code(), 2);
  ASSERT_EQ(outcome.failures.size(), 1u);
  EXPECT_TRUE(outcome.failures.count("latte_02"));
  EXPECT_EQ(outcome.report.videos.size(), 2u);
  const json report = read_json(c.output_dir / "report.json");
  EXPECT_EQ(report["failed_videos"], json::array({"latte_02"}));
}

TEST(Harness, StepPriorVariantsRun) {
  const auto jobs = load_manifest(kManifest);
  for (auto p : {StepPrior::Uniform, StepPrior::NextStep, StepPrior::Propagated}) {
    RunConfig c = synthetic(vsgtest::scratch_dir("prior"), 0.2, 3);
    c.step_prior = p;
    EXPECT_EQ(run_benchmark(c, jobs).exit_code(), 0);
  }
}

TEST(Harness, InterruptedRemoteRunResumesFromCache) {
  vsgtest::FakeEndpoint ep;
  std::atomic<int> budget{52};
  ep.handler = [&](const json& body, const httplib::Request& req, httplib::Response& res) {
    if (budget-- <= 0) return reply(res, json{{"error", "quota"}}, 400);
    model_handler(body, req, res);
  };
  auto jobs = load_manifest(kManifest);
  jobs.resize(1);  // latte_01: 30 segments x (1 grounding + 4 progress) requests
  RunConfig c = synthetic(vsgtest::scratch_dir("resume"));
  c.provider = ProviderKind::Remote;
  c.endpoint = ep.config();
  c.endpoint.retries = 0;
  const auto first = run_benchmark(c, jobs);
  EXPECT_EQ(first.exit_code(), 2);
  EXPECT_EQ(ep.bodies.size(), 53u);
  const std::size_t cached = vsgtest::slurp(c.effective_cache_dir() / "latte_01.jsonl").size();
  EXPECT_GT(cached, 0u);

  budget = 1000000;
  const std::size_t before = ep.bodies.size();
  const auto second = run_benchmark(c, jobs);
  EXPECT_EQ(second.exit_code(), 0);
  EXPECT_EQ(ep.bodies.size() - before, 20u * 5u);  // segments 0..9 came from the cache

  // A third run is served entirely from the cache and reproduces the outputs.
  const auto snapshot = vsgtest::slurp(c.output_dir / "latte_01" / "alignment.jsonl");
  const std::size_t before_third = ep.bodies.size();
  run_benchmark(c, jobs);
  EXPECT_EQ(ep.bodies.size(), before_third);
  EXPECT_EQ(vsgtest::slurp(c.output_dir / "latte_01" / "alignment.jsonl"), snapshot);
}

TEST(Harness, RemoteDependenciesAreBuiltOnceAndSaved) {
  vsgtest::FakeEndpoint ep;
  ep.handler = model_handler;
  RunConfig c = synthetic(vsgtest::scratch_dir("remote_deps"));
  c.deps_source = DependencySource::RemoteLlm;
  c.endpoint = ep.config();
  const auto jobs = load_manifest(kManifest);
  EXPECT_EQ(run_benchmark(c, jobs).exit_code(), 0);
  EXPECT_EQ(ep.bodies.size(), 4u * 3u + 3u * 2u);
  const auto d = load_dependencies(c.output_dir / "deps" / "tea.json", 3);
  EXPECT_NEAR(d(2, 0), 0.7, 1e-12);
  EXPECT_EQ(d(1, 1), 0.0);
  run_benchmark(c, jobs);
  EXPECT_EQ(ep.bodies.size(), 18u);
}

TEST(Harness, OracleDependenciesHaveNoViolations) {
  RunConfig c = synthetic(vsgtest::scratch_dir("viol"));
  const auto sweep = run_violation_analysis(c, load_manifest(kManifest));
  ASSERT_EQ(sweep.size(), 11u);
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    if (sweep[k].threshold > 0.0) {
      EXPECT_EQ(sweep[k].violated_dependency_fraction, 0.0);
    }
    if (k > 0) {
      EXPECT_LE(sweep[k].violated_dependency_fraction, sweep[k - 1].violated_dependency_fraction);
    }
  }
  const std::string table = violation_table(sweep);
  EXPECT_NE(table.find("Violated dependencies (%)"), std::string::npos);
  EXPECT_NE(table.find("Tasks with violations (%)"), std::string::npos);
}

TEST(Harness, SampleDependenciesAgainstAnnotations) {
  // latte_02 performs "steam milk" before "pull an espresso shot" although the
  // sample matrix says espresso (0.2) precedes milk; that pair is violated up to 0.2.
  RunConfig c = synthetic(vsgtest::scratch_dir("viol_file"));
  c.deps_source = DependencySource::File;
  c.deps_dir = kSamples / "deps";
  const auto sweep = run_violation_analysis(c, load_manifest(kManifest), {0.1, 0.2, 0.5});
  EXPECT_GT(sweep[0].violated_dependency_fraction, 0.0);
  EXPECT_GT(sweep[1].violated_dependency_fraction, 0.0);
  EXPECT_EQ(sweep[2].tasks_with_violation_fraction, 0.0);
}

TEST(Cli, BenchAndReplay) {
  const auto out = vsgtest::scratch_dir("cli_bench");
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --noise 0.2 --seed 4 --out \"" +
                        (out / "a").string() + "\"",
                    out / "log_a.txt"),
            0);
  EXPECT_NE(vsgtest::slurp(out / "log_a.txt").find("BaGLM"), std::string::npos);
  const fs::path task = kSamples / "tasks" / "latte.json";
  const fs::path ann = kSamples / "annotations" / "latte_01.json";
  const fs::path obs = out / "a" / "latte_01" / "observations.jsonl";
  for (const char* run : {"r1", "r2"}) {
    EXPECT_EQ(run_cli("replay --task \"" + task.string() + "\" --annotation \"" + ann.string() + "\" --replay \"" +
                          obs.string() + "\" --out \"" + (out / run).string() + "\"",
                      out / "log_replay.txt"),
              0);
  }
  EXPECT_EQ(tree(out / "r1"), tree(out / "r2"));
  EXPECT_EQ(vsgtest::slurp(out / "r1" / "latte_01" / "alignment.jsonl"),
            vsgtest::slurp(out / "a" / "latte_01" / "alignment.jsonl"));
}

TEST(Cli, DurationSweep) {
  const auto out = vsgtest::scratch_dir("cli_sweep");
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --sweep-durations 1,2,3,4 --no-localize --out \"" +
                        out.string() + "\"",
                    out / "log.txt"),
            0);
  const std::string csv = vsgtest::slurp(out / "sweep.csv");
  for (const char* d : {"duration_1,", "duration_2,", "duration_3,", "duration_4,"}) {
    EXPECT_NE(csv.find(d), std::string::npos) << d;
  }
  EXPECT_TRUE(fs::exists(out / "duration_3" / "report.json"));
}

TEST(Cli, StepPriorSweep) {
  const auto out = vsgtest::scratch_dir("cli_prior");
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --sweep-step-prior --noise 0.2 --out \"" +
                        out.string() + "\"",
                    out / "log.txt"),
            0);
  const std::string csv = vsgtest::slurp(out / "sweep.csv");
  for (const char* p : {"prior_uniform,", "prior_next-step,", "prior_propagated,"}) {
    EXPECT_NE(csv.find(p), std::string::npos) << p;
  }
}

TEST(Cli, DepsAndViolations) {
  const auto out = vsgtest::scratch_dir("cli_deps");
  const fs::path task = kSamples / "tasks" / "tea.json";
  EXPECT_EQ(run_cli("deps build --deps-source oracle-chain --task \"" + task.string() + "\" --annotation \"" +
                        (kSamples / "annotations" / "tea_01.json").string() + "\" --output \"" +
                        (out / "tea.json").string() + "\"",
                    out / "log.txt"),
            0);
  const auto d = load_dependencies(out / "tea.json", 3);
  EXPECT_EQ(d(1, 0), 1.0);
  EXPECT_EQ(d(2, 1), 1.0);
  EXPECT_EQ(d(2, 0), 0.0);
  EXPECT_EQ(d(0, 2), 0.0);
  EXPECT_EQ(run_cli("deps check --task \"" + task.string() + "\" --deps \"" + (out / "tea.json").string() + "\"",
                    out / "log.txt"),
            0);
  EXPECT_EQ(run_cli("deps check --task \"" + task.string() + "\" --deps \"" +
                        (kSamples / "deps" / "latte.json").string() + "\"",
                    out / "log.txt"),
            1);
  EXPECT_EQ(run_cli("violations --manifest \"" + kManifest.string() + "\" --out \"" + out.string() + "\"",
                    out / "log.txt"),
            0);
  EXPECT_TRUE(fs::exists(out / "violations.json"));
  EXPECT_NE(vsgtest::slurp(out / "log.txt").find("Violated dependencies (%)"), std::string::npos);
}

TEST(Cli, ConfigurationErrorsExitWithOne) {
  const auto out = vsgtest::scratch_dir("cli_err");
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --bogus-flag", out / "log.txt"), 1);
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --deps-source file --deps-dir \"" +
                        (out / "missing").string() + "\" --out \"" + out.string() + "\"",
                    out / "log.txt"),
            1);
  EXPECT_EQ(run_cli("bench --manifest \"" + kManifest.string() + "\" --provider remote --endpoint https://x --out \"" +
                        out.string() + "\"",
                    out / "log.txt"),
            1);
  EXPECT_EQ(run_cli("", out / "log.txt"), 1);
}
