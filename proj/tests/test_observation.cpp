#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"
#include "vsg/observation.hpp"

using namespace vsg;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vsg::Error thrown";
  return ErrorCode::IoError;
}

/// Deterministic provider that counts how often it is asked.
class CountingProvider : public ObservationProvider {
 public:
  explicit CountingProvider(std::size_t steps) : steps_(steps) {}
  std::size_t num_steps() const override { return steps_; }
  ObservationScores vsg_scores(std::size_t t) override {
    ++calls;
    std::vector<double> v(steps_ + 1, 1.0);
    v[t % (steps_ + 1)] = 3.0;
    return ObservationScores::normalized(v);
  }
  ProgressDistribution progress(std::size_t t, std::size_t step) override {
    return ProgressDistribution::one_hot(kProgressLevels, (t + step) % kProgressLevels);
  }
  std::size_t calls = 0;

 private:
  std::size_t steps_;
};

GroundTruthAnnotation one_interval() {
  GroundTruthAnnotation a;
  a.video_id = "v";
  a.task_id = "t";
  a.length_s = 20.0;
  a.intervals = {{1, 4.0, 12.0}};
  return a;
}

void write_lines(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

}  // namespace

TEST(ExpectedProgress, Fixtures) {
  EXPECT_EQ(expected_progress(ProgressDistribution::one_hot(10, 9)), 1.0);
  EXPECT_EQ(expected_progress(ProgressDistribution::one_hot(10, 0)), 0.0);
  EXPECT_NEAR(expected_progress(ProgressDistribution::uniform(10)), 0.5, 1e-15);
}

TEST(ExpectedProgress, FractionRoundTrip) {
  for (int k = 0; k <= 100; ++k) {
    const double f = k / 100.0;
    EXPECT_NEAR(expected_progress(progress_from_fraction(f)), f, 1e-12);
  }
  EXPECT_EQ(code_of([] { progress_from_fraction(1.5); }), ErrorCode::OutOfRangeProgress);
}

TEST(RestrictedSoftmax, Fixtures) {
  const auto p = restricted_softmax(std::vector<double>{2.0, 1.0, 0.0});
  // e^2, e^1, e^0 over their sum, computed by hand to three places.
  EXPECT_NEAR(p[0], 0.665, 5e-4);
  EXPECT_NEAR(p[1], 0.245, 5e-4);
  EXPECT_NEAR(p[2], 0.090, 5e-4);
  const auto u = restricted_softmax(std::vector<double>{0.3, 0.3, 0.3, 0.3});
  for (double x : u) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(RestrictedSoftmax, OverflowSafeAndSimplex) {
  const auto p = restricted_softmax(std::vector<double>{1e308, 1e308 - 1e292, -1e308});
  EXPECT_TRUE(is_simplex(p));
  const auto q = restricted_softmax(std::vector<double>{-1000.0, -1001.0});
  EXPECT_TRUE(is_simplex(q));
  EXPECT_GT(q[0], q[1]);
  const double inf = std::numeric_limits<double>::infinity();
  const auto r = restricted_softmax(std::vector<double>{-inf, 0.0});
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 1.0);
  EXPECT_EQ(code_of([&] { restricted_softmax(std::vector<double>{-inf, -inf}); }), ErrorCode::LogitsUnavailable);
}

TEST(SegmentRecords, JsonRoundTripIsBitExact) {
  CountingProvider p(3);
  for (std::size_t t = 0; t < 5; ++t) {
    SegmentRecord r = p.segment(t);
    r.vsg = ObservationScores(std::vector<double>{0.1, 0.2, 0.3 + 1e-17, 0.4 - 1e-17});
    const auto back = segment_record_from_json(json::parse(to_json(r).dump()), 3);
    EXPECT_EQ(back, r);
  }
}

TEST(Replay, MissingSegment) {
  const auto dir = vsgtest::scratch_dir("replay_missing");
  CountingProvider p(2);
  std::string body;
  for (std::size_t t = 0; t < 3; ++t) body += to_json(p.segment(t)).dump() + "\n";
  write_lines(dir / "r.jsonl", body);
  ReplayProvider replay(dir / "r.jsonl", 2);
  EXPECT_EQ(replay.available_segments(), 3u);
  EXPECT_EQ(replay.vsg_scores(1).vector(), p.vsg_scores(1).vector());
  EXPECT_EQ(code_of([&] { replay.vsg_scores(3); }), ErrorCode::MissingObservation);
}

TEST(Replay, TruncatedFileIsCorrupt) {
  const auto dir = vsgtest::scratch_dir("replay_trunc");
  CountingProvider p(2);
  const std::string line = to_json(p.segment(0)).dump() + "\n" + to_json(p.segment(1)).dump() + "\n";
  write_lines(dir / "r.jsonl", line.substr(0, line.size() - 10));
  EXPECT_EQ(code_of([&] { ReplayProvider(dir / "r.jsonl", 2); }), ErrorCode::CorruptReplayFile);
  write_lines(dir / "bad.jsonl", "{\"t\":0,\"vsg\":[0.5,0.5]}\n");
  EXPECT_EQ(code_of([&] { ReplayProvider(dir / "bad.jsonl", 2); }), ErrorCode::CorruptReplayFile);
  EXPECT_EQ(code_of([&] { ReplayProvider(dir / "absent.jsonl", 2); }), ErrorCode::IoError);
}

TEST(Replay, LastRecordWins) {
  const auto dir = vsgtest::scratch_dir("replay_last");
  SegmentRecord a{0, ObservationScores::one_hot(2, 0), {ProgressDistribution::uniform(10)}, std::nullopt};
  SegmentRecord b = a;
  b.vsg = ObservationScores::one_hot(2, 1);
  write_lines(dir / "r.jsonl", to_json(a).dump() + "\n" + to_json(b).dump() + "\n");
  ReplayProvider replay(dir / "r.jsonl", 1);
  EXPECT_EQ(replay.vsg_scores(0).argmax(), 1u);
}

TEST(Caching, ServesRepeatsFromCache) {
  const auto dir = vsgtest::scratch_dir("cache_hits");
  auto inner = std::make_shared<CountingProvider>(2);
  {
    CachingProvider cache(inner, dir / "c.jsonl");
    for (std::size_t t = 0; t < 4; ++t) cache.segment(t);
    for (std::size_t t = 0; t < 4; ++t) cache.segment(t);
    EXPECT_EQ(inner->calls, 4u);
    EXPECT_EQ(cache.cache_hits(), 4u);
  }
  CachingProvider reopened(inner, dir / "c.jsonl");
  EXPECT_EQ(reopened.cached_segments(), 4u);
  reopened.segment(2);
  EXPECT_EQ(inner->calls, 4u);

  ReplayProvider replay(dir / "c.jsonl", 2);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(replay.segment(t), inner->segment(t));
}

TEST(Caching, RecoversFromInterruptedWrite) {
  const auto dir = vsgtest::scratch_dir("cache_tail");
  auto inner = std::make_shared<CountingProvider>(2);
  {
    CachingProvider cache(inner, dir / "c.jsonl");
    for (std::size_t t = 0; t < 3; ++t) cache.segment(t);
  }
  // Simulate a crash halfway through writing segment 3.
  {
    std::ofstream out(dir / "c.jsonl", std::ios::binary | std::ios::app);
    out << to_json(inner->segment(3)).dump().substr(0, 25);
  }
  EXPECT_EQ(code_of([&] { ReplayProvider(dir / "c.jsonl", 2); }), ErrorCode::CorruptReplayFile);
  inner->calls = 0;
  {
    CachingProvider cache(inner, dir / "c.jsonl");
    EXPECT_EQ(cache.cached_segments(), 3u);
    for (std::size_t t = 0; t < 5; ++t) cache.segment(t);
    EXPECT_EQ(inner->calls, 2u);
  }
  ReplayProvider replay(dir / "c.jsonl", 2);
  EXPECT_EQ(replay.available_segments(), 5u);
}

TEST(Caching, CorruptCompleteLineIsReported) {
  const auto dir = vsgtest::scratch_dir("cache_corrupt");
  write_lines(dir / "c.jsonl", "not json\n");
  EXPECT_EQ(code_of([&] { CachingProvider(std::make_shared<CountingProvider>(2), dir / "c.jsonl"); }),
            ErrorCode::CorruptReplayFile);
}

TEST(Synthetic, NoiseFreeIsOneHotOnTruth) {
  const auto tl = timeline_from_duration(20.0, 2.0);
  SyntheticOracleProvider p(one_interval(), tl, 3, 0.0, 1);
  for (std::size_t t = 0; t < tl.num_segments; ++t) {
    const double mid = tl.midpoint_s(t);
    const std::size_t truth = (mid >= 4.0 && mid < 12.0) ? 1 : 3;
    EXPECT_EQ(p.vsg_scores(t).vector(), ObservationScores::one_hot(4, truth).vector());
  }
}

TEST(Synthetic, ProgressIsFractionOfCompletion) {
  // Interval [3, 7) s is centred on the midpoint of segment 2.
  GroundTruthAnnotation a = one_interval();
  a.intervals = {{1, 3.0, 7.0}};
  const auto tl = timeline_from_duration(20.0, 2.0);
  SyntheticOracleProvider p(a, tl, 3, 0.0, 1);
  EXPECT_NEAR(expected_progress(p.progress(2, 1)), 0.5, 1e-12);  // midpoint 5.0
  EXPECT_NEAR(expected_progress(p.progress(1, 1)), 0.0, 1e-12);  // midpoint 3.0
  EXPECT_NEAR(expected_progress(p.progress(5, 1)), 1.0, 1e-12);  // after the end
  EXPECT_EQ(expected_progress(p.progress(2, 0)), 0.0);           // unannotated step
}

TEST(Synthetic, SeededAndReproducible) {
  const auto tl = timeline_from_duration(200.0, 2.0);
  SyntheticOracleProvider a(one_interval(), tl, 5, 0.4, 99), b(one_interval(), tl, 5, 0.4, 99),
      c(one_interval(), tl, 5, 0.4, 100);
  std::size_t differ = 0, flips = 0;
  for (std::size_t t = 0; t < tl.num_segments; ++t) {
    EXPECT_EQ(a.vsg_scores(t).vector(), b.vsg_scores(t).vector());
    differ += a.emitted_class(t) != c.emitted_class(t);
    flips += a.emitted_class(t) != true_class(one_interval(), tl, t, 5);
  }
  EXPECT_GT(differ, 0u);
  // 100 segments at 40% noise: the flip count is Binomial(100, 0.4).
  EXPECT_GT(flips, 20u);
  EXPECT_LT(flips, 60u);
}

TEST(Synthetic, WrongClassIsNeverTheTruth) {
  const auto tl = timeline_from_duration(400.0, 2.0);
  SyntheticOracleProvider p(one_interval(), tl, 4, 1.0, 5);
  std::vector<std::size_t> hist(5, 0);
  for (std::size_t t = 0; t < tl.num_segments; ++t) {
    const std::size_t k = p.emitted_class(t);
    EXPECT_NE(k, true_class(one_interval(), tl, t, 4));
    ++hist[k];
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_GT(hist[k], 0u);
}

TEST(Synthetic, Errors) {
  const auto tl = timeline_from_duration(10.0, 2.0);
  EXPECT_EQ(code_of([&] { SyntheticOracleProvider(one_interval(), tl, 3, 1.5, 0); }), ErrorCode::ConfigError);
  SyntheticOracleProvider p(one_interval(), tl, 3, 0.0, 0);
  EXPECT_EQ(code_of([&] { p.vsg_scores(5); }), ErrorCode::MissingObservation);
}
