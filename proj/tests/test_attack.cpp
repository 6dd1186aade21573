#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "modelctl/attack.hpp"
#include "modelctl/errors.hpp"
#include "test_util.hpp"

using namespace modelctl;

namespace {

// Delegates to a toy adapter; teacher_forced_nll misbehaves from call
// `fail_after` on (NaN loss or a thrown adapter error).
class FlakyAdapter final : public ModelAdapter {
 public:
  enum class Mode { kNaN, kThrow };
  FlakyAdapter(const ToyAdapter& inner, long fail_after, Mode mode)
      : inner_(inner), fail_after_(fail_after), mode_(mode) {}

  std::string id() const override { return inner_.id(); }
  int vocab_size() const override { return inner_.vocab_size(); }
  int sample_rate() const override { return inner_.sample_rate(); }
  std::size_t max_frames() const override { return inner_.max_frames(); }
  std::vector<TaskTag> tasks() const override { return inner_.tasks(); }
  TokenId end_token() const override { return inner_.end_token(); }
  std::string language() const override { return inner_.language(); }
  void set_language(const std::string&) override {}
  NllResult teacher_forced_nll(const Waveform& a, const TokenSequence& t, TaskTag task) const override {
    auto r = inner_.teacher_forced_nll(a, t, task);
    if (++calls_ > fail_after_) {
      if (mode_ == Mode::kThrow) throw AudioTooLong("injected failure");
      r.nll = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
  }
  double nll(const Waveform& a, const TokenSequence& t, TaskTag task) const override {
    return inner_.nll(a, t, task);
  }
  DecodeResult decode(const Waveform& a, TaskTag task) const override { return inner_.decode(a, task); }
  std::string detokenize(const TokenSequence& s) const override { return inner_.detokenize(s); }
  std::uint64_t parameter_checksum() const override { return inner_.parameter_checksum(); }

 private:
  const ToyAdapter& inner_;
  long fail_after_;
  Mode mode_;
  mutable long calls_ = 0;
};

struct Setup {
  ToyAdapter adapter{ToyModel(testutil::tiny_config())};
  std::vector<AttackUtterance> train;
  std::vector<AttackUtterance> test;
  TargetSet targets;

  Setup() {
    for (auto& u : generate_synthetic_dataset(testutil::tiny_spec(), 10, 17))
      (u.train ? train : test).push_back({u.id, u.audio});
    targets = generate_targets(adapter, train);
  }
};

AttackConfig small_config() {
  AttackConfig c;
  c.epsilon = 0.05;
  c.segment_frames = 640;
  c.steps = 12;
  c.batch_size = 3;
  c.learning_rate = 5e-3;
  c.seed = 3;
  c.select_every = 4;
  return c;
}

std::uint64_t audio_digest(const std::vector<AttackUtterance>& us) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& u : us)
    for (float s : u.audio.samples) h = (h ^ std::bit_cast<std::uint32_t>(s)) * 1099511628211ull;
  return h;
}

}  // namespace

TEST_CASE("presets bind the fixed budgets") {
  auto w = AttackConfig::from_preset(AttackPreset::kWeak);
  CHECK(w.epsilon == 0.02);
  CHECK(w.segment_frames == 10240);
  auto m = AttackConfig::from_preset(AttackPreset::kMid);
  CHECK(m.epsilon == 0.2);
  CHECK(m.segment_frames == 10240);
  auto s = AttackConfig::from_preset(AttackPreset::kStrong);
  CHECK(s.epsilon == 2.0);
  CHECK(s.segment_frames == 81920);
  CHECK(*s.preset == AttackPreset::kStrong);
  CHECK_THROWS_AS(parse_preset("huge"), InvalidArgument);
}

TEST_CASE("attack config validation and json") {
  auto c = small_config();
  c.preset = AttackPreset::kMid;
  c.init = SegmentInit::kZeros;
  c.reduction = LossReduction::kPerToken;
  auto back = AttackConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.epsilon = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_config();
  c.segment_frames = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("initial segment") {
  auto c = small_config();
  auto a = initial_segment(c);
  CHECK(a.frames() == 640);
  CHECK(linf_norm(a.samples) <= 0.1 * c.epsilon);
  CHECK(linf_norm(a.samples) > 0.0);
  CHECK(initial_segment(c) == a);
  c.init = SegmentInit::kZeros;
  CHECK(linf_norm(initial_segment(c).samples) == 0.0);
}

TEST_CASE("generate_targets") {
  Setup s;
  REQUIRE(s.targets.entries.size() == s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    CHECK(s.targets.entries[i].id == s.train[i].id);
    CHECK(s.targets.entries[i].tokens == s.adapter.decode(s.train[i].audio, TaskTag::kTranslate).sequence);
  }
  auto again = generate_targets(s.adapter, s.train);
  CHECK(to_json(again) == to_json(s.targets));
  CHECK(to_json(targets_from_json(to_json(again))) == to_json(again));

  auto empty = generate_targets(s.adapter, {});
  CHECK(empty.entries.empty());
  CHECK(!empty.warnings.empty());

  auto with_bad = s.train;
  with_bad.push_back({"broken", Waveform{}});
  auto t = generate_targets(s.adapter, with_bad);
  CHECK(t.entries.size() == s.train.size());
  CHECK(t.excluded == std::vector<std::string>{"broken"});
  CHECK(t.find("broken") == nullptr);
}

TEST_CASE("attack_step with zero learning rate is the identity") {
  Setup s;
  auto seg = initial_segment(small_config());
  const auto before = seg;
  SegmentOptimizer opt(seg.frames(), 0.0);
  std::vector<BatchItem> batch = {{&s.train[0], &s.targets.entries[0]}, {&s.train[1], &s.targets.entries[1]}};
  auto o = attack_step(s.adapter, seg, batch, opt, 1);
  CHECK(seg == before);
  CHECK(std::isfinite(o.mean_nll));
}

TEST_CASE("attack_step stays inside the ball and leaves inputs alone") {
  Setup s;
  auto c = small_config();
  c.learning_rate = 1.0;  // far larger than epsilon: projection does the work
  auto seg = initial_segment(c);
  SegmentOptimizer opt(seg.frames(), c.learning_rate);
  std::vector<BatchItem> batch = {{&s.train[0], &s.targets.entries[0]}};
  const auto model_sum = s.adapter.parameter_checksum();
  const auto audio_sum = audio_digest(s.train);
  for (long step = 1; step <= 3; ++step) {
    auto o = attack_step(s.adapter, seg, batch, opt, step);
    CHECK(o.linf <= c.epsilon);
    CHECK(linf_norm(seg.samples) <= c.epsilon);
  }
  CHECK(linf_norm(seg.samples) == static_cast<double>(float_bound(c.epsilon)));
  CHECK(s.adapter.parameter_checksum() == model_sum);
  CHECK(audio_digest(s.train) == audio_sum);
  CHECK_THROWS_AS(attack_step(s.adapter, seg, std::vector<BatchItem>{}, opt, 4), InvalidArgument);
}

TEST_CASE("non-finite loss aborts the step with its index") {
  Setup s;
  FlakyAdapter flaky(s.adapter, 0, FlakyAdapter::Mode::kNaN);
  auto seg = initial_segment(small_config());
  const auto before = seg;
  SegmentOptimizer opt(seg.frames(), 1e-2);
  std::vector<BatchItem> batch = {{&s.train[0], &s.targets.entries[0]}};
  try {
    attack_step(flaky, seg, batch, opt, 7);
    FAIL("expected StepFailure");
  } catch (const StepFailure& e) {
    CHECK(e.step() == 7);
  }
  CHECK(seg == before);
}

TEST_CASE("repeated steps on one utterance decrease its NLL") {
  Setup s;
  auto c = small_config();
  c.epsilon = 0.5;
  c.learning_rate = 2e-3;
  auto seg = initial_segment(c);
  SegmentOptimizer opt(seg.frames(), c.learning_rate);
  std::vector<BatchItem> batch = {{&s.train[0], &s.targets.entries[0]}};
  auto nll = [&] {
    return s.adapter.nll(prepend(seg, s.train[0].audio), s.targets.entries[0].tokens, TaskTag::kTranscribe);
  };
  double prev = nll();
  int k = 0;
  for (long step = 1; step <= 40; ++step) {
    attack_step(s.adapter, seg, batch, opt, step);
    const double now = nll();
    if (!(now < prev)) break;
    prev = now;
    ++k;
  }
  MESSAGE("strictly decreasing for the first " << k << " steps");
  CHECK(k >= 10);
}

TEST_CASE("train_universal_segment basics") {
  Setup s;
  auto c = small_config();

  SUBCASE("zero steps returns the initialization") {
    c.steps = 0;
    auto r = train_universal_segment(s.adapter, c, s.train, s.targets);
    CHECK(r.segment.samples == initial_segment(c).samples);
    CHECK(r.trace.rows.empty());
    CHECK(r.segment.metadata.model_id == "toy");
  }
  SUBCASE("trace, purity, leakage and determinism") {
    const auto model_sum = s.adapter.parameter_checksum();
    const auto audio_sum = audio_digest(s.train);
    auto r = train_universal_segment(s.adapter, c, s.train, s.targets);
    CHECK(s.adapter.parameter_checksum() == model_sum);
    CHECK(audio_digest(s.train) == audio_sum);
    REQUIRE(r.trace.rows.size() == 12);
    for (std::size_t i = 0; i < r.trace.rows.size(); ++i) {
      CHECK(r.trace.rows[i].step == static_cast<long>(i) + 1);
      CHECK(r.trace.rows[i].linf <= c.epsilon);
      CHECK(std::isfinite(r.trace.rows[i].mean_nll));
    }
    std::set<std::string> train_ids;
    for (const auto& u : s.train) train_ids.insert(u.id);
    REQUIRE(r.trace.batch_ids.size() == 12);
    for (const auto& b : r.trace.batch_ids) {
      CHECK(b.size() == 3);
      for (const auto& id : b) CHECK(train_ids.count(id) == 1);
    }
    // Selection at 0, 4, 8, 12; the returned segment is the best of them.
    REQUIRE(r.trace.selections.size() == 4);
    double best = r.trace.selections[0].train_mean_nll;
    for (const auto& p : r.trace.selections) best = std::min(best, p.train_mean_nll);
    double got = 0;
    for (std::size_t i = 0; i < s.train.size(); ++i)
      got += s.adapter.nll(prepend(r.segment, s.train[i].audio), s.targets.entries[i].tokens, TaskTag::kTranscribe);
    CHECK(got / static_cast<double>(s.train.size()) == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.segment.metadata.steps == r.trace.best_step);

    auto again = train_universal_segment(s.adapter, c, s.train, s.targets);
    CHECK(again.segment == r.segment);
    CHECK(again.trace.batch_ids == r.trace.batch_ids);

    c.seed = 4;
    auto other = train_universal_segment(s.adapter, c, s.train, s.targets);
    CHECK(other.trace.batch_ids != r.trace.batch_ids);
  }
  SUBCASE("every utterance needs a target") {
    TargetSet partial = s.targets;
    partial.entries.pop_back();
    CHECK_THROWS_AS(train_universal_segment(s.adapter, c, s.train, partial), InvalidArgument);
    partial.excluded.push_back(s.targets.entries.back().id);
    CHECK_NOTHROW(train_universal_segment(s.adapter, c, s.train, partial));
  }
  SUBCASE("sample rate must match") {
    c.sample_rate = 8000;
    CHECK_THROWS_AS(train_universal_segment(s.adapter, c, s.train, s.targets), SampleRateMismatch);
  }
}

TEST_CASE("checkpoints and trace persistence") {
  Setup s;
  testutil::TempDir dir("attack");
  auto c = small_config();
  c.checkpoint_every = 5;
  TrainOptions opts;
  opts.checkpoint_dir = dir.path;
  std::vector<long> seen;
  opts.on_step = [&](const TraceRow& r) { seen.push_back(r.step); };
  auto r = train_universal_segment(s.adapter, c, s.train, s.targets, opts);
  CHECK(seen.size() == 12);
  auto rows = read_trace(dir.path / "trace.jsonl");
  REQUIRE(rows.size() == 12);
  CHECK(rows[3].mean_nll == r.trace.rows[3].mean_nll);
  CHECK(std::filesystem::exists(dir.path / "batches.jsonl"));
  CHECK(load_segment(dir.path / "checkpoint").frames() == 640);

  SUBCASE("adapter failure keeps the trace written so far") {
    testutil::TempDir fail_dir("attack_fail");
    FlakyAdapter flaky(s.adapter, 7, FlakyAdapter::Mode::kThrow);  // batch of 3: fails in step 3
    opts.checkpoint_dir = fail_dir.path;
    opts.on_step = {};
    try {
      train_universal_segment(flaky, c, s.train, s.targets, opts);
      FAIL("expected failure");
    } catch (const StepFailure& e) {
      CHECK(e.step() == 3);
      CHECK(std::string(e.what()).find("utt") != std::string::npos);
    }
    CHECK(read_trace(fail_dir.path / "trace.jsonl").size() == 2);
  }
}

TEST_CASE("per-token reduction divides by target length") {
  Setup s;
  auto seg = initial_segment(small_config());
  std::vector<BatchItem> batch = {{&s.train[0], &s.targets.entries[0]}};
  auto u = batch_gradient(s.adapter, seg, batch, LossReduction::kPerUtterance);
  auto t = batch_gradient(s.adapter, seg, batch, LossReduction::kPerToken);
  const double len = static_cast<double>(s.targets.entries[0].tokens.size());
  CHECK(t.mean_nll == doctest::Approx(u.mean_nll / len));
  CHECK(t.grad[5] == doctest::Approx(u.grad[5] / len));
}
