#include <fstream>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "modelctl/errors.hpp"
#include "modelctl/toy_data.hpp"
#include "modelctl/toy_model.hpp"
#include "test_util.hpp"

using namespace modelctl;

TEST_CASE("toy vocabulary layout") {
  ToyVocabulary v{10};
  CHECK(v.size() == 25);
  CHECK(v.target(3) == 13);
  CHECK(v.task(TaskTag::kTranslate) == 23);
  CHECK(v.end() == 24);
  TokenSequence seq{{1, 4, 7, v.end()}};
  CHECK(v.render(seq) == "s1 s4 s7");
  CHECK(v.parse("s1 s4 s7", true) == seq);
  CHECK_THROWS_AS(v.parse("s1 q2", false), OutOfVocabulary);
  CHECK_THROWS_AS(v.parse("t10", false), OutOfVocabulary);
  CHECK(v.target_words().size() == 10);
}

TEST_CASE("synthetic dataset") {
  const auto spec = default_synthetic_spec();
  CHECK(spec.max_lead_frames == 8000);
  auto a = generate_synthetic_dataset(spec, 50, 7);
  auto b = generate_synthetic_dataset(spec, 50, 7);
  REQUIRE(a.size() == 50);
  const auto n_train = std::count_if(a.begin(), a.end(), [](const auto& u) { return u.train; });
  CHECK(n_train == 40);
  CHECK(a.front().train);
  CHECK(!a.back().train);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].audio.samples == b[i].audio.samples);
    ids.insert(a[i].id);
    const auto& u = a[i];
    REQUIRE(u.source.size() == u.symbols.size());
    for (std::size_t k = 0; k < u.symbols.size(); ++k) {
      CHECK(u.source.tokens[k] == u.symbols[k]);
      // Default mapping reverses the alphabet.
      CHECK(u.target.tokens[k] == spec.alphabet_size + (spec.alphabet_size - 1 - u.symbols[k]));
    }
    CHECK(u.symbols.size() >= 3);
    CHECK(u.symbols.size() <= 10);
    const std::size_t min_len = u.symbols.size() * 800;
    CHECK(u.audio.frames() >= min_len);
    CHECK(u.audio.frames() <= min_len + 8000 + 800);
  }
  CHECK(ids.size() == 50);
  CHECK_THROWS_AS(generate_synthetic_dataset(spec, 0, 1), InvalidArgument);
  CHECK(generate_synthetic_dataset(spec, 50, 8)[0].audio.samples != a[0].audio.samples);
}

TEST_CASE("a tone chip carries its symbol's frequency") {
  auto spec = default_synthetic_spec();
  spec.noise_std = 0.0;
  spec.max_lead_frames = 0;
  spec.max_trail_frames = 0;
  auto w = synthesize_symbols(spec, {2}, 1);
  REQUIRE(w.frames() == 800);
  // Correlate against each candidate tone; the true one dominates.
  int best = -1;
  double best_power = -1;
  for (int k = 0; k < spec.alphabet_size; ++k) {
    double c = 0, s = 0;
    for (std::size_t n = 0; n < w.frames(); ++n) {
      const double ph = 2 * M_PI * spec.tone_frequencies[static_cast<std::size_t>(k)] * n / 16000.0;
      c += w.samples[n] * std::cos(ph);
      s += w.samples[n] * std::sin(ph);
    }
    if (c * c + s * s > best_power) {
      best_power = c * c + s * s;
      best = k;
    }
  }
  CHECK(best == 2);
}

TEST_CASE("toy adapter input gradient matches finite differences") {
  ToyAdapter adapter(ToyModel(testutil::tiny_config()));
  const auto spec = testutil::tiny_spec();
  const auto vocab = spec.vocabulary();
  auto data = generate_synthetic_dataset(spec, 3, 21);
  std::mt19937 rng(4);
  double worst = 0.0;
  for (const auto& u : data) {
    for (TaskTag task : {TaskTag::kTranscribe, TaskTag::kTranslate}) {
      TokenSequence target = task == TaskTag::kTranscribe ? u.source : u.target;
      target.tokens.push_back(vocab.end());
      auto r = adapter.teacher_forced_nll(u.audio, target, task);
      REQUIRE(r.grad.size() == u.audio.frames());
      CHECK(r.nll == doctest::Approx(adapter.nll(u.audio, target, task)).epsilon(1e-12));
      std::uniform_int_distribution<std::size_t> pick(0, u.audio.frames() - 1);
      for (int probe = 0; probe < 8; ++probe) {
        const std::size_t i = pick(rng);
        Waveform p = u.audio, m = u.audio;
        p.samples[i] = static_cast<float>(p.samples[i] + 1e-3);
        m.samples[i] = static_cast<float>(m.samples[i] - 1e-3);
        const double delta = static_cast<double>(p.samples[i]) - static_cast<double>(m.samples[i]);
        const double fd = (adapter.nll(p, target, task) - adapter.nll(m, target, task)) / delta;
        const double rel = std::fabs(fd - r.grad[i]) / std::max(1e-4, std::fabs(fd) + std::fabs(r.grad[i]));
        worst = std::max(worst, rel);
      }
    }
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("decode and nll agree") {
  ToyAdapter adapter(ToyModel(testutil::tiny_config()));
  auto data = generate_synthetic_dataset(testutil::tiny_spec(), 4, 2);
  for (const auto& u : data) {
    for (TaskTag task : {TaskTag::kTranscribe, TaskTag::kTranslate}) {
      auto d = adapter.decode(u.audio, task);
      REQUIRE(d.step_nll.size() == d.sequence.size());
      CHECK(d.sequence.size() <= 8);
      CHECK(d.terminated == (!d.sequence.empty() && d.sequence.tokens.back() == adapter.end_token()));
      CHECK(adapter.nll(u.audio, d.sequence, task) == doctest::Approx(d.total_nll()).epsilon(1e-9));
      // Greedy choice: each emitted token is at least as likely as any other.
      for (double s : d.step_nll) CHECK(s <= std::log(adapter.vocab_size()) + 1e-9);
    }
  }
}

TEST_CASE("toy adapter contract errors") {
  ToyAdapter adapter(ToyModel(testutil::tiny_config()));
  auto u = generate_synthetic_dataset(testutil::tiny_spec(), 1, 2)[0];
  const TokenSequence ok{{0, adapter.end_token()}};
  CHECK_THROWS_AS(adapter.decode(Waveform{}, TaskTag::kTranscribe), InvalidArgument);
  CHECK_THROWS_AS(adapter.nll(u.audio, TokenSequence{{999}}, TaskTag::kTranscribe), OutOfVocabulary);
  CHECK_THROWS_AS(adapter.nll(u.audio, TokenSequence{{-1}}, TaskTag::kTranscribe), OutOfVocabulary);
  Waveform longer;
  longer.samples.assign(200001, 0.0f);
  CHECK_THROWS_AS(adapter.decode(longer, TaskTag::kTranscribe), AudioTooLong);
  Waveform other = u.audio;
  other.sample_rate = 8000;
  CHECK_THROWS_AS(adapter.nll(other, ok, TaskTag::kTranscribe), SampleRateMismatch);
  Waveform bad = u.audio;
  bad.samples[3] = std::nanf("");
  CHECK_THROWS_AS(adapter.decode(bad, TaskTag::kTranscribe), NonFiniteValue);
  CHECK(adapter.language() == "xx");
  CHECK_THROWS_AS(adapter.set_language("fr"), InvalidArgument);
  CHECK(adapter.tasks().size() == 2);
  CHECK_THROWS_AS(parse_task("xl"), InvalidArgument);
}

TEST_CASE("the task tag changes the decoder prompt") {
  ToyAdapter adapter(ToyModel(testutil::tiny_config()));
  auto u = generate_synthetic_dataset(testutil::tiny_spec(), 1, 2)[0];
  const TokenSequence y{{0, 1, adapter.end_token()}};
  CHECK(adapter.nll(u.audio, y, TaskTag::kTranscribe) != adapter.nll(u.audio, y, TaskTag::kTranslate));
}

TEST_CASE("checkpoint round trip and registry") {
  testutil::TempDir dir("toyckpt");
  ToyModel m(testutil::tiny_config());
  save_toy_model(m, dir.path / "m.bin");
  auto back = load_toy_model(dir.path / "m.bin");
  CHECK(back.checksum() == m.checksum());
  CHECK(back.config().to_json() == m.config().to_json());

  auto adapter = make_adapter("toy", dir.path / "m.bin");
  CHECK(adapter->parameter_checksum() == m.checksum());
  CHECK_THROWS_AS(make_adapter("nope", dir.path / "m.bin"), InvalidArgument);

  std::ofstream(dir.path / "junk.bin") << "garbage";
  CHECK_THROWS_AS(load_toy_model(dir.path / "junk.bin"), CorruptFile);
}

TEST_CASE("short training run lowers the loss and records a report") {
  auto cfg = testutil::tiny_config();
  cfg.max_steps = 60;
  cfg.eval_every = 30;
  cfg.batch_size = 8;
  auto data = generate_synthetic_dataset(testutil::tiny_spec(), 40, 5);
  std::vector<double> losses;
  auto m = train_toy_model(cfg, to_toy_examples(data),
                           [&](const ToyTrainingReport& r) { losses.push_back(r.final_loss); });
  REQUIRE(losses.size() >= 2);
  CHECK(losses.back() < losses.front());
  CHECK(m.training_report().steps == 60);
  if (!m.training_report().reached_target) CHECK(!m.training_report().warnings.empty());
  CHECK(m.checksum() != ToyModel(cfg).checksum());
}
