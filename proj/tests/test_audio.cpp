#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "modelctl/audio.hpp"
#include "modelctl/errors.hpp"
#include "test_util.hpp"

using namespace modelctl;

TEST_CASE("prepend concatenates in raw sample space") {
  AdversarialSegment seg;
  seg.epsilon = 0.02;
  seg.samples.assign(10240, 0.01f);
  Waveform x;
  x.samples.assign(160000, -0.5f);
  auto y = prepend(seg, x);
  CHECK(y.frames() == 170240);
  CHECK(y.samples[10239] == 0.01f);
  CHECK(y.samples[10240] == -0.5f);

  AdversarialSegment empty;
  CHECK(prepend(empty, x).samples == x.samples);

  x.sample_rate = 8000;
  CHECK_THROWS_AS(prepend(seg, x), SampleRateMismatch);
}

TEST_CASE("project_linf clamps") {
  CHECK(project_linf(std::vector<float>{0.5f, -3.0f, 1.9f}, 2.0) == std::vector<float>{0.5f, -2.0f, 1.9f});
  CHECK(project_linf(std::vector<float>{0.03f, -0.01f}, 0.02) == std::vector<float>{0.02f, -0.01f});
  CHECK(project_linf(std::vector<float>(5, 0.0f), 0.3) == std::vector<float>(5, 0.0f));
  CHECK_THROWS_AS(project_linf(std::vector<float>{std::nanf("")}, 1.0), NonFiniteValue);
  CHECK_THROWS_AS(project_linf(std::vector<float>{std::numeric_limits<float>::infinity()}, 1.0),
                  NonFiniteValue);
  CHECK_THROWS_AS(project_linf(std::vector<float>{0.0f}, -1.0), InvalidArgument);
}

TEST_CASE("project_linf properties under random sampling") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  std::uniform_real_distribution<double> e(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double eps = trial == 0 ? 0.0 : e(rng);
    std::vector<float> in(64);
    for (auto& v : in) v = u(rng);
    auto out = project_linf(in, eps);
    CHECK(linf_norm(out) <= eps);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (std::fabs(static_cast<double>(in[i])) <= eps) CHECK(out[i] == in[i]);
  }
}

TEST_CASE("float_bound never exceeds epsilon") {
  for (double eps : {0.02, 0.2, 2.0, 0.1, 1.0 / 3.0, 0.0, 1e-9}) {
    const float b = float_bound(eps);
    CHECK(static_cast<double>(b) <= eps);
    CHECK(static_cast<double>(std::nextafter(b, 10.0f)) > eps);
  }
}

TEST_CASE("preset frame arithmetic") {
  CHECK(static_cast<long>(5.12 * 16000 + 0.5) == 81920);
  CHECK(static_cast<long>(0.64 * 16000 + 0.5) == 10240);
}

TEST_CASE("segment round trip is bit exact") {
  testutil::TempDir dir("seg");
  AdversarialSegment seg;
  seg.epsilon = 2.0;
  seg.metadata = {"toy:model.bin", "xx", 600};
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  seg.samples.resize(10240);
  for (auto& s : seg.samples) s = u(rng);
  seg.samples[0] = 2.0f;
  seg.samples[1] = -0.0f;
  seg.samples[2] = std::numeric_limits<float>::denorm_min();
  save_segment(seg, dir.path / "a");
  auto back = load_segment(dir.path / "a.json");
  CHECK(back == seg);
  CHECK(std::signbit(back.samples[1]));
  CHECK(std::filesystem::file_size(dir.path / "a.f32le") == 10240 * 4);
}

TEST_CASE("segment load errors are distinct") {
  testutil::TempDir dir("segerr");
  AdversarialSegment seg;
  seg.epsilon = 0.02;
  seg.samples.assign(10240, 0.0f);
  save_segment(seg, dir.path / "s");

  SUBCASE("frame count mismatch") {
    std::ofstream(dir.path / "s.f32le", std::ios::binary | std::ios::trunc)
        .write(std::string(81920 * 4, '\0').data(), 81920 * 4);
    CHECK_THROWS_AS(load_segment(dir.path / "s"), FrameCountMismatch);
  }
  SUBCASE("corrupt sidecar") {
    std::ofstream(dir.path / "s.json", std::ios::trunc) << "{not json";
    CHECK_THROWS_AS(load_segment(dir.path / "s"), CorruptFile);
  }
  SUBCASE("missing sidecar field") {
    std::ofstream(dir.path / "s.json", std::ios::trunc) << R"({"frames": 10240})";
    CHECK_THROWS_AS(load_segment(dir.path / "s"), CorruptFile);
  }
  SUBCASE("truncated payload") {
    std::ofstream(dir.path / "s.f32le", std::ios::binary | std::ios::trunc) << "abc";
    CHECK_THROWS_AS(load_segment(dir.path / "s"), CorruptFile);
  }
  SUBCASE("amplitude above the declared epsilon") {
    auto j = nlohmann::json::parse(std::ifstream(dir.path / "s.json"));
    seg.samples[7] = 0.5f;
    std::ofstream f(dir.path / "s.f32le", std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(seg.samples.data()), static_cast<long>(seg.samples.size() * 4));
    f.close();
    CHECK_THROWS_AS(load_segment(dir.path / "s"), ConstraintViolation);
  }
}

TEST_CASE("save refuses a segment outside its ball") {
  AdversarialSegment seg;
  seg.epsilon = 0.02;
  seg.samples = {0.5f};
  CHECK_THROWS_AS(seg.validate(), ConstraintViolation);
}

TEST_CASE("wav round trips") {
  testutil::TempDir dir("wav");
  Waveform w;
  w.samples = {0.0f, 0.5f, -0.25f, 1.5f, -1.0f};
  write_wav(w, dir.path / "f.wav", WavEncoding::kFloat32);
  CHECK(read_wav(dir.path / "f.wav").samples == w.samples);

  Waveform p;
  p.samples = {0.0f, 0.5f, -0.25f, -1.0f, 1000.0f / 32768.0f};
  write_wav(p, dir.path / "p.wav", WavEncoding::kPcm16);
  auto back = read_wav(dir.path / "p.wav");
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples == p.samples);

  std::ofstream(dir.path / "bad.wav") << "RIFX";
  CHECK_THROWS_AS(read_wav(dir.path / "bad.wav"), CorruptFile);
}

TEST_CASE("waveform validation") {
  Waveform w;
  w.samples = {0.0f, std::nanf("")};
  CHECK_THROWS_AS(w.validate(), NonFiniteValue);
  w.samples = {};
  w.sample_rate = 0;
  CHECK_THROWS_AS(w.validate(), InvalidArgument);
}
