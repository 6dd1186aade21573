#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "modelctl/attack.hpp"
#include "test_util.hpp"

using namespace modelctl;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "modelctl");
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli usage errors exit with 1") {
  testutil::TempDir dir("cli_usage");
  const auto d = dir.path.string();
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"synth-data", "--n", "0", "--out", d + "/x"}).code == cli::kExitUsage);
  CHECK(run({"synth-data"}).code == cli::kExitUsage);
  CHECK(run({"learn-attack", "--model", "m", "--manifest", "m", "--preset", "huge", "--out", d}).code ==
        cli::kExitUsage);
  CHECK(run({"evaluate", "--model", "m", "--manifest", "m", "--mode", "xx", "--out", d}).code == cli::kExitUsage);
  auto r = run({"report", "--run", d + "/missing", "--out", d + "/rep"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("missing") != std::string::npos);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("cli pipeline on a tiny dataset") {
  testutil::TempDir dir("cli");
  const auto d = dir.path.string();
  REQUIRE(run({"synth-data", "--n", "10", "--alphabet", "4", "--seed", "3", "--out", d + "/data"}).code == 0);
  REQUIRE(run({"synth-data", "--n", "10", "--alphabet", "4", "--seed", "3", "--out", d + "/data2"}).code == 0);
  CHECK(slurp(dir.path / "data/manifest.jsonl") == slurp(dir.path / "data2/manifest.jsonl"));
  CHECK(slurp(dir.path / "data/audio/utt00004.wav") == slurp(dir.path / "data2/audio/utt00004.wav"));
  CHECK(fs::exists(dir.path / "data/config.json"));
  const std::string manifest = d + "/data/manifest.jsonl";
  {
    std::ifstream f(manifest);
    std::string line;
    int train = 0, test = 0;
    while (std::getline(f, line)) (nlohmann::json::parse(line)["split"] == "train" ? train : test)++;
    CHECK(train == 8);
    CHECK(test == 2);
  }

  save_toy_model(ToyModel(testutil::tiny_config()), dir.path / "model.bin");
  const std::string model = d + "/model.bin";

  SUBCASE("presets are echoed and zero steps keeps the initialization") {
    auto r = run({"learn-attack", "--model", model, "--manifest", manifest, "--preset", "weak", "--steps", "0",
                  "--out", d + "/weak"});
    REQUIRE(r.code == 0);
    auto cfg = nlohmann::json::parse(slurp(dir.path / "weak/config.json"));
    CHECK(cfg["attack"]["epsilon"] == 0.02);
    CHECK(cfg["attack"]["segment_frames"] == 10240);
    CHECK(cfg["attack"]["preset"] == "weak");
    auto seg = load_segment(dir.path / "weak/segment");
    CHECK(seg.samples == initial_segment(AttackConfig::from_preset(AttackPreset::kWeak)).samples);

    REQUIRE(run({"learn-attack", "--model", model, "--manifest", manifest, "--preset", "strong", "--steps", "0",
                 "--out", d + "/strong"})
                .code == 0);
    cfg = nlohmann::json::parse(slurp(dir.path / "strong/config.json"));
    CHECK(cfg["attack"]["epsilon"] == 2.0);
    CHECK(cfg["attack"]["segment_frames"] == 81920);
  }
  SUBCASE("preset and explicit budget are exclusive") {
    CHECK(run({"learn-attack", "--model", model, "--manifest", manifest, "--preset", "weak", "--epsilon", "0.1",
               "--out", d + "/x"})
              .code == cli::kExitUsage);
    CHECK(run({"learn-attack", "--model", model, "--manifest", manifest, "--epsilon", "0.1", "--out", d + "/x"})
              .code == cli::kExitUsage);
  }
  SUBCASE("learn, evaluate and report") {
    REQUIRE(run({"gen-targets", "--model", model, "--manifest", manifest, "--out", d + "/targets"}).code == 0);
    const std::vector<std::string> learn = {"learn-attack", "--model", model, "--manifest", manifest,
                                            "--targets", d + "/targets/targets.json", "--epsilon", "0.05",
                                            "--frames", "800", "--steps", "4", "--batch", "2", "--seed", "5",
                                            "--select-every", "2"};
    auto a = learn;
    a.insert(a.end(), {"--out", d + "/atk1"});
    auto b = learn;
    b.insert(b.end(), {"--out", d + "/atk2"});
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    CHECK(slurp(dir.path / "atk1/segment.f32le") == slurp(dir.path / "atk2/segment.f32le"));
    CHECK(slurp(dir.path / "atk1/segment.json") == slurp(dir.path / "atk2/segment.json"));
    CHECK(read_trace(dir.path / "atk1/trace.jsonl").size() == 4);
    CHECK(fs::exists(dir.path / "atk1/summary.json"));

    auto e = run({"evaluate", "--model", model, "--manifest", manifest, "--segment", d + "/atk1/segment",
                  "--label", "Attack", "--out", d + "/ev"});
    REQUIRE(e.code == 0);
    CHECK(e.out.find("Attack,tc,2,0,") != std::string::npos);
    REQUIRE(run({"evaluate", "--model", model, "--manifest", manifest, "--mode", "tl", "--out", d + "/tl"}).code == 0);
    CHECK(run({"evaluate", "--model", model, "--manifest", manifest, "--segment", d + "/nope", "--out", d + "/z"})
              .code == cli::kExitUsage);

    auto r = run({"report", "--run", d + "/tl", "--run", d + "/ev", "--tl-reference", d + "/tl", "--out",
                  d + "/report"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir.path / "report/report.md"));
    CHECK(fs::exists(dir.path / "report/p_en_hist.csv"));
    CHECK(fs::exists(dir.path / "report/config.json"));
  }
  SUBCASE("runtime failures exit with 2") {
    std::ofstream(dir.path / "broken.bin") << "not a model";
    CHECK(run({"gen-targets", "--model", d + "/broken.bin", "--manifest", manifest, "--out", d + "/t"}).code ==
          cli::kExitRuntime);
  }
}
