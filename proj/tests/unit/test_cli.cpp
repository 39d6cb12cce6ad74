#include "doctest.h"
#include "fixture.hpp"

#include "vafuse/config_io.hpp"
#include "vafuse/datapipe.hpp"
#include "vafuse/dsp.hpp"
#include "vafuse/harness.hpp"
#include "vafuse/wav.hpp"

#include "json.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace vafuse;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured to a file next to the data.
Run cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = std::string("\"") + VAFUSE_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          (scratch / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

fixture::SyntheticOptions tiny_options(bool frames) {
  fixture::SyntheticOptions o;
  o.trials = 12;
  o.length = 16;
  o.raw_frames = frames;
  o.visual_dim = 16;
  o.audio_dim = 8;
  o.mfcc_dim = 5;
  return o;
}

fs::path write_config(const fs::path& dir, const fixture::SyntheticOptions& o, const fs::path& manifest) {
  train::ExperimentConfig cfg;
  cfg.model = fixture::model_config(o);
  cfg.model.stem.channels = {4, 4, 8};
  cfg.model.tcn = {2, 3, 8, 2};
  cfg.model.transformer = {1, 2, 8, 16, 0.1};
  cfg.model.head.hidden_dim = 8;
  cfg.train.epochs = 2;
  cfg.train.window_stride = o.length;
  cfg.manifest = manifest;
  cfg.output_dir = dir / "runs";
  const fs::path path = dir / "config.json";
  std::ofstream(path) << to_json(cfg).dump(2);
  return path;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage and configuration errors exit with 2") {
    const auto dir = fixture::scratch_dir("cli-usage");
    CHECK(cli("", dir).code == 2);
    CHECK(cli("frobnicate", dir).code == 2);
    CHECK(cli("train --fold 0", dir).code == 2);
    CHECK(cli("train --config " + (dir / "missing.json").string() + " --fold 0", dir).code == 2);
    std::ofstream(dir / "bad.json") << R"({"model": {"colour": 1}})";
    CHECK(cli("train --config " + (dir / "bad.json").string() + " --fold 0", dir).code == 2);
    CHECK(cli("--help", dir).code == 0);
  }

  TEST_CASE("data errors exit with 3") {
    const auto dir = fixture::scratch_dir("cli-data");
    const auto o = tiny_options(false);
    const auto config = write_config(dir, o, dir / "no-such-manifest.json");
    CHECK(cli("train --config " + config.string() + " --fold 0", dir).code == 3);
    std::ofstream(dir / "broken.json") << "[{\"trial_id\": ";
    CHECK(cli("score --pred " + dir.string() + " --manifest " + (dir / "broken.json").string(), dir).code == 3);
  }

  TEST_CASE("train, predict and score agree with the library") {
    const auto dir = fixture::scratch_dir("cli-e2e");
    const auto o = tiny_options(false);
    const auto manifest = fixture::write_dataset(dir / "data", o);
    const auto config = write_config(dir, o, manifest);

    const auto trained = cli("train --config " + config.string() + " --fold 2", dir);
    REQUIRE(trained.code == 0);
    const auto report = nlohmann::json::parse(trained.out);
    CHECK(report["fold"] == 2);
    const fs::path ckpt = dir / "runs" / "fold-2.ckpt";
    CHECK(fs::exists(dir / "runs" / "fold-2.json"));
    CHECK(fs::exists(dir / "runs" / "fold-2.run.json"));
    REQUIRE(fs::exists(ckpt));

    REQUIRE(cli("predict --checkpoint " + ckpt.string() + " --manifest " + manifest.string() + " --out " +
                    (dir / "pred").string(),
                dir)
                .code == 0);
    for (int i = 0; i < 12; ++i) CHECK(fs::exists(dir / "pred" / ("trial" + std::to_string(i) + ".csv")));

    const auto scored = cli("score --pred " + (dir / "pred").string() + " --manifest " + manifest.string(), dir);
    REQUIRE(scored.code == 0);
    const auto s = nlohmann::json::parse(scored.out);

    auto model = nn::Model::load(ckpt);
    const auto trials = data::load_trials(data::read_manifest(manifest));
    const auto expect = train::evaluate(model, trials);
    CHECK(s["combined"].get<double>() == doctest::Approx(expect.combined).epsilon(1e-12));
    CHECK(s["ccc_valence"].get<double>() == doctest::Approx(expect.ccc_valence).epsilon(1e-12));

    // same seed, same run
    const auto again = cli("train --config " + config.string() + " --fold 2", dir);
    CHECK(again.out == trained.out);
  }

  TEST_CASE("crossval and ablate write their tables") {
    const auto dir = fixture::scratch_dir("cli-tables");
    auto o = tiny_options(true);
    o.length = 8;
    const auto manifest = fixture::write_dataset(dir / "data", o);
    const auto config = write_config(dir, o, manifest);
    const auto cv = cli("crossval --config " + config.string(), dir);
    REQUIRE(cv.code == 0);
    CHECK(cv.out.starts_with("| Val Set | Valence | Arousal |"));
    CHECK(fs::exists(dir / "runs" / "table.csv"));
    CHECK(fs::exists(dir / "runs" / "fold-5.ckpt"));
    const auto ab = cli("ablate --config " + config.string(), dir);
    REQUIRE(ab.code == 0);
    std::istringstream lines(ab.out);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 9);
    CHECK(fs::exists(dir / "runs" / "ablation.csv"));
  }

  TEST_CASE("extract-features derives both audio branches from audio.wav") {
    const auto dir = fixture::scratch_dir("cli-extract");
    auto o = tiny_options(false);
    o.trials = 1;
    const auto manifest = fixture::write_dataset(dir, o);
    const fs::path trial = dir / "trial0";
    fs::remove(trial / "vggish.bin");
    fs::remove(trial / "mfcc.bin");
    dsp::AudioClip clip;
    for (std::size_t i = 0; i < 16000; ++i) clip.samples.push_back(0.3 * std::sin(0.05 * static_cast<double>(i)));
    dsp::write_wav(trial / "audio.wav", clip, dsp::WavEncoding::Pcm16);

    REQUIRE(cli("extract-features " + manifest.string(), dir).code == 0);
    const auto vggish = dsp::read_feature_sequence(trial / "vggish.bin");
    const auto mfcc = dsp::read_feature_sequence(trial / "mfcc.bin");
    CHECK(vggish.frames.dim(1) == dsp::kVggishDim);
    CHECK(mfcc.frames.dim(1) == 39);
    CHECK(vggish.length() == mfcc.length());
    CHECK(vggish.length() > 25);
  }
}
