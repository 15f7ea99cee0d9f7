#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "adma/cli/cli.hpp"
#include "test_util.hpp"

using adma::cli::cli_main;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "adma");
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path write_config(const std::filesystem::path& dir) {
  const auto path = dir / "base.cfg";
  std::ofstream(path) << "# tiny run\n"
                         "corpus.vocab_size = 4\ncorpus.feature_dim = 4\ncorpus.frames_per_token = 2\n"
                         "corpus.num_speakers = 2\ncorpus.num_train = 12\ncorpus.eval_per_speaker = 2\n"
                         "corpus.min_tokens = 3\ncorpus.max_tokens = 4\n"
                         "model.num_layers = 2\nmodel.width = 8\nmodel.heads = 2\nmodel.text_tap = 1\n"
                         "model.speech_tap = 2\nmodel.text_refine_layers = 1\nmodel.text_conv_kernel = 3\n"
                         "train.total_updates = 4\ntrain.warmup_updates = 1\ntrain.batch_size = 2\n"
                         "train.eval_interval = 2\ntrain.extractor_dim = 6\nsampler.nfe_steps = 2\n";
  return path;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("unknown input prints usage and exits 1") {
    auto r = run({"frobnicate"});
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    r = run({"ctc-oracle", "--bogus"});
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(run({}).code == 1);
    CHECK(run({"gradcheck", "--profile", "huge"}).code == 1);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("ctc-oracle") {
    const auto r = run({"ctc-oracle", "--max-T", "6"});
    CHECK(r.code == 0);
    CHECK(r.out.find("instances 500") != std::string::npos);
  }

  TEST_CASE("bad config is a validation failure") {
    const auto dir = testing::temp_dir("cli-badcfg");
    std::ofstream(dir / "bad.cfg") << "model.depth = 3\n";
    auto r = run({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("model.depth") != std::string::npos);
    std::ofstream(dir / "neg.cfg") << "train.lambda_text = -1\n";
    CHECK(run({"train", "--config", (dir / "neg.cfg").string(), "--out", (dir / "o").string()}).code == 1);
  }

  TEST_CASE("train twice with one seed gives identical metrics") {
    const auto dir = testing::temp_dir("cli-train");
    const auto cfg = write_config(dir).string();
    REQUIRE(run({"train", "--config", cfg, "--seed", "7", "--out", (dir / "a").string()}).code == 0);
    REQUIRE(run({"train", "--config", cfg, "--seed", "7", "--out", (dir / "b").string()}).code == 0);
    REQUIRE(run({"train", "--config", cfg, "--seed", "8", "--out", (dir / "c").string()}).code == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "metrics.csv") != slurp(dir / "c" / "metrics.csv"));

    ::setenv("ADMA_SEED", "7", 1);
    REQUIRE(run({"train", "--config", cfg, "--out", (dir / "env").string()}).code == 0);
    ::unsetenv("ADMA_SEED");
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "env" / "metrics.csv"));
  }

  TEST_CASE("corpus, eval, sample and plotdata round trip") {
    const auto dir = testing::temp_dir("cli-flow");
    const auto cfg = write_config(dir).string();
    REQUIRE(run({"corpus", "gen", "--config", cfg, "--out", (dir / "corpus").string()}).code == 0);
    CHECK(std::filesystem::exists(dir / "corpus" / "manifest.csv"));
    REQUIRE(run({"train", "--config", cfg, "--corpus", (dir / "corpus").string(), "--out", (dir / "base").string(),
                 "--experiment"})
                .code == 0);
    CHECK(std::filesystem::exists(dir / "base" / "paired.csv"));
    const auto ema = (dir / "base" / "adma" / "ema.bin").string();
    const auto e = run({"eval", "--config", cfg, "--model", ema, "--out", (dir / "eval").string()});
    CHECK(e.code == 0);
    CHECK(e.out.find("proxy_ser") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "eval" / "eval.json"));
    const auto s = run({"sample", "--config", cfg, "--model", ema, "--out", (dir / "sample").string(), "--solver",
                        "midpoint"});
    CHECK(s.code == 0);
    CHECK(std::filesystem::exists(dir / "sample" / "sample-0.mat"));
    CHECK(std::filesystem::exists(dir / "sample" / "samples.csv"));
    const auto p = run({"plotdata", "--baseline", (dir / "base" / "baseline").string(), "--adma",
                        (dir / "base" / "adma").string(), "--out", (dir / "p.csv").string()});
    CHECK(p.code == 0);
    CHECK(slurp(dir / "p.csv") == slurp(dir / "base" / "paired.csv"));
    CHECK(run({"eval", "--config", cfg, "--model", (dir / "missing.bin").string()}).code == 1);
  }

  TEST_CASE("sweep writes a row per value") {
    const auto dir = testing::temp_dir("cli-sweep");
    const auto cfg = write_config(dir).string();
    const auto r = run({"sweep", "--config", cfg, "--axis", "loss_variant", "--out", (dir / "s").string()});
    CHECK(r.code == 0);
    std::ifstream in(dir / "s" / "sweep.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[1].find("neg_cos") != std::string::npos);
    CHECK(lines[2].find(",l1,") != std::string::npos);
    CHECK(lines[3].find("logsig_cos") != std::string::npos);
  }
}
