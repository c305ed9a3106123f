#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "milelab");
  std::ostringstream out, err;
  const int code = mile::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("milelab_test_" + name);
  fs::remove_all(p);
  return p;
}

// Small enough to train in well under a second.
const std::vector<std::string> kSmall{"--set",
                                      "model.dim=16",
                                      "model.n_heads=2",
                                      "model.n_layers=1",
                                      "model.vocab_size=64",
                                      "model.seq_len=16",
                                      "corpus.zipf.n_tokens=20000",
                                      "train.total_steps=12",
                                      "train.warmup_steps=2",
                                      "train.batch_size=4",
                                      "train.eval_interval=6",
                                      "train.eval_fraction=0.05"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(mile::cli::exit_code_for("config"), 2);
  EXPECT_EQ(mile::cli::exit_code_for("usage"), 2);
  EXPECT_EQ(mile::cli::exit_code_for("input"), 2);
  EXPECT_EQ(mile::cli::exit_code_for("numeric"), 3);
  EXPECT_EQ(mile::cli::exit_code_for("io"), 4);
  EXPECT_EQ(mile::cli::exit_code_for("internal"), 1);
}

TEST(Cli, UsageErrors) {
  Outcome r = invoke({});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error: category=usage"), std::string::npos);
  r = invoke({"train", "--bogus"});
  EXPECT_EQ(r.code, 2);
  r = invoke({"train"});  // --run-dir missing
  EXPECT_EQ(r.code, 2);
  r = invoke({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, ConfigErrorsAreOneLine) {
  const Outcome r = invoke({"grad-check", "--set", "loss.gamma=-3", "--set", "loss.kind=mile"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: category=config message=", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_EQ(invoke({"grad-check", "--set", "loss.nope=1"}).code, 2);
}

TEST(Cli, MissingFilesAreIoErrors) {
  Outcome r = invoke({"grad-check", "--config", "/nonexistent/cfg.json"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("category=io"), std::string::npos);
  r = invoke({"weights", "--manifest", "/nonexistent/manifest.json"});
  EXPECT_EQ(r.code, 4);
}

TEST(Cli, WeightsHandExample) {
  const fs::path dir = scratch("weights");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    os << R"({"domains": [{"name": "web", "sequence_count": 100, "epochs": 2.0},
                          {"name": "code", "sequence_count": 50, "epochs": 1.0}]})";
  }
  const Outcome r = invoke({"weights", "--manifest", (dir / "manifest.json").string(), "--run-dir", (dir / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "web 0.8\ncode 0.2\n");
  EXPECT_TRUE(fs::exists(dir / "run" / "weights.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.json"));
  fs::remove_all(dir);
}

TEST(Cli, GradCheckPassesAndFails) {
  Outcome r = invoke({"grad-check", "--loss", "mile", "--gamma", "1", "--n", "32", "--trials", "10"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  // An absurd tolerance cannot be met.
  r = invoke({"grad-check", "--loss", "focal", "--gamma", "2", "--n", "16", "--trials", "3", "--tol", "1e-30"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.err.find("category=numeric"), std::string::npos);
}

TEST(Cli, TrainSnapshotReproducesMetrics) {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  Outcome r = invoke(with({"train", "--quiet", "--run-dir", a.string()}, kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.json", "metrics.csv", "checkpoint.bin", "buckets_gamma0_seed0.csv",
                        "buckets_gamma0_seed0.txt"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  r = invoke({"train", "--quiet", "--config", (a / "config.json").string(), "--run-dir", b.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "config.json"), slurp(b / "config.json"));

  r = invoke(with({"eval", "--checkpoint", (a / "checkpoint.bin").string(), "--bins", "5", "--run-dir", b.string()},
                  kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("val_ppl ", 0), 0u);
  EXPECT_TRUE(fs::exists(b / "entropy_gamma0_seed0.csv"));
  EXPECT_TRUE(fs::exists(b / "eval_buckets_gamma0_seed0.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, MileGammaZeroOverrideMatchesCrossEntropy) {
  const fs::path a = scratch("ce"), b = scratch("mile0");
  ASSERT_EQ(invoke(with({"train", "--quiet", "--run-dir", a.string()}, kSmall)).code, 0);
  ASSERT_EQ(invoke(with({"train", "--quiet", "--run-dir", b.string(), "--set", "loss.kind=mile", "loss.gamma=0"},
                        kSmall))
                .code,
            0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, CorpusBucketsAndSweep) {
  const fs::path d = scratch("sweep");
  Outcome r = invoke(with({"gen-corpus", "--run-dir", d.string()}, kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "tokens.milt"));
  r = invoke(with({"buckets", "--run-dir", d.string()}, kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "buckets.csv").rfind("token_id,", 0), 0u);

  // The cached tokens feed training just like the generator.
  r = invoke(with({"sweep", "--gammas", "0,1", "--run-dir", (d / "s").string()}, with(kSmall, {"corpus.source=tokens", "corpus.path=" + (d / "tokens.milt").string()})));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "s" / "sweep_seed0.csv"));
  r = invoke(with({"sweep", "--gammas", "1,2", "--run-dir", (d / "s2").string()}, kSmall));
  EXPECT_EQ(r.code, 2);
  fs::remove_all(d);
}
