#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mile/config.hpp"
#include "mile/error.hpp"

using namespace mile;
using nlohmann::json;

TEST(Config, DefaultsRoundTripThroughJson) {
  const ExperimentConfig d;
  const ExperimentConfig back = experiment_from_json(to_json(d));
  EXPECT_EQ(dump_config(back), dump_config(d));
  EXPECT_EQ(back.model.dim, 64u);
  EXPECT_EQ(back.train.loss.kind, LossKind::kCrossEntropy);
  EXPECT_EQ(back.train.loss.factor_grad, FactorGrad::kDifferentiable);
}

TEST(Config, PartialDocumentMergesOverDefaults) {
  const ExperimentConfig c = experiment_from_json(json::parse(R"({"loss": {"kind": "mile", "gamma": 0.5},
                                                                    "train": {"total_steps": 10, "warmup_steps": 2}})"));
  EXPECT_EQ(c.train.loss.kind, LossKind::kMiLe);
  EXPECT_EQ(c.train.loss.gamma, 0.5);
  EXPECT_EQ(c.train.total_steps, 10u);
  EXPECT_EQ(c.train.batch_size, 32u);
}

TEST(Config, UnknownFieldsAndWrongTypesAreRejected) {
  EXPECT_THROW(experiment_from_json(json::parse(R"({"modle": {}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"model": {"depth": 3}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"model": {"dim": "big"}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"model": {"dim": -4}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"loss": {"kind": "hinge"}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"loss": {"gamma": 11}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"model": {"dim": 10, "n_heads": 3}})")), ConfigError);
}

TEST(Config, OverridesUseDottedPaths) {
  json doc = json::object();
  apply_override(doc, "loss.gamma=0");
  apply_override(doc, "loss.kind=mile");
  apply_override(doc, "model.rotary=false");
  apply_override(doc, "train.peak_lr=1e-3");
  const ExperimentConfig c = experiment_from_json(doc);
  EXPECT_EQ(c.train.loss.kind, LossKind::kMiLe);
  EXPECT_EQ(c.train.loss.gamma, 0.0);
  EXPECT_FALSE(c.model.rotary);
  EXPECT_EQ(c.train.peak_lr, 1e-3);
  EXPECT_THROW(apply_override(doc, "loss.gama=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "gamma"), ConfigError);
  EXPECT_THROW(apply_override(doc, "=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "loss..gamma=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, ".gamma=1"), ConfigError);
}

TEST(Config, ZipfVocabularyFollowsModel) {
  const ExperimentConfig c = experiment_from_json(json::parse(R"({"model": {"vocab_size": 100}})"));
  EXPECT_EQ(c.corpus.zipf.vocab_size, 100u);
}

TEST(Config, SnapshotReloadsIdentically) {
  const auto p = std::filesystem::temp_directory_path() / "mile_config_snapshot.json";
  const std::vector<std::string> sets{"train.peak_lr=0.0012345678901234567", "loss.kind=focal", "loss.gamma=2.5",
                                      "corpus.zipf.exponent=1.3"};
  const ExperimentConfig a = load_experiment_config("", sets);
  {
    std::ofstream os(p);
    os << dump_config(a);
  }
  const ExperimentConfig b = load_experiment_config(p.string(), {});
  EXPECT_EQ(dump_config(a), dump_config(b));
  EXPECT_EQ(b.train.peak_lr, 0.0012345678901234567);
  std::filesystem::remove(p);
}

TEST(Config, MissingOrMalformedFiles) {
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json", {}), IoError);
  const auto p = std::filesystem::temp_directory_path() / "mile_config_bad.json";
  {
    std::ofstream os(p);
    os << "{ not json";
  }
  EXPECT_THROW(load_experiment_config(p.string(), {}), ConfigError);
  std::filesystem::remove(p);
}

TEST(Config, CorpusSourceValidation) {
  EXPECT_THROW(experiment_from_json(json::parse(R"({"corpus": {"source": "web"}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"corpus": {"source": "jsonl"}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"corpus": {"source": "jsonl", "path": "x", "tokenizer": "byte"},
                                                    "model": {"vocab_size": 100}})")),
               ConfigError);
}
