#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>

#include "mile/corpus.hpp"
#include "mile/losses.hpp"
#include "mile/model.hpp"
#include "mile/trainer.hpp"

namespace mile {

/// Where training tokens come from.
struct CorpusConfig {
  /// "zipf" (generated), "jsonl" (documents with text/domain), or "tokens"
  /// (a MILT1 token cache).
  std::string source = "zipf";
  /// Generator settings; the vocabulary size is taken from the model.
  ZipfCorpusConfig zipf;
  std::string path;
  /// "byte" or "word", for jsonl sources.
  std::string tokenizer = "byte";
  /// Optional domain manifest for jsonl sources; uniform over domains
  /// present in the corpus when empty.
  std::string manifest;
};

/// Everything a run needs. JSON sections: "model", "train", "loss", "corpus".
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;  // train.loss mirrors the "loss" section
  CorpusConfig corpus;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossSpec& s);
nlohmann::json to_json(const ExperimentConfig& c);

/// Reads a full or partial document over the defaults. Unknown fields and
/// mistyped values are ConfigErrors.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Applies "dotted.path=value" to `doc`; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Defaults, then the file at `path` (if non-empty), then `overrides`.
ExperimentConfig load_experiment_config(const std::string& path, std::span<const std::string> overrides);

/// Pretty-printed effective configuration; loading it reproduces `c`.
std::string dump_config(const ExperimentConfig& c);

}  // namespace mile
