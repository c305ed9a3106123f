#pragma once

#include <string>
#include <vector>

#include "mile/config.hpp"
#include "mile/corpus.hpp"
#include "mile/trainer.hpp"

namespace mile {

/// Tokens, frequency statistics and the train/eval split for one config.
struct PreparedData {
  Vocab vocab;
  std::vector<TokenId> stream;  // every token, domains concatenated in order
  CorpusStats stats;  // counts over `stream`
  FrequencyBuckets buckets;
  std::vector<std::string> domain_names;
  TrainingData data;
};

/// Builds the corpus described by cfg.corpus and chunks it into sequences of
/// model.seq_len + 1 tokens (inputs and shifted targets of length seq_len).
PreparedData prepare_data(const ExperimentConfig& cfg);

/// init_model(cfg.model) trained on `data` with cfg.train.
TrainResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data,
                           const StepCallback& on_step = {});

}  // namespace mile
