#include "mile/experiment.hpp"

#include <algorithm>
#include <map>

#include "mile/error.hpp"

namespace mile {

namespace {

struct DomainTokens {
  std::vector<std::string> names;
  std::vector<std::vector<TokenId>> tokens;
};

DomainTokens from_jsonl(const ExperimentConfig& cfg, Vocab& vocab) {
  const std::vector<Document> docs = read_jsonl_corpus(cfg.corpus.path);
  if (docs.empty()) throw InputError("corpus '" + cfg.corpus.path + "' has no documents");
  const TokenizerMode mode = parse_tokenizer_mode(cfg.corpus.tokenizer);
  if (mode == TokenizerMode::kWord) {
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const Document& d : docs) texts.push_back(d.text);
    vocab = Vocab::words(texts, cfg.model.vocab_size);
  } else if (mode == TokenizerMode::kByte) {
    vocab = Vocab::bytes();
  } else {
    throw ConfigError("jsonl corpora use the byte or word tokenizer");
  }

  DomainTokens out;
  std::map<std::string, std::size_t> index;
  if (!cfg.corpus.manifest.empty()) {
    const DomainManifest manifest = DomainManifest::load(cfg.corpus.manifest);
    for (const DomainEntry& e : manifest.domains) {
      index.emplace(e.name, out.names.size());
      out.names.push_back(e.name);
    }
  }
  out.tokens.resize(out.names.size());
  for (const Document& d : docs) {
    auto it = index.find(d.domain);
    if (it == index.end()) {
      if (!cfg.corpus.manifest.empty()) {
        throw InputError("document domain '" + d.domain + "' is not in the manifest");
      }
      it = index.emplace(d.domain, out.names.size()).first;
      out.names.push_back(d.domain);
      out.tokens.emplace_back();
    }
    const std::vector<TokenId> ids = tokenize(d.text, vocab);
    out.tokens[it->second].insert(out.tokens[it->second].end(), ids.begin(), ids.end());
  }
  return out;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData out;
  const std::size_t N = cfg.model.vocab_size;
  DomainTokens domains;
  if (cfg.corpus.source == "zipf") {
    ZipfCorpusConfig z = cfg.corpus.zipf;
    z.vocab_size = N;
    out.vocab = Vocab::synthetic(N);
    domains.names = {"zipf"};
    domains.tokens = {generate_zipf_corpus(z)};
  } else if (cfg.corpus.source == "tokens") {
    out.vocab = Vocab::synthetic(N);
    domains.names = {"tokens"};
    domains.tokens = {read_token_cache(cfg.corpus.path)};
  } else {
    domains = from_jsonl(cfg, out.vocab);
  }
  if (out.vocab.size() > N) {
    throw ConfigError("tokenizer vocabulary (" + std::to_string(out.vocab.size()) + ") exceeds model.vocab_size");
  }

  std::vector<SequenceSet> sets;
  for (std::size_t d = 0; d < domains.names.size(); ++d) {
    const auto& toks = domains.tokens[d];
    for (TokenId t : toks) {
      if (t >= N) throw InputError("token id " + std::to_string(t) + " outside the model vocabulary");
    }
    out.stream.insert(out.stream.end(), toks.begin(), toks.end());
    sets.push_back(chunk(toks, cfg.model.seq_len + 1));
  }

  std::vector<double> weights;
  if (cfg.corpus.source == "jsonl" && !cfg.corpus.manifest.empty()) {
    weights = compute_sampling_weights(DomainManifest::load(cfg.corpus.manifest));
  } else {
    weights.assign(sets.size(), 1.0 / static_cast<double>(sets.size()));
  }

  out.stats = CorpusStats::from_stream(out.stream, N);
  out.buckets = build_frequency_buckets(out.stats);
  out.domain_names = std::move(domains.names);
  out.data = split_training_data(std::move(sets), std::move(weights), cfg.train.eval_fraction);
  bool any = false;
  for (const SequenceSet& s : out.data.train) any = any || !s.empty();
  if (!any) throw InputError("corpus is too short for a single training sequence");
  return out;
}

TrainResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data, const StepCallback& on_step) {
  return train(init_model(cfg.model), data.data, cfg.train, on_step);
}

}  // namespace mile
