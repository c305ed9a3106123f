#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mile/rng.hpp"

namespace mile {

using TokenId = std::uint32_t;

enum class TokenizerMode { kByte, kWord, kSynthetic };

std::string_view to_string(TokenizerMode mode) noexcept;
TokenizerMode parse_tokenizer_mode(std::string_view name);

/// Bijective id <-> surface table with ids dense in [0, size).
class Vocab {
 public:
  /// The 256 byte values; tokenization never produces an unknown id.
  static Vocab bytes();
  /// Id 0 is "<unk>", then the most frequent whitespace-separated words
  /// (ties by byte order) up to `max_size` entries in total.
  static Vocab words(std::span<const std::string> texts, std::size_t max_size);
  /// Surfaces "t0" .. "t{n-1}" for generated corpora.
  static Vocab synthetic(std::size_t n);

  TokenizerMode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return surfaces_.size(); }
  const std::string& surface(TokenId id) const { return surfaces_.at(id); }
  std::optional<TokenId> find(std::string_view surface) const;
  static constexpr TokenId kUnk = 0;

 private:
  void add(std::string surface);

  TokenizerMode mode_ = TokenizerMode::kByte;
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);

/// Unigram probabilities rank^-s / H_{N,s}, where token id r has rank r+1.
std::vector<double> zipf_pmf(std::size_t vocab_size, double exponent);

struct ZipfCorpusConfig {
  std::size_t n_tokens = 2'000'000;
  std::size_t vocab_size = 512;
  double exponent = 1.1;
  std::uint64_t seed = 0;
  /// 0: i.i.d. draws. 1: each token biases its successor towards a small
  /// group of tokens, keeping the Zipf marginal.
  int markov_order = 1;
  /// Probability that a successor is drawn from the current token's group.
  double markov_strength = 0.5;
  /// Tokens per successor group.
  std::size_t group_size = 16;
};

/// Zipf-distributed token stream. With markov_order = 1 the vocabulary is
/// split into seeded random groups; the next token is drawn from the Zipf
/// law restricted to the current token's group with probability
/// markov_strength, and from the full law otherwise. Restricting a
/// distribution to a block of a partition and averaging over the block's
/// own mass reproduces the distribution, so the unigram marginal stays
/// exactly Zipf.
std::vector<TokenId> generate_zipf_corpus(const ZipfCorpusConfig& config);

struct CorpusStats {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  static CorpusStats from_stream(std::span<const TokenId> stream, std::size_t vocab_size);
  static CorpusStats from_counts(std::vector<std::uint64_t> counts);
};

enum class Bucket : std::uint8_t { kHigh = 0, kMedium = 1, kLow = 2 };
inline constexpr std::size_t kBucketCount = 3;

std::string_view to_string(Bucket b) noexcept;

struct FrequencyBuckets {
  std::vector<Bucket> assignment;  // per token id
  std::vector<TokenId> order;  // descending count, ascending id on ties
  double high_coverage = 0.80;
  double medium_coverage = 0.95;

  Bucket operator[](TokenId id) const { return assignment.at(id); }
  std::size_t size_of(Bucket b) const;
};

/// High is the shortest prefix of the frequency order whose cumulative share
/// reaches `high_coverage`; Medium extends it to the shortest prefix reaching
/// `medium_coverage`; everything else, including unseen tokens, is Low.
FrequencyBuckets build_frequency_buckets(const CorpusStats& stats, double high_coverage = 0.80,
                                         double medium_coverage = 0.95);

/// Fixed-length sequences stored back to back.
struct SequenceSet {
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;

  std::size_t size() const noexcept { return seq_len == 0 ? 0 : tokens.size() / seq_len; }
  bool empty() const noexcept { return size() == 0; }
  std::span<const TokenId> operator[](std::size_t i) const {
    return std::span<const TokenId>(tokens).subspan(i * seq_len, seq_len);
  }
  void push_back(std::span<const TokenId> seq);
};

/// Non-overlapping windows of `seq_len`; the short tail is dropped.
SequenceSet chunk(std::span<const TokenId> stream, std::size_t seq_len);

struct DomainEntry {
  std::string name;
  std::uint64_t sequence_count = 0;
  double epochs = 1.0;
};

struct DomainManifest {
  std::vector<DomainEntry> domains;

  void validate() const;
  /// {"domains": [{"name": .., "sequence_count": .., "epochs": ..}, ...]}
  static DomainManifest load(const std::string& path);
};

/// count_d * epochs_d normalized over all domains.
std::vector<double> compute_sampling_weights(const DomainManifest& manifest);

/// Index drawn with probability proportional to `weights`.
std::size_t sample_domain(std::span<const double> weights, Rng& rng);

struct Document {
  std::string text;
  std::string domain;
};

/// One JSON object per line with string fields "text" and "domain".
std::vector<Document> read_jsonl_corpus(const std::string& path);

/// "MILT1" followed by little-endian uint32 token ids.
void write_token_cache(const std::string& path, std::span<const TokenId> stream);
std::vector<TokenId> read_token_cache(const std::string& path);

/// CSV: token_id,surface,count,frequency,cum_frequency,bucket in frequency order.
void write_bucket_report(std::ostream& os, const CorpusStats& stats, const FrequencyBuckets& buckets,
                         const Vocab& vocab);

}  // namespace mile
