#include "mile/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "mile/error.hpp"

namespace mile {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string_view to_string(TokenizerMode mode) noexcept {
  switch (mode) {
    case TokenizerMode::kByte: return "byte";
    case TokenizerMode::kWord: return "word";
    case TokenizerMode::kSynthetic: return "synthetic";
  }
  return "?";
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "byte") return TokenizerMode::kByte;
  if (name == "word") return TokenizerMode::kWord;
  if (name == "synthetic") return TokenizerMode::kSynthetic;
  throw ConfigError("unknown tokenizer '" + std::string(name) + "' (expected byte or word)");
}

void Vocab::add(std::string surface) {
  const auto id = static_cast<TokenId>(surfaces_.size());
  auto [it, inserted] = ids_.emplace(surface, id);
  if (!inserted) throw InputError("vocab: duplicate surface '" + surface + "'");
  surfaces_.push_back(std::move(surface));
}

Vocab Vocab::bytes() {
  Vocab v;
  v.mode_ = TokenizerMode::kByte;
  for (int b = 0; b < 256; ++b) v.add(std::string(1, static_cast<char>(b)));
  return v;
}

namespace {

template <typename Fn>
void for_each_word(std::string_view text, Fn fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) fn(text.substr(start, i - start));
  }
}

}  // namespace

Vocab Vocab::words(std::span<const std::string> texts, std::size_t max_size) {
  if (max_size < 1) throw InputError("word vocab needs room for <unk>");
  std::map<std::string, std::uint64_t, std::less<>> counts;
  for (const std::string& t : texts) {
    for_each_word(t, [&](std::string_view w) { ++counts[std::string(w)]; });
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  v.mode_ = TokenizerMode::kWord;
  v.add("<unk>");
  for (auto& [word, count] : ranked) {
    if (v.size() >= max_size) break;
    if (word == "<unk>") continue;
    v.add(word);
  }
  return v;
}

Vocab Vocab::synthetic(std::size_t n) {
  Vocab v;
  v.mode_ = TokenizerMode::kSynthetic;
  for (std::size_t i = 0; i < n; ++i) v.add("t" + std::to_string(i));
  return v;
}

std::optional<TokenId> Vocab::find(std::string_view surface) const {
  auto it = ids_.find(std::string(surface));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> out;
  switch (vocab.mode()) {
    case TokenizerMode::kByte:
      out.reserve(text.size());
      for (char c : text) out.push_back(static_cast<unsigned char>(c));
      break;
    case TokenizerMode::kWord:
      for_each_word(text, [&](std::string_view w) { out.push_back(vocab.find(w).value_or(Vocab::kUnk)); });
      break;
    case TokenizerMode::kSynthetic:
      // No unknown id exists; surfaces outside the table are skipped.
      for_each_word(text, [&](std::string_view w) {
        if (auto id = vocab.find(w)) out.push_back(*id);
      });
      break;
  }
  return out;
}

std::vector<double> zipf_pmf(std::size_t vocab_size, double exponent) {
  if (vocab_size < 1) throw InputError("zipf: empty vocabulary");
  if (!(exponent > 0.0) || !std::isfinite(exponent)) throw InputError("zipf: exponent must be > 0");
  std::vector<double> p(vocab_size);
  for (std::size_t r = 0; r < vocab_size; ++r) p[r] = std::pow(static_cast<double>(r + 1), -exponent);
  // Sum from the smallest terms up.
  double h = 0.0;
  for (std::size_t r = vocab_size; r-- > 0;) h += p[r];
  for (double& x : p) x /= h;
  return p;
}

namespace {

// Inverse-CDF sampler over a fixed discrete distribution.
class DiscreteSampler {
 public:
  DiscreteSampler() = default;
  DiscreteSampler(std::vector<TokenId> values, std::span<const double> weights)
      : values_(std::move(values)), cdf_(weights.size()) {
    std::partial_sum(weights.begin(), weights.end(), cdf_.begin());
    total_ = cdf_.empty() ? 0.0 : cdf_.back();
  }

  TokenId draw(Rng& rng) const {
    const double u = rng.uniform() * total_;
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    // Rounding can leave u at the top edge; fall back to the last positive entry.
    std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    if (i >= cdf_.size()) i = cdf_.size() - 1;
    while (i > 0 && cdf_[i] == cdf_[i - 1]) --i;
    return values_[i];
  }

 private:
  std::vector<TokenId> values_;
  std::vector<double> cdf_;
  double total_ = 0.0;
};

}  // namespace

std::vector<TokenId> generate_zipf_corpus(const ZipfCorpusConfig& config) {
  if (config.vocab_size < 2) throw InputError("zipf corpus: vocab_size must be >= 2");
  if (config.markov_order != 0 && config.markov_order != 1) {
    throw InputError("zipf corpus: markov_order must be 0 or 1");
  }
  if (!(config.markov_strength >= 0.0 && config.markov_strength <= 1.0)) {
    throw InputError("zipf corpus: markov_strength must lie in [0, 1]");
  }
  if (config.group_size == 0) throw InputError("zipf corpus: group_size must be positive");
  const std::size_t n = config.vocab_size;
  const std::vector<double> pmf = zipf_pmf(n, config.exponent);
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  const DiscreteSampler unigram(ids, pmf);

  std::vector<std::size_t> group_of(n, 0);
  std::vector<DiscreteSampler> groups;
  if (config.markov_order == 1) {
    Rng perm_rng = Rng::stream(config.seed, "zipf-groups");
    std::vector<TokenId> perm = ids;
    std::shuffle(perm.begin(), perm.end(), perm_rng.engine());
    const std::size_t n_groups = std::max<std::size_t>(1, n / config.group_size);
    std::vector<std::vector<TokenId>> members(n_groups);
    for (std::size_t i = 0; i < n; ++i) members[i % n_groups].push_back(perm[i]);
    for (std::size_t g = 0; g < n_groups; ++g) {
      std::sort(members[g].begin(), members[g].end());
      std::vector<double> w;
      for (TokenId t : members[g]) {
        w.push_back(pmf[t]);
        group_of[t] = g;
      }
      groups.emplace_back(members[g], w);
    }
  }

  Rng rng = Rng::stream(config.seed, "zipf-tokens");
  std::vector<TokenId> out;
  out.reserve(config.n_tokens);
  for (std::size_t i = 0; i < config.n_tokens; ++i) {
    if (i > 0 && config.markov_order == 1 && rng.uniform() < config.markov_strength) {
      out.push_back(groups[group_of[out.back()]].draw(rng));
    } else {
      out.push_back(unigram.draw(rng));
    }
  }
  return out;
}

CorpusStats CorpusStats::from_stream(std::span<const TokenId> stream, std::size_t vocab_size) {
  CorpusStats s;
  s.counts.assign(vocab_size, 0);
  for (TokenId t : stream) {
    if (t >= vocab_size) throw InputError("corpus stats: token id " + std::to_string(t) + " outside vocabulary");
    ++s.counts[t];
  }
  s.total = stream.size();
  return s;
}

CorpusStats CorpusStats::from_counts(std::vector<std::uint64_t> counts) {
  CorpusStats s;
  s.counts = std::move(counts);
  s.total = std::accumulate(s.counts.begin(), s.counts.end(), std::uint64_t{0});
  return s;
}

std::string_view to_string(Bucket b) noexcept {
  switch (b) {
    case Bucket::kHigh: return "high";
    case Bucket::kMedium: return "medium";
    case Bucket::kLow: return "low";
  }
  return "?";
}

std::size_t FrequencyBuckets::size_of(Bucket b) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), b));
}

FrequencyBuckets build_frequency_buckets(const CorpusStats& stats, double high_coverage,
                                         double medium_coverage) {
  if (stats.counts.empty() || stats.total == 0) throw InputError("frequency buckets: empty corpus statistics");
  if (!(high_coverage > 0.0 && high_coverage <= medium_coverage && medium_coverage <= 1.0)) {
    throw InputError("frequency buckets: need 0 < high <= medium <= 1 coverage targets");
  }
  const std::size_t n = stats.counts.size();
  FrequencyBuckets b;
  b.high_coverage = high_coverage;
  b.medium_coverage = medium_coverage;
  b.order.resize(n);
  std::iota(b.order.begin(), b.order.end(), TokenId{0});
  std::stable_sort(b.order.begin(), b.order.end(),
                   [&](TokenId x, TokenId y) { return stats.counts[x] > stats.counts[y]; });
  b.assignment.assign(n, Bucket::kLow);

  // Thresholds on raw counts; the relative slack absorbs the representation
  // error of decimal targets such as 0.95.
  const double total = static_cast<double>(stats.total);
  const double high_cut = high_coverage * total * (1.0 - 1e-12);
  const double medium_cut = medium_coverage * total * (1.0 - 1e-12);
  std::uint64_t cum = 0;
  bool high_done = false, medium_done = false;
  for (TokenId t : b.order) {
    if (medium_done || stats.counts[t] == 0) break;
    cum += stats.counts[t];
    b.assignment[t] = high_done ? Bucket::kMedium : Bucket::kHigh;
    const double c = static_cast<double>(cum);
    if (!high_done && c >= high_cut) high_done = true;
    if (high_done && c >= medium_cut) medium_done = true;
  }
  return b;
}

void SequenceSet::push_back(std::span<const TokenId> seq) {
  if (seq.size() != seq_len) throw DimensionError("sequence length differs from the set's seq_len");
  tokens.insert(tokens.end(), seq.begin(), seq.end());
}

SequenceSet chunk(std::span<const TokenId> stream, std::size_t seq_len) {
  if (seq_len < 2) throw InputError("chunk: seq_len must be >= 2");
  SequenceSet s;
  s.seq_len = seq_len;
  const std::size_t count = stream.size() / seq_len;
  s.tokens.assign(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(count * seq_len));
  return s;
}

void DomainManifest::validate() const {
  bool any = false;
  for (const DomainEntry& d : domains) {
    if (!(d.epochs > 0.0) || !std::isfinite(d.epochs)) {
      throw InputError("manifest: domain '" + d.name + "' needs positive epochs");
    }
    any = any || (d.sequence_count > 0);
  }
  if (!any) throw InputError("manifest: every domain has zero sequences x epochs");
}

DomainManifest DomainManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + path + "': " + e.what());
  }
  DomainManifest m;
  try {
    for (const auto& d : j.at("domains")) {
      DomainEntry e;
      e.name = d.at("name").get<std::string>();
      const auto& count = d.at("sequence_count");
      if (!count.is_number_unsigned()) {
        throw ConfigError("manifest '" + path + "': sequence_count of '" + e.name + "' must be a non-negative integer");
      }
      e.sequence_count = count.get<std::uint64_t>();
      e.epochs = d.at("epochs").get<double>();
      m.domains.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + path + "': " + e.what());
  }
  m.validate();
  return m;
}

std::vector<double> compute_sampling_weights(const DomainManifest& manifest) {
  manifest.validate();
  std::vector<double> w;
  w.reserve(manifest.domains.size());
  double total = 0.0;
  for (const DomainEntry& d : manifest.domains) {
    w.push_back(static_cast<double>(d.sequence_count) * d.epochs);
    total += w.back();
  }
  for (double& x : w) x /= total;
  return w;
}

std::size_t sample_domain(std::span<const double> weights, Rng& rng) {
  if (weights.empty()) throw InputError("sample_domain: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InputError("sample_domain: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw InputError("sample_domain: weights sum to zero");
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cum += weights[i];
    last_positive = i;
    if (u < cum) return i;
  }
  return last_positive;
}

std::vector<Document> read_jsonl_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus '" + path + "'");
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      docs.push_back(Document{j.at("text").get<std::string>(), j.at("domain").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return docs;
}

namespace {
constexpr char kTokenMagic[5] = {'M', 'I', 'L', 'T', '1'};
}  // namespace

void write_token_cache(const std::string& path, std::span<const TokenId> stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write token cache '" + path + "'");
  out.write(kTokenMagic, sizeof kTokenMagic);
  out.write(reinterpret_cast<const char*>(stream.data()),
            static_cast<std::streamsize>(stream.size() * sizeof(TokenId)));
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<TokenId> read_token_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open token cache '" + path + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  char magic[sizeof kTokenMagic];
  if (size < sizeof magic || !in.read(magic, sizeof magic) ||
      std::memcmp(magic, kTokenMagic, sizeof magic) != 0) {
    throw IoError("'" + path + "' is not a token cache (bad magic)");
  }
  const std::size_t body = size - sizeof magic;
  if (body % sizeof(TokenId) != 0) throw IoError("'" + path + "': truncated token cache");
  std::vector<TokenId> stream(body / sizeof(TokenId));
  in.read(reinterpret_cast<char*>(stream.data()), static_cast<std::streamsize>(body));
  if (!in) throw IoError("read failed for '" + path + "'");
  return stream;
}

namespace {

std::string csv_surface(const std::string& s) {
  std::string out;
  bool quote = false;
  for (unsigned char c : s) {
    if (c < 0x20 || c == 0x7f || c >= 0x80) {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    } else {
      if (c == ',' || c == '"') quote = true;
      if (c == '"') out += '"';
      out += static_cast<char>(c);
    }
  }
  return quote ? '"' + out + '"' : out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_bucket_report(std::ostream& os, const CorpusStats& stats, const FrequencyBuckets& buckets,
                         const Vocab& vocab) {
  if (vocab.size() < stats.counts.size()) throw InputError("bucket report: vocabulary smaller than statistics");
  os << "token_id,surface,count,frequency,cum_frequency,bucket\n";
  const double total = static_cast<double>(stats.total);
  std::uint64_t cum = 0;
  for (TokenId t : buckets.order) {
    cum += stats.counts[t];
    os << t << ',' << csv_surface(vocab.surface(t)) << ',' << stats.counts[t] << ','
       << fmt_double(static_cast<double>(stats.counts[t]) / total) << ','
       << fmt_double(static_cast<double>(cum) / total) << ',' << to_string(buckets[t]) << '\n';
  }
}

}  // namespace mile
