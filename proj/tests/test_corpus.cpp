#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mile/corpus.hpp"
#include "mile/error.hpp"
#include "oracles.hpp"

using namespace mile;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("mile_corpus_" + name); }

std::vector<std::string> bucket_names(const FrequencyBuckets& b) {
  std::vector<std::string> out;
  for (Bucket x : b.assignment) out.emplace_back(to_string(x));
  return out;
}

}  // namespace

TEST(Tokenize, ByteModeIsOneIdPerByte) {
  const Vocab v = Vocab::bytes();
  EXPECT_TRUE(tokenize("", v).empty());
  const std::string text = "h\xc3\xa9llo\n";
  const auto ids = tokenize(text, v);
  ASSERT_EQ(ids.size(), text.size());
  for (std::size_t i = 0; i < text.size(); ++i) EXPECT_EQ(ids[i], static_cast<unsigned char>(text[i]));
}

TEST(Tokenize, WordModeHandBuiltTable) {
  const std::vector<std::string> texts{"the cat the dog", "a cat"};
  const Vocab v = Vocab::words(texts, 4);
  // counts: cat 2, the 2, a 1, dog 1; ties in byte order; "dog" does not fit.
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v.surface(0), "<unk>");
  EXPECT_EQ(v.surface(1), "cat");
  EXPECT_EQ(v.surface(2), "the");
  EXPECT_EQ(v.surface(3), "a");
  EXPECT_EQ(tokenize("the  dog\tcat a", v), (std::vector<TokenId>{2, Vocab::kUnk, 1, 3}));
  EXPECT_TRUE(tokenize("", v).empty());
}

TEST(Vocab, IsBijective) {
  const Vocab v = Vocab::synthetic(50);
  for (TokenId i = 0; i < 50; ++i) EXPECT_EQ(v.find(v.surface(i)), i);
  EXPECT_FALSE(v.find("nope").has_value());
}

TEST(Zipf, PmfIsNormalizedHarmonic) {
  const auto p = zipf_pmf(512, 1.1);
  long double h = 0.0L;
  for (int r = 1; r <= 512; ++r) h += std::pow(static_cast<long double>(r), -1.1L);
  double sum = 0.0;
  for (double x : p) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(p[0], static_cast<double>(1.0L / h), 1e-15);
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_LT(p[i], p[i - 1]);
}

TEST(Zipf, RankOneFrequencyMatchesHarmonicSum) {
  for (int order : {0, 1}) {
    ZipfCorpusConfig c;
    c.n_tokens = 1'000'000;
    c.markov_order = order;
    c.seed = 3;
    const auto stream = generate_zipf_corpus(c);
    ASSERT_EQ(stream.size(), c.n_tokens);
    long double h = 0.0L;
    for (int r = 1; r <= 512; ++r) h += std::pow(static_cast<long double>(r), -1.1L);
    const double expected = static_cast<double>(1.0L / h);
    const CorpusStats st = CorpusStats::from_stream(stream, 512);
    const double freq = static_cast<double>(st.counts[0]) / static_cast<double>(st.total);
    EXPECT_NEAR(freq, expected, 0.02 * expected) << "markov_order " << order;
  }
}

TEST(Zipf, MarginalHoldsAcrossRanks) {
  ZipfCorpusConfig c;
  c.n_tokens = 1'000'000;
  c.seed = 11;
  const auto stream = generate_zipf_corpus(c);
  const auto p = zipf_pmf(512, 1.1);
  const CorpusStats st = CorpusStats::from_stream(stream, 512);
  for (std::size_t r : {0u, 1u, 4u, 20u, 100u}) {
    const double e = p[r] * 1e6;
    EXPECT_NEAR(static_cast<double>(st.counts[r]), e, 6.0 * std::sqrt(e) + 0.01 * e) << "rank " << r + 1;
  }
}

TEST(Zipf, MarkovStructureIsLearnable) {
  // Successors of a token concentrate on its group: the conditional
  // distribution is further from the marginal than i.i.d. noise allows.
  ZipfCorpusConfig c;
  c.n_tokens = 400'000;
  c.seed = 5;
  const auto stream = generate_zipf_corpus(c);
  c.markov_order = 0;
  const auto iid = generate_zipf_corpus(c);
  auto bigram_entropy_gap = [](const std::vector<TokenId>& s) {
    std::vector<std::uint64_t> uni(512, 0), big(512 * 512, 0);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      ++uni[s[i]];
      ++big[s[i] * 512 + s[i + 1]];
    }
    // Mutual information between consecutive tokens (plug-in estimate).
    const double n = static_cast<double>(s.size() - 1);
    std::vector<double> next(512, 0);
    for (std::size_t i = 1; i < s.size(); ++i) next[s[i]] += 1;
    double mi = 0.0;
    for (std::size_t a = 0; a < 512; ++a) {
      for (std::size_t b = 0; b < 512; ++b) {
        const double c2 = static_cast<double>(big[a * 512 + b]);
        if (c2 == 0) continue;
        mi += c2 / n * std::log(c2 * n / (static_cast<double>(uni[a]) * next[b]));
      }
    }
    return mi;
  };
  EXPECT_GT(bigram_entropy_gap(stream), bigram_entropy_gap(iid) + 0.2);
}

TEST(Zipf, DeterministicPerSeedAndLargeExponentCollapses) {
  ZipfCorpusConfig c;
  c.n_tokens = 5000;
  c.seed = 9;
  EXPECT_EQ(generate_zipf_corpus(c), generate_zipf_corpus(c));
  c.seed = 10;
  const auto other = generate_zipf_corpus(c);
  c.seed = 9;
  EXPECT_NE(generate_zipf_corpus(c), other);
  c.exponent = 60.0;
  const CorpusStats st = CorpusStats::from_stream(generate_zipf_corpus(c), c.vocab_size);
  EXPECT_GT(static_cast<double>(st.counts[0]) / static_cast<double>(st.total), 0.99);
}

TEST(Zipf, InvalidConfigs) {
  ZipfCorpusConfig c;
  c.exponent = 0.0;
  EXPECT_THROW(generate_zipf_corpus(c), InputError);
  c = {};
  c.vocab_size = 1;
  EXPECT_THROW(generate_zipf_corpus(c), InputError);
}

TEST(Buckets, HandExampleBoundaryGoesToLowerBucket) {
  const FrequencyBuckets b = build_frequency_buckets(CorpusStats::from_counts({50, 30, 15, 5}));
  EXPECT_EQ(bucket_names(b), (std::vector<std::string>{"high", "high", "medium", "low"}));
  EXPECT_EQ(b.size_of(Bucket::kHigh), 2u);
  EXPECT_EQ(b.size_of(Bucket::kMedium), 1u);
  EXPECT_EQ(b.size_of(Bucket::kLow), 1u);
}

TEST(Buckets, SingleToken) {
  const FrequencyBuckets b = build_frequency_buckets(CorpusStats::from_counts({7}));
  EXPECT_EQ(b[0], Bucket::kHigh);
  EXPECT_EQ(b.size_of(Bucket::kMedium), 0u);
  EXPECT_EQ(b.size_of(Bucket::kLow), 0u);
}

TEST(Buckets, EmptyStatsIsInputError) {
  EXPECT_THROW(build_frequency_buckets(CorpusStats::from_counts({0, 0})), InputError);
  EXPECT_THROW(build_frequency_buckets(CorpusStats::from_counts({})), InputError);
}

TEST(Buckets, MatchesExhaustivePrefixScan) {
  oracle::Gen g(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + g.below(100);
    std::vector<std::uint64_t> counts(n);
    for (auto& c : counts) c = g.below(4) == 0 ? 0 : g.below(trial % 2 ? 10 : 100000);
    if (std::all_of(counts.begin(), counts.end(), [](auto c) { return c == 0; })) counts[0] = 1;
    const FrequencyBuckets b = build_frequency_buckets(CorpusStats::from_counts(counts));
    const auto ref = oracle::buckets(counts, 80, 95);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(static_cast<int>(b[static_cast<TokenId>(i)]), ref[i]) << "token " << i;
  }
}

TEST(Buckets, PrefixMinimalityAndScaleInvariance) {
  oracle::Gen g(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> counts(60);
    for (auto& c : counts) c = 1 + g.below(1000);
    const FrequencyBuckets b = build_frequency_buckets(CorpusStats::from_counts(counts));
    // High, then Medium, then Low along the order.
    int last = 0;
    double cum_high = 0.0, total = 0.0, least_high = 0.0;
    for (auto c : counts) total += static_cast<double>(c);
    for (TokenId id : b.order) {
      const int cur = static_cast<int>(b[id]);
      EXPECT_GE(cur, last);
      last = cur;
      if (b[id] == Bucket::kHigh) {
        cum_high += static_cast<double>(counts[id]);
        least_high = static_cast<double>(counts[id]);
      }
    }
    EXPECT_GE(cum_high / total, 0.80);
    EXPECT_LT((cum_high - least_high) / total, 0.80);
    std::vector<std::uint64_t> scaled = counts;
    for (auto& c : scaled) c *= 7;
    EXPECT_EQ(build_frequency_buckets(CorpusStats::from_counts(scaled)).assignment, b.assignment);
  }
}

TEST(Buckets, ZeroCountTokensAreLow) {
  const FrequencyBuckets b = build_frequency_buckets(CorpusStats::from_counts({10, 0, 5, 0}));
  EXPECT_EQ(b[1], Bucket::kLow);
  EXPECT_EQ(b[3], Bucket::kLow);
}

TEST(Chunk, DropsTailAndIsLossless) {
  std::vector<TokenId> s(10);
  std::iota(s.begin(), s.end(), 0u);
  const SequenceSet c = chunk(s, 4);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.tokens, std::vector<TokenId>(s.begin(), s.begin() + 8));
  EXPECT_TRUE(chunk(std::vector<TokenId>(3, 1), 4).empty());
  EXPECT_THROW(chunk(s, 1), InputError);
  oracle::Gen g(3);
  for (int i = 0; i < 50; ++i) {
    const std::size_t len = g.below(200), L = 2 + g.below(20);
    EXPECT_EQ(chunk(std::vector<TokenId>(len, 0), L).size(), len / L);
  }
}

TEST(Weights, HandExample) {
  DomainManifest m{{{"a", 100, 2.0}, {"b", 50, 1.0}}};
  const auto w = compute_sampling_weights(m);
  EXPECT_NEAR(w[0], 0.8, 1e-12);
  EXPECT_NEAR(w[1], 0.2, 1e-12);
  DomainManifest one{{{"only", 3, 0.5}}};
  EXPECT_EQ(compute_sampling_weights(one), std::vector<double>{1.0});
}

TEST(Weights, TwentyTwoDomainsAgainstExactFractions) {
  using boost::multiprecision::cpp_rational;
  oracle::Gen g(4);
  for (int trial = 0; trial < 20; ++trial) {
    DomainManifest m;
    std::vector<cpp_rational> prod;
    cpp_rational total = 0;
    for (int d = 0; d < 22; ++d) {
      const std::uint64_t count = g.below(5'000'000);
      const std::uint64_t num = 1 + g.below(1024);  // epochs = num / 256, exact in binary
      m.domains.push_back({"d" + std::to_string(d), count, static_cast<double>(num) / 256.0});
      prod.emplace_back(cpp_rational(count) * cpp_rational(num, 256));
      total += prod.back();
    }
    const auto w = compute_sampling_weights(m);
    double sum = 0.0;
    for (int d = 0; d < 22; ++d) {
      EXPECT_NEAR(w[d], static_cast<double>(prod[d] / total), 1e-12);
      sum += w[d];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    DomainManifest scaled = m;
    for (auto& e : scaled.domains) e.epochs *= 3.0;
    const auto w3 = compute_sampling_weights(scaled);
    for (int d = 0; d < 22; ++d) EXPECT_NEAR(w3[d], w[d], 1e-15);
  }
}

TEST(Weights, InvalidManifests) {
  EXPECT_THROW(compute_sampling_weights(DomainManifest{{{"a", 0, 1.0}}}), InputError);
  EXPECT_THROW(compute_sampling_weights(DomainManifest{{{"a", 5, 0.0}}}), InputError);
  EXPECT_THROW(compute_sampling_weights(DomainManifest{}), InputError);
}

TEST(Weights, ManifestFromJson) {
  const auto p = temp_file("manifest.json");
  {
    std::ofstream os(p);
    os << R"({"domains": [{"name": "web", "sequence_count": 100, "epochs": 2.0},
                          {"name": "code", "sequence_count": 50, "epochs": 1.0}]})";
  }
  const auto w = compute_sampling_weights(DomainManifest::load(p.string()));
  EXPECT_NEAR(w[0], 0.8, 1e-12);
  {
    std::ofstream os(p);
    os << R"({"domains": [{"name": "web", "sequence_count": -1, "epochs": 2.0}]})";
  }
  EXPECT_THROW(DomainManifest::load(p.string()), ConfigError);
  fs::remove(p);
}

TEST(SampleDomain, Frequencies) {
  Rng rng(5);
  const std::vector<double> one{1.0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_domain(one, rng), 0u);
  const std::vector<double> half{0.5, 0.5};
  std::size_t zeros = 0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) zeros += sample_domain(half, rng) == 0;
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 0.002);
  const std::vector<double> with_zero{0.3, 0.0, 0.7};
  for (int i = 0; i < 100000; ++i) EXPECT_NE(sample_domain(with_zero, rng), 1u);
  Rng a(8), b(8);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_domain(with_zero, a), sample_domain(with_zero, b));
}

TEST(Files, TokenCacheRoundTrip) {
  const auto p = temp_file("tokens.milt");
  const std::vector<TokenId> s{0, 1, 70000, 4294967295u, 5};
  write_token_cache(p.string(), s);
  EXPECT_EQ(read_token_cache(p.string()), s);
  {
    std::ifstream in(p, std::ios::binary);
    char magic[5];
    in.read(magic, 5);
    EXPECT_EQ(std::string(magic, 5), "MILT1");
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    in.read(reinterpret_cast<char*>(b), 4);
    EXPECT_EQ(b[0], 1);  // little-endian
    EXPECT_EQ(b[3], 0);
  }
  {
    std::ofstream os(p, std::ios::binary);
    os << "MILT1abc";  // truncated id
  }
  EXPECT_THROW(read_token_cache(p.string()), IoError);
  fs::remove(p);
}

TEST(Files, JsonlCorpus) {
  const auto p = temp_file("docs.jsonl");
  {
    std::ofstream os(p);
    os << R"({"text": "hello world", "domain": "web"})" << "\n\n" << R"({"text": "x", "domain": "code"})" << "\n";
  }
  const auto docs = read_jsonl_corpus(p.string());
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].text, "hello world");
  EXPECT_EQ(docs[1].domain, "code");
  {
    std::ofstream os(p);
    os << R"({"text": 3, "domain": "web"})" << "\n";
  }
  EXPECT_THROW(read_jsonl_corpus(p.string()), InputError);
  fs::remove(p);
}

TEST(Files, BucketReport) {
  const CorpusStats st = CorpusStats::from_counts({50, 30, 15, 5});
  const FrequencyBuckets b = build_frequency_buckets(st);
  const Vocab v = Vocab::synthetic(4);
  std::ostringstream os;
  write_bucket_report(os, st, b, v);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "token_id,surface,count,frequency,cum_frequency,bucket");
  std::getline(in, line);
  EXPECT_EQ(line, "0,t0,50,0.5,0.5,high");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
}
