#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mile/config.hpp"
#include "mile/corpus.hpp"
#include "mile/experiment.hpp"
#include "mile/model.hpp"

namespace mile {

struct BucketRow {
  std::string label;  // "high", "medium", "low" or "overall"
  std::uint64_t token_count = 0;
  double sum_ce = 0.0;
  double mean_ce = 0.0;
  /// exp(mean_ce); empty when no target token fell in the bucket.
  std::optional<double> ppl;
};

struct BucketPPLReport {
  std::vector<BucketRow> rows;  // high, medium, low
  BucketRow overall;

  const BucketRow& row(Bucket b) const { return rows.at(static_cast<std::size_t>(b)); }
};

/// Folds per-token CE values into a report; each value counts towards the
/// bucket of its target token.
class BucketAccumulator {
 public:
  explicit BucketAccumulator(const FrequencyBuckets& buckets) : buckets_(&buckets) {}
  void add(TokenId target, double ce);
  BucketPPLReport report() const;

 private:
  const FrequencyBuckets* buckets_;
  std::uint64_t counts_[kBucketCount] = {};
  double sums_[kBucketCount] = {};
};

/// Target-token CE of every predicted position, grouped by bucket.
BucketPPLReport bucketed_ppl(const ModelParams& params, const SequenceSet& sequences,
                             const FrequencyBuckets& buckets, std::size_t batch_size = 32);

struct EntropyHistogram {
  double max_entropy = 0.0;  // ln N; bins split [0, max_entropy] evenly
  std::vector<std::uint64_t> counts;

  double bin_lower(std::size_t i) const;
  double bin_upper(std::size_t i) const;
  std::uint64_t total() const;
};

/// Bin index for entropy h in n_bins equal bins over [0, max_entropy]; the
/// upper edge belongs to the last bin.
std::size_t entropy_bin(double h, double max_entropy, std::size_t n_bins);

EntropyHistogram entropy_histogram(const ModelParams& params, const SequenceSet& sequences, std::size_t n_bins,
                                   std::size_t batch_size = 32);

struct SweepRow {
  double gamma = 0.0;
  double val_ppl = 0.0;
  BucketPPLReport buckets;
  double delta_ppl = 0.0;  // val_ppl minus the gamma = 0 row
  std::vector<std::optional<double>> bucket_delta_ppl;  // per bucket, vs gamma = 0
  RunMetrics metrics;
};

struct SweepReport {
  std::uint64_t seed = 0;
  std::vector<SweepRow> rows;  // in the order the gammas were given

  const SweepRow& baseline() const;
};

/// One MiLe training run per gamma from the same initialization and data
/// order, evaluated on the held-out split. `jobs` bounds concurrent runs.
/// A failing run is rethrown with its gamma attached.
SweepReport gamma_sweep(const ExperimentConfig& base, const PreparedData& data, std::span<const double> gammas,
                        std::size_t jobs = 1);

void write_bucket_csv(std::ostream& os, const BucketPPLReport& r);
void write_bucket_table(std::ostream& os, const BucketPPLReport& r);
void write_sweep_csv(std::ostream& os, const SweepReport& r);
void write_sweep_table(std::ostream& os, const SweepReport& r);
void write_entropy_csv(std::ostream& os, const EntropyHistogram& h);

/// "<stem>_gamma<g>_seed<s>.<ext>" with g printed compactly (0.5, 1, 2).
std::string report_file_name(const std::string& stem, double gamma, std::uint64_t seed, const std::string& ext);

}  // namespace mile
