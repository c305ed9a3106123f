#include "mile/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <future>
#include <ostream>

#include "mile/error.hpp"
#include "mile/losses.hpp"
#include "mile/trainer.hpp"

namespace mile {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int prec) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

BucketRow make_row(std::string label, std::uint64_t n, double sum) {
  BucketRow r;
  r.label = std::move(label);
  r.token_count = n;
  r.sum_ce = sum;
  if (n > 0) {
    r.mean_ce = sum / static_cast<double>(n);
    r.ppl = std::exp(r.mean_ce);
  }
  return r;
}

}  // namespace

void BucketAccumulator::add(TokenId target, double ce) {
  const auto b = static_cast<std::size_t>((*buckets_)[target]);
  ++counts_[b];
  sums_[b] += ce;
}

BucketPPLReport BucketAccumulator::report() const {
  BucketPPLReport r;
  std::uint64_t n = 0;
  double sum = 0.0;
  for (std::size_t b = 0; b < kBucketCount; ++b) {
    r.rows.push_back(make_row(std::string(to_string(static_cast<Bucket>(b))), counts_[b], sums_[b]));
    n += counts_[b];
    sum += sums_[b];
  }
  r.overall = make_row("overall", n, sum);
  return r;
}

BucketPPLReport bucketed_ppl(const ModelParams& params, const SequenceSet& sequences,
                             const FrequencyBuckets& buckets, std::size_t batch_size) {
  if (buckets.assignment.size() != params.config.vocab_size) {
    throw DimensionError("bucket table covers " + std::to_string(buckets.assignment.size()) +
                         " tokens, model vocabulary is " + std::to_string(params.config.vocab_size));
  }
  BucketAccumulator acc(buckets);
  visit_predictions(params, sequences, batch_size,
                    [&](std::size_t, std::size_t, TokenId target, std::span<const double> logits) {
                      acc.add(target, ce_loss(logits, target).value);
                    });
  return acc.report();
}

double EntropyHistogram::bin_lower(std::size_t i) const {
  return max_entropy * static_cast<double>(i) / static_cast<double>(counts.size());
}

double EntropyHistogram::bin_upper(std::size_t i) const {
  return i + 1 == counts.size() ? max_entropy
                                : max_entropy * static_cast<double>(i + 1) / static_cast<double>(counts.size());
}

std::uint64_t EntropyHistogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::size_t entropy_bin(double h, double max_entropy, std::size_t n_bins) {
  if (n_bins == 0) throw InputError("entropy histogram needs at least one bin");
  if (!(max_entropy > 0.0)) return 0;
  const double x = std::clamp(h / max_entropy, 0.0, 1.0) * static_cast<double>(n_bins);
  return std::min(static_cast<std::size_t>(x), n_bins - 1);
}

EntropyHistogram entropy_histogram(const ModelParams& params, const SequenceSet& sequences, std::size_t n_bins,
                                   std::size_t batch_size) {
  if (n_bins == 0) throw InputError("entropy histogram needs at least one bin");
  EntropyHistogram h;
  h.max_entropy = std::log(static_cast<double>(params.config.vocab_size));
  h.counts.assign(n_bins, 0);
  visit_predictions(params, sequences, batch_size,
                    [&](std::size_t, std::size_t, TokenId, std::span<const double> logits) {
                      const double e = entropy(ProbDist::from_logits(logits));
                      ++h.counts[entropy_bin(e, h.max_entropy, n_bins)];
                    });
  return h;
}

const SweepRow& SweepReport::baseline() const {
  for (const SweepRow& r : rows) {
    if (r.gamma == 0.0) return r;
  }
  throw ContractError("sweep report has no gamma = 0 row");
}

SweepReport gamma_sweep(const ExperimentConfig& base, const PreparedData& data, std::span<const double> gammas,
                        std::size_t jobs) {
  if (std::find(gammas.begin(), gammas.end(), 0.0) == gammas.end()) {
    throw InputError("gamma sweep must include gamma = 0");
  }
  if (data.data.eval.empty()) throw InputError("gamma sweep needs a non-empty evaluation split");
  jobs = std::max<std::size_t>(jobs, 1);

  auto run_one = [&](double gamma) {
    ExperimentConfig cfg = base;
    cfg.train.loss.kind = LossKind::kMiLe;
    cfg.train.loss.gamma = gamma;
    SweepRow row;
    row.gamma = gamma;
    try {
      cfg.validate();
      TrainResult res = run_experiment(cfg, data);
      row.val_ppl = evaluate_ppl(res.params, data.data.eval, cfg.train.batch_size);
      row.buckets = bucketed_ppl(res.params, data.data.eval, data.buckets, cfg.train.batch_size);
      row.metrics = std::move(res.metrics);
    } catch (const Error& e) {
      const std::string msg = "gamma " + fmt(gamma) + ": " + e.what();
      switch (e.kind()) {
        case ErrorKind::kNumeric: throw NumericError(msg);
        case ErrorKind::kConfig: throw ConfigError(msg);
        case ErrorKind::kIo: throw IoError(msg);
        case ErrorKind::kInput: throw InputError(msg);
        default: throw ContractError(msg);
      }
    }
    return row;
  };

  SweepReport report;
  report.seed = base.train.seed;
  report.rows.resize(gammas.size());
  for (std::size_t start = 0; start < gammas.size(); start += jobs) {
    const std::size_t end = std::min(gammas.size(), start + jobs);
    if (jobs == 1) {
      report.rows[start] = run_one(gammas[start]);
      continue;
    }
    std::vector<std::future<SweepRow>> futures;
    for (std::size_t i = start; i < end; ++i) futures.push_back(std::async(std::launch::async, run_one, gammas[i]));
    std::exception_ptr first;
    for (std::size_t i = start; i < end; ++i) {
      try {
        report.rows[i] = futures[i - start].get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
  }

  const SweepRow& b = report.baseline();
  const double base_ppl = b.val_ppl;
  const BucketPPLReport base_buckets = b.buckets;
  for (SweepRow& r : report.rows) {
    r.delta_ppl = r.val_ppl - base_ppl;
    r.bucket_delta_ppl.clear();
    for (std::size_t k = 0; k < kBucketCount; ++k) {
      const auto& x = r.buckets.rows[k].ppl;
      const auto& y = base_buckets.rows[k].ppl;
      r.bucket_delta_ppl.push_back(x && y ? std::optional<double>(*x - *y) : std::nullopt);
    }
  }
  return report;
}

void write_bucket_csv(std::ostream& os, const BucketPPLReport& r) {
  os << "bucket,token_count,mean_ce,ppl\n";
  auto line = [&](const BucketRow& row) {
    os << row.label << ',' << row.token_count << ',';
    if (row.token_count > 0) os << fmt(row.mean_ce);
    os << ',';
    if (row.ppl) os << fmt(*row.ppl);
    os << '\n';
  };
  for (const BucketRow& row : r.rows) line(row);
  line(r.overall);
}

void write_bucket_table(std::ostream& os, const BucketPPLReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %12s %10s %12s\n", "bucket", "tokens", "mean_ce", "ppl");
  os << buf;
  auto line = [&](const BucketRow& row) {
    std::snprintf(buf, sizeof buf, "%-8s %12llu %10s %12s\n", row.label.c_str(),
                  static_cast<unsigned long long>(row.token_count),
                  row.token_count ? fixed(row.mean_ce, 4).c_str() : "-", row.ppl ? fixed(*row.ppl, 3).c_str() : "-");
    os << buf;
  };
  for (const BucketRow& row : r.rows) line(row);
  line(r.overall);
}

void write_sweep_csv(std::ostream& os, const SweepReport& r) {
  os << "gamma,seed,val_ppl,delta_ppl,ppl_high,ppl_medium,ppl_low,delta_high,delta_medium,delta_low\n";
  for (const SweepRow& row : r.rows) {
    os << fmt(row.gamma) << ',' << r.seed << ',' << fmt(row.val_ppl) << ',' << fmt(row.delta_ppl);
    for (const BucketRow& b : row.buckets.rows) {
      os << ',';
      if (b.ppl) os << fmt(*b.ppl);
    }
    for (const auto& d : row.bucket_delta_ppl) {
      os << ',';
      if (d) os << fmt(*d);
    }
    os << '\n';
  }
}

void write_sweep_table(std::ostream& os, const SweepReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-7s %10s %9s %10s %10s %10s\n", "gamma", "val_ppl", "delta", "high", "medium",
                "low");
  os << buf;
  for (const SweepRow& row : r.rows) {
    std::string cells[kBucketCount];
    for (std::size_t k = 0; k < kBucketCount; ++k) {
      const auto& p = row.buckets.rows.size() > k ? row.buckets.rows[k].ppl : std::nullopt;
      cells[k] = p ? fixed(*p, 3) : "-";
    }
    std::snprintf(buf, sizeof buf, "%-7s %10s %+9.3f %10s %10s %10s\n", fmt(row.gamma).c_str(),
                  fixed(row.val_ppl, 3).c_str(), row.delta_ppl, cells[0].c_str(), cells[1].c_str(),
                  cells[2].c_str());
    os << buf;
  }
}

void write_entropy_csv(std::ostream& os, const EntropyHistogram& h) {
  os << "bin,lower,upper,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << i << ',' << fmt(h.bin_lower(i)) << ',' << fmt(h.bin_upper(i)) << ',' << h.counts[i] << '\n';
  }
}

std::string report_file_name(const std::string& stem, double gamma, std::uint64_t seed, const std::string& ext) {
  char g[32];
  std::snprintf(g, sizeof g, "%g", gamma);
  return stem + "_gamma" + g + "_seed" + std::to_string(seed) + "." + ext;
}

}  // namespace mile
