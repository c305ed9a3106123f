#include "mile/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>

#include "mile/checkpoint.hpp"
#include "mile/config.hpp"
#include "mile/error.hpp"

namespace mile {

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("train.peak_lr must be positive");
  if (total_steps > 0 && warmup_steps >= total_steps) {
    throw ConfigError("train.warmup_steps must be smaller than train.total_steps");
  }
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train.adam_beta1/adam_beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("train.eval_fraction must lie in [0, 1)");
  loss.validate();
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step > c.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(c.total_steps));
  }
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (step == c.warmup_steps) return c.peak_lr;
  const double progress =
      static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.total_steps - c.warmup_steps);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return c.peak_lr * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * cosine);
}

OptimizerState OptimizerState::zeros_like(std::span<const Tensor> params) {
  OptimizerState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adamw_step(std::span<Tensor> params, OptimizerState& state, double lr, const TrainConfig& c) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw DimensionError("adamw: moment shape differs from parameter " + std::to_string(i));
    }
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
  const double decay = 1.0 - lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      p[j] *= decay;
      m[j] = c.adam_beta1 * m[j] + (1.0 - c.adam_beta1) * gj;
      v[j] = c.adam_beta2 * v[j] + (1.0 - c.adam_beta2) * gj * gj;
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.adam_eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double ss = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.grad_mut()) g *= s;
    }
  }
  return norm;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunMetrics::write_csv(std::ostream& os) const {
  os << "step,lr,loss,ce,grad_norm,val_ppl\n";
  for (const StepMetrics& s : steps) {
    os << s.step << ',' << fmt(s.lr) << ',' << fmt(s.loss) << ',' << fmt(s.ce) << ',' << fmt(s.grad_norm) << ',';
    if (s.val_ppl) os << fmt(*s.val_ppl);
    os << '\n';
  }
}

void RunMetrics::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metrics '" + path + "'");
  write_csv(os);
  if (!os) throw IoError("write failed for '" + path + "'");
}

TrainingData split_training_data(std::vector<SequenceSet> domains, std::vector<double> domain_weights,
                                 double eval_fraction) {
  if (domains.empty()) throw InputError("training data: no domains");
  if (domain_weights.size() != domains.size()) throw InputError("training data: one weight per domain required");
  TrainingData out;
  out.eval.seq_len = domains.front().seq_len;
  for (SequenceSet& d : domains) {
    if (d.seq_len != out.eval.seq_len) throw InputError("training data: domains differ in seq_len");
    const std::size_t n = d.size();
    std::size_t n_eval = 0;
    if (eval_fraction > 0.0 && n >= 2) {
      n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * eval_fraction)));
    }
    SequenceSet train;
    train.seq_len = d.seq_len;
    train.tokens.assign(d.tokens.begin(), d.tokens.begin() + static_cast<std::ptrdiff_t>((n - n_eval) * d.seq_len));
    out.eval.tokens.insert(out.eval.tokens.end(),
                           d.tokens.begin() + static_cast<std::ptrdiff_t>((n - n_eval) * d.seq_len),
                           d.tokens.begin() + static_cast<std::ptrdiff_t>(n * d.seq_len));
    out.train.push_back(std::move(train));
  }
  out.domain_weights = std::move(domain_weights);
  return out;
}

BatchSampler::BatchSampler(const TrainingData& data, std::uint64_t seed)
    : data_(&data),
      data_rng_(Rng::stream(seed, "data")),
      domain_rng_(Rng::stream(seed, "domain-sampling")) {
  bool any = false;
  for (std::size_t d = 0; d < data.train.size(); ++d) {
    Cursor c;
    c.order.resize(data.train[d].size());
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    std::shuffle(c.order.begin(), c.order.end(), data_rng_.engine());
    any = any || (!c.order.empty() && data.domain_weights[d] > 0.0);
    cursors_.push_back(std::move(c));
  }
  if (!any) throw InputError("no training sequences in any domain with positive weight");
}

std::vector<TokenId> BatchSampler::next(std::size_t batch) {
  std::vector<double> weights = data_->domain_weights;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    if (cursors_[d].order.empty()) weights[d] = 0.0;
  }
  const std::size_t seq_len = data_->train.front().seq_len;
  std::vector<TokenId> out;
  out.reserve(batch * seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t d = weights.size() == 1 ? 0 : sample_domain(weights, domain_rng_);
    Cursor& c = cursors_[d];
    if (c.pos == c.order.size()) {
      std::shuffle(c.order.begin(), c.order.end(), data_rng_.engine());
      c.pos = 0;
    }
    auto seq = data_->train[d][c.order[c.pos++]];
    out.insert(out.end(), seq.begin(), seq.end());
  }
  return out;
}

LmBatch make_lm_batch(std::span<const TokenId> sequences, std::size_t n_sequences, std::size_t seq_len) {
  if (seq_len < 2) throw InputError("language-model batch needs sequences of length >= 2");
  if (sequences.size() != n_sequences * seq_len) throw DimensionError("batch tokens do not match n x seq_len");
  LmBatch b;
  const std::size_t T = seq_len - 1;
  b.inputs.batch = n_sequences;
  b.inputs.seq = T;
  b.inputs.ids.resize(n_sequences * T);
  b.targets.resize(n_sequences * T);
  b.mask.assign(n_sequences * T, 1);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      b.inputs.ids[s * T + t] = static_cast<std::int32_t>(sequences[s * seq_len + t]);
      b.targets[s * T + t] = static_cast<std::int32_t>(sequences[s * seq_len + t + 1]);
    }
  }
  return b;
}

TrainResult train(const ModelParams& init, const TrainingData& data, const TrainConfig& config,
                  const StepCallback& on_step) {
  config.validate();
  TrainResult result;
  result.params = init.clone();
  std::vector<Tensor> params = result.params.parameters();
  for (Tensor& p : params) p.set_requires_grad(true);
  result.optimizer = OptimizerState::zeros_like(params);
  if (config.total_steps == 0) return result;

  BatchSampler sampler(data, config.seed);
  const std::size_t seq_len = data.train.front().seq_len;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    try {
      const std::vector<TokenId> seqs = sampler.next(config.batch_size);
      const LmBatch batch = make_lm_batch(seqs, config.batch_size, seq_len);
      result.params.zero_grad();
      BatchLossStats stats;
      {
        Graph graph;
        Graph::Scope scope(graph);
        Tensor logits = forward(result.params, batch.inputs);
        Tensor loss = batch_loss(logits, batch.targets, batch.mask, config.loss, &stats);
        graph.backward(loss);
      }
      StepMetrics m;
      m.step = step;
      m.grad_norm = clip_grad_norm(params, config.grad_clip);
      m.lr = lr_at(step, config);
      adamw_step(params, result.optimizer, m.lr, config);
      m.loss = stats.mean_loss;
      m.ce = stats.mean_ce;
      const bool eval_now = step == config.total_steps ||
                            (config.eval_interval > 0 && step % config.eval_interval == 0);
      if (eval_now && !data.eval.empty()) {
        m.val_ppl = evaluate_ppl(result.params, data.eval, config.batch_size, config.eval_max_sequences);
      }
      result.metrics.steps.push_back(m);
      if (on_step && !on_step(m)) break;
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

void visit_predictions(const ModelParams& params, const SequenceSet& sequences, std::size_t batch_size,
                       const PredictionVisitor& fn, std::size_t max_sequences) {
  if (batch_size == 0) throw InputError("evaluation batch size must be positive");
  NoGradScope no_grad;
  std::size_t n = sequences.size();
  if (max_sequences > 0) n = std::min(n, max_sequences);
  const std::size_t L = sequences.seq_len;
  const std::size_t N = params.config.vocab_size;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    std::span<const TokenId> slice(sequences.tokens.data() + start * L, count * L);
    const LmBatch batch = make_lm_batch(slice, count, L);
    const Tensor logits = forward(params, batch.inputs);
    const std::size_t T = L - 1;
    for (std::size_t s = 0; s < count; ++s) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t row = s * T + t;
        fn(start + s, t, static_cast<TokenId>(batch.targets[row]), logits.data().subspan(row * N, N));
      }
    }
  }
}

double evaluate_ppl(const ModelParams& params, const SequenceSet& sequences, std::size_t batch_size,
                    std::size_t max_sequences) {
  if (sequences.empty()) throw InputError("evaluate_ppl: empty evaluation set");
  double total = 0.0;
  std::size_t count = 0;
  visit_predictions(
      params, sequences, batch_size,
      [&](std::size_t, std::size_t, TokenId target, std::span<const double> logits) {
        total += ce_loss(logits, target).value;
        ++count;
      },
      max_sequences);
  return std::exp(total / static_cast<double>(count));
}

namespace {

std::vector<NamedTensor> model_tensors(const ModelParams& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params.named_parameters()) {
    auto d = t.data();
    out.push_back({name, t.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

ModelParams params_from_file(const CheckpointFile& file, const std::string& path) {
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(file.config_json));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "': bad config: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path + "': " + e.what());
  }
  ModelParams params = init_model(config);
  auto named = params.named_parameters();
  if (named.size() != file.tensors.size()) {
    throw IoError("checkpoint '" + path + "': expected " + std::to_string(named.size()) + " tensors, found " +
                  std::to_string(file.tensors.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const NamedTensor& src = file.tensors[i];
    Tensor& dst = named[i].second;
    if (src.name != named[i].first) {
      throw IoError("checkpoint '" + path + "': tensor " + std::to_string(i) + " is '" + src.name + "', expected '" +
                    named[i].first + "'");
    }
    if (src.shape != dst.shape() || src.values.size() != dst.numel()) {
      throw IoError("checkpoint '" + path + "': shape mismatch for '" + src.name + "'");
    }
    std::copy(src.values.begin(), src.values.end(), dst.data().begin());
  }
  return params;
}

}  // namespace

void save_model(const ModelParams& params, const std::string& path) {
  CheckpointFile file;
  file.config_json = to_json(params.config).dump();
  file.tensors = model_tensors(params);
  write_checkpoint_file(path, file);
}

ModelParams load_model(const std::string& path) { return params_from_file(read_checkpoint_file(path), path); }

void save_checkpoint(const std::string& path, const ModelParams& params, const OptimizerState& optimizer) {
  CheckpointFile file;
  file.config_json = to_json(params.config).dump();
  file.tensors = model_tensors(params);
  if (optimizer.m.size() != file.tensors.size() || optimizer.v.size() != file.tensors.size()) {
    throw DimensionError("save_checkpoint: optimizer state does not match the model");
  }
  file.optimizer_step = optimizer.step;
  for (std::size_t i = 0; i < file.tensors.size(); ++i) {
    const NamedTensor& t = file.tensors[i];
    file.optimizer_tensors.push_back({"m/" + t.name, t.shape, optimizer.m[i]});
  }
  for (std::size_t i = 0; i < file.tensors.size(); ++i) {
    const NamedTensor& t = file.tensors[i];
    file.optimizer_tensors.push_back({"v/" + t.name, t.shape, optimizer.v[i]});
  }
  write_checkpoint_file(path, file);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const CheckpointFile file = read_checkpoint_file(path);
  LoadedCheckpoint out{params_from_file(file, path), std::nullopt};
  if (file.optimizer_step) {
    const std::size_t n = file.tensors.size();
    if (file.optimizer_tensors.size() != 2 * n) throw IoError("checkpoint '" + path + "': incomplete optimizer state");
    OptimizerState s;
    s.step = *file.optimizer_step;
    for (std::size_t i = 0; i < 2 * n; ++i) {
      const NamedTensor& t = file.optimizer_tensors[i];
      const std::string expected = (i < n ? "m/" : "v/") + file.tensors[i % n].name;
      if (t.name != expected || t.values.size() != file.tensors[i % n].values.size()) {
        throw IoError("checkpoint '" + path + "': unexpected optimizer tensor '" + t.name + "'");
      }
      (i < n ? s.m : s.v).push_back(t.values);
    }
    out.optimizer = std::move(s);
  }
  return out;
}

}  // namespace mile
