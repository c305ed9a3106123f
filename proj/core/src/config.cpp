#include "mile/config.hpp"

#include <fstream>

#include "mile/error.hpp"

namespace mile {

using nlohmann::json;

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (corpus.source == "zipf") {
    if (corpus.zipf.n_tokens == 0) throw ConfigError("corpus.zipf.n_tokens must be positive");
    if (!(corpus.zipf.exponent > 0.0)) throw ConfigError("corpus.zipf.exponent must be > 0");
    if (model.vocab_size < 2) throw ConfigError("zipf corpus needs model.vocab_size >= 2");
  } else if (corpus.source == "jsonl" || corpus.source == "tokens") {
    if (corpus.path.empty()) throw ConfigError("corpus.path is required for source '" + corpus.source + "'");
    if (corpus.source == "jsonl") {
      const TokenizerMode mode = parse_tokenizer_mode(corpus.tokenizer);
      if (mode == TokenizerMode::kByte && model.vocab_size < 256) {
        throw ConfigError("byte tokenizer needs model.vocab_size >= 256");
      }
    }
  } else {
    throw ConfigError("corpus.source must be zipf, jsonl or tokens");
  }
}

json to_json(const ModelConfig& c) {
  return json{{"dim", c.dim},
              {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},
              {"vocab_size", c.vocab_size},
              {"seq_len", c.seq_len},
              {"seed", c.seed},
              {"ffn_hidden", c.ffn_hidden},
              {"rotary", c.rotary},
              {"activation", std::string(to_string(c.activation))},
              {"tie_embeddings", c.tie_embeddings},
              {"norm_eps", c.norm_eps}};
}

json to_json(const LossSpec& s) {
  return json{{"kind", std::string(to_string(s.kind))},
              {"gamma", s.gamma},
              {"factor_grad", std::string(to_string(s.factor_grad))}};
}

namespace {

json train_to_json(const TrainConfig& t) {
  return json{{"peak_lr", t.peak_lr},
              {"warmup_steps", t.warmup_steps},
              {"total_steps", t.total_steps},
              {"min_lr_ratio", t.min_lr_ratio},
              {"batch_size", t.batch_size},
              {"weight_decay", t.weight_decay},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"grad_clip", t.grad_clip},
              {"eval_interval", t.eval_interval},
              {"eval_max_sequences", t.eval_max_sequences},
              {"eval_fraction", t.eval_fraction},
              {"seed", t.seed}};
}

json corpus_to_json(const CorpusConfig& c) {
  return json{{"source", c.source},
              {"path", c.path},
              {"tokenizer", c.tokenizer},
              {"manifest", c.manifest},
              {"zipf",
               {{"n_tokens", c.zipf.n_tokens},
                {"exponent", c.zipf.exponent},
                {"seed", c.zipf.seed},
                {"markov_order", c.zipf.markov_order},
                {"markov_strength", c.zipf.markov_strength},
                {"group_size", c.zipf.group_size}}}};
}

bool compatible(const json& base, const json& value) {
  if (base.is_boolean()) return value.is_boolean();
  if (base.is_string()) return value.is_string();
  if (base.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return value.is_number_integer();
  if (base.is_number_float()) return value.is_number();
  return false;
}

// Overlays `patch` onto `base`, rejecting fields the defaults do not have.
void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config field '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("config field '" + key + "' has the wrong type: " + it.value().dump());
    } else {
      slot = it.value();
    }
  }
}

json defaults() { return to_json(ExperimentConfig{}); }

}  // namespace

json to_json(const ExperimentConfig& c) {
  return json{{"model", to_json(c.model)},
              {"train", train_to_json(c.train)},
              {"loss", to_json(c.train.loss)},
              {"corpus", corpus_to_json(c.corpus)}};
}

ModelConfig model_config_from_json(const json& doc) {
  json full = to_json(ModelConfig{});
  merge_strict(full, doc, "model");
  ModelConfig c;
  c.dim = full.at("dim").get<std::size_t>();
  c.n_heads = full.at("n_heads").get<std::size_t>();
  c.n_layers = full.at("n_layers").get<std::size_t>();
  c.vocab_size = full.at("vocab_size").get<std::size_t>();
  c.seq_len = full.at("seq_len").get<std::size_t>();
  c.seed = full.at("seed").get<std::uint64_t>();
  c.ffn_hidden = full.at("ffn_hidden").get<std::size_t>();
  c.rotary = full.at("rotary").get<bool>();
  c.activation = parse_activation(full.at("activation").get<std::string>());
  c.tie_embeddings = full.at("tie_embeddings").get<bool>();
  c.norm_eps = full.at("norm_eps").get<double>();
  return c;
}

ExperimentConfig experiment_from_json(const json& doc) {
  json full = defaults();
  merge_strict(full, doc, "");
  ExperimentConfig c;
  c.model = model_config_from_json(full.at("model"));

  const json& t = full.at("train");
  c.train.peak_lr = t.at("peak_lr").get<double>();
  c.train.warmup_steps = t.at("warmup_steps").get<std::size_t>();
  c.train.total_steps = t.at("total_steps").get<std::size_t>();
  c.train.min_lr_ratio = t.at("min_lr_ratio").get<double>();
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.weight_decay = t.at("weight_decay").get<double>();
  c.train.adam_beta1 = t.at("adam_beta1").get<double>();
  c.train.adam_beta2 = t.at("adam_beta2").get<double>();
  c.train.adam_eps = t.at("adam_eps").get<double>();
  c.train.grad_clip = t.at("grad_clip").get<double>();
  c.train.eval_interval = t.at("eval_interval").get<std::size_t>();
  c.train.eval_max_sequences = t.at("eval_max_sequences").get<std::size_t>();
  c.train.eval_fraction = t.at("eval_fraction").get<double>();
  c.train.seed = t.at("seed").get<std::uint64_t>();

  const json& l = full.at("loss");
  c.train.loss.kind = parse_loss_kind(l.at("kind").get<std::string>());
  c.train.loss.gamma = l.at("gamma").get<double>();
  c.train.loss.factor_grad = parse_factor_grad(l.at("factor_grad").get<std::string>());

  const json& k = full.at("corpus");
  c.corpus.source = k.at("source").get<std::string>();
  c.corpus.path = k.at("path").get<std::string>();
  c.corpus.tokenizer = k.at("tokenizer").get<std::string>();
  c.corpus.manifest = k.at("manifest").get<std::string>();
  const json& z = k.at("zipf");
  c.corpus.zipf.n_tokens = z.at("n_tokens").get<std::size_t>();
  c.corpus.zipf.exponent = z.at("exponent").get<double>();
  c.corpus.zipf.seed = z.at("seed").get<std::uint64_t>();
  c.corpus.zipf.markov_order = z.at("markov_order").get<int>();
  c.corpus.zipf.markov_strength = z.at("markov_strength").get<double>();
  c.corpus.zipf.group_size = z.at("group_size").get<std::size_t>();
  c.corpus.zipf.vocab_size = c.model.vocab_size;

  c.validate();
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form path=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::size_t end = path.size();
  while (true) {
    if (end == 0) throw ConfigError("override path '" + path + "' has an empty component");
    const auto dot = path.rfind('.', end - 1);
    const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
    const std::string key = path.substr(start, end - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty component");
    patch = json{{key, std::move(patch)}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  json full = defaults();
  merge_strict(full, doc, "");
  merge_strict(full, patch, "");
  doc = std::move(full);
}

ExperimentConfig load_experiment_config(const std::string& path, std::span<const std::string> overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  try {
    return experiment_from_json(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace mile
