#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mile/analysis.hpp"
#include "mile/config.hpp"
#include "mile/error.hpp"
#include "mile/experiment.hpp"
#include "mile/gradcheck.hpp"
#include "mile/trainer.hpp"

namespace mile::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string run_dir;
};

void add_common(CLI::App* cmd, Common& c, bool run_dir_required) {
  cmd->add_option("--config", c.config_path, "JSON experiment config");
  cmd->add_option("--set", c.sets, "Override a config field, e.g. --set loss.gamma=1")->take_all();
  auto* rd = cmd->add_option("--run-dir", c.run_dir, "Directory for all outputs");
  if (run_dir_required) rd->required();
}

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

fs::path prepare_run_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create run directory '" + dir + "'");
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  return os;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os = open_out(p);
  os << text;
  if (!os) throw IoError("write failed for '" + p.string() + "'");
}

template <typename F>
void write_with(const fs::path& p, F&& f) {
  std::ofstream os = open_out(p);
  f(os);
  if (!os) throw IoError("write failed for '" + p.string() + "'");
}

ExperimentConfig load(const Common& c) { return load_experiment_config(c.config_path, c.sets); }

void snapshot(const fs::path& dir, const ExperimentConfig& cfg) { write_text(dir / "config.json", dump_config(cfg)); }

int cmd_gen_corpus(const Common& c, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = prepare_run_dir(c.run_dir);
  snapshot(dir, cfg);
  const PreparedData data = prepare_data(cfg);
  write_token_cache((dir / "tokens.milt").string(), data.stream);
  out << "wrote " << data.stream.size() << " tokens to " << (dir / "tokens.milt").string() << "\n";
  return 0;
}

int cmd_buckets(const Common& c, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = prepare_run_dir(c.run_dir);
  snapshot(dir, cfg);
  const PreparedData data = prepare_data(cfg);
  write_with(dir / "buckets.csv", [&](std::ostream& os) { write_bucket_report(os, data.stats, data.buckets, data.vocab); });
  for (std::size_t b = 0; b < kBucketCount; ++b) {
    const auto bucket = static_cast<Bucket>(b);
    out << to_string(bucket) << ' ' << data.buckets.size_of(bucket) << '\n';
  }
  return 0;
}

int cmd_weights(const Common& c, const std::string& manifest_flag, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const std::string path = manifest_flag.empty() ? cfg.corpus.manifest : manifest_flag;
  if (path.empty()) throw ConfigError("weights needs --manifest or corpus.manifest");
  const DomainManifest manifest = DomainManifest::load(path);
  const std::vector<double> w = compute_sampling_weights(manifest);
  for (std::size_t i = 0; i < w.size(); ++i) out << manifest.domains[i].name << ' ' << fmt(w[i], "%.12g") << '\n';
  if (!c.run_dir.empty()) {
    const fs::path dir = prepare_run_dir(c.run_dir);
    ExperimentConfig eff = cfg;
    eff.corpus.manifest = path;
    snapshot(dir, eff);
    write_with(dir / "weights.csv", [&](std::ostream& os) {
      os << "domain,sequence_count,epochs,weight\n";
      for (std::size_t i = 0; i < w.size(); ++i) {
        const DomainEntry& e = manifest.domains[i];
        os << e.name << ',' << e.sequence_count << ',' << fmt(e.epochs) << ',' << fmt(w[i]) << '\n';
      }
    });
  }
  return 0;
}

void log_step(std::ostream& out, const StepMetrics& m) {
  out << "step " << m.step << " lr " << fmt(m.lr, "%.3e") << " loss " << fmt(m.loss, "%.4f") << " ce "
      << fmt(m.ce, "%.4f");
  if (m.val_ppl) out << " val_ppl " << fmt(*m.val_ppl, "%.3f");
  out << std::endl;  // progress should show up while training
}

int cmd_train(const Common& c, bool quiet, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = prepare_run_dir(c.run_dir);
  snapshot(dir, cfg);
  const PreparedData data = prepare_data(cfg);
  const TrainResult res = run_experiment(cfg, data, [&](const StepMetrics& m) {
    if (!quiet && m.val_ppl) log_step(out, m);
    return true;
  });
  res.metrics.write_csv((dir / "metrics.csv").string());
  save_checkpoint((dir / "checkpoint.bin").string(), res.params, res.optimizer);
  if (!data.data.eval.empty()) {
    const BucketPPLReport rep = bucketed_ppl(res.params, data.data.eval, data.buckets, cfg.train.batch_size);
    const double g = cfg.train.loss.effective_gamma();
    write_with(dir / report_file_name("buckets", g, cfg.train.seed, "csv"),
               [&](std::ostream& os) { write_bucket_csv(os, rep); });
    write_with(dir / report_file_name("buckets", g, cfg.train.seed, "txt"),
               [&](std::ostream& os) { write_bucket_table(os, rep); });
    if (!quiet) write_bucket_table(out, rep);
  }
  out << "trained " << res.metrics.steps.size() << " steps; outputs in " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::size_t bins, std::ostream& out) {
  ExperimentConfig cfg = load(c);
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  cfg.model = ck.params.config;
  cfg.corpus.zipf.vocab_size = cfg.model.vocab_size;
  const fs::path dir = prepare_run_dir(c.run_dir);
  snapshot(dir, cfg);
  const PreparedData data = prepare_data(cfg);
  if (data.data.eval.empty()) throw InputError("evaluation split is empty; raise train.eval_fraction");
  const double ppl = evaluate_ppl(ck.params, data.data.eval, cfg.train.batch_size);
  const BucketPPLReport rep = bucketed_ppl(ck.params, data.data.eval, data.buckets, cfg.train.batch_size);
  const EntropyHistogram hist = entropy_histogram(ck.params, data.data.eval, bins, cfg.train.batch_size);
  const double g = cfg.train.loss.effective_gamma();
  write_with(dir / report_file_name("eval_buckets", g, cfg.train.seed, "csv"),
             [&](std::ostream& os) { write_bucket_csv(os, rep); });
  write_with(dir / report_file_name("eval_buckets", g, cfg.train.seed, "txt"),
             [&](std::ostream& os) { write_bucket_table(os, rep); });
  write_with(dir / report_file_name("entropy", g, cfg.train.seed, "csv"),
             [&](std::ostream& os) { write_entropy_csv(os, hist); });
  out << "val_ppl " << fmt(ppl, "%.6f") << '\n';
  write_bucket_table(out, rep);
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<double>& gammas, std::size_t jobs, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = prepare_run_dir(c.run_dir);
  snapshot(dir, cfg);
  const PreparedData data = prepare_data(cfg);
  const SweepReport rep = gamma_sweep(cfg, data, gammas, jobs);
  for (const SweepRow& row : rep.rows) {
    row.metrics.write_csv((dir / report_file_name("metrics", row.gamma, rep.seed, "csv")).string());
    write_with(dir / report_file_name("buckets", row.gamma, rep.seed, "csv"),
               [&](std::ostream& os) { write_bucket_csv(os, row.buckets); });
  }
  const std::string stem = "sweep_seed" + std::to_string(rep.seed);
  write_with(dir / (stem + ".csv"), [&](std::ostream& os) { write_sweep_csv(os, rep); });
  write_with(dir / (stem + ".txt"), [&](std::ostream& os) { write_sweep_table(os, rep); });
  write_sweep_table(out, rep);
  return 0;
}

struct GradCheckFlags {
  std::string loss;
  double gamma = -1.0;
  std::string mode;
  std::size_t n = 64;
  std::size_t trials = 100;
  double h = 1e-5;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

int cmd_grad_check(const Common& c, const GradCheckFlags& f, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  GradCheckConfig g;
  g.spec = cfg.train.loss;
  if (!f.loss.empty()) g.spec.kind = parse_loss_kind(f.loss);
  if (f.gamma >= 0.0) g.spec.gamma = f.gamma;
  if (!f.mode.empty()) g.spec.factor_grad = parse_factor_grad(f.mode);
  g.n = f.n;
  g.trials = f.trials;
  g.h = f.h;
  g.seed = f.seed;
  const GradCheckResult r = grad_check(g);
  const bool pass = r.max_rel_error <= f.tol;
  std::ostringstream line;
  line << "loss " << to_string(g.spec.kind) << " gamma " << fmt(g.spec.gamma, "%g") << " mode "
       << to_string(g.spec.factor_grad) << " n " << g.n << " trials " << r.trials << " max_rel_error "
       << fmt(r.max_rel_error, "%.3e") << " mean_rel_error " << fmt(r.mean_rel_error, "%.3e") << ' '
       << (pass ? "PASS" : "FAIL") << '\n';
  out << line.str();
  if (!c.run_dir.empty()) {
    const fs::path dir = prepare_run_dir(c.run_dir);
    ExperimentConfig eff = cfg;
    eff.train.loss = g.spec;
    snapshot(dir, eff);
    nlohmann::json j{{"loss", to_json(g.spec)},
                     {"n", g.n},
                     {"trials", g.trials},
                     {"h", g.h},
                     {"tol", f.tol},
                     {"seed", g.seed},
                     {"max_rel_error", r.max_rel_error},
                     {"mean_rel_error", r.mean_rel_error},
                     {"pass", pass}};
    write_text(dir / "gradcheck.json", j.dump(2) + "\n");
  }
  if (!pass) {
    throw NumericError("gradient check failed: max relative error " + fmt(r.max_rel_error, "%.3e") + " > " +
                       fmt(f.tol, "%g"));
  }
  return 0;
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int fail(std::ostream& err, const char* category, const std::string& message) {
  err << "error: category=" << category << " message=" << one_line(message) << '\n';
  return exit_code_for(category);
}

}  // namespace

int exit_code_for(const char* category) {
  const std::string c = category;
  if (c == "config" || c == "usage" || c == "input") return 2;
  if (c == "numeric") return 3;
  if (c == "io") return 4;
  return 1;
}

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"milelab: MiLe loss language-model lab", "milelab"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  auto* gen = app.add_subcommand("gen-corpus", "Generate or tokenize a corpus into a token cache");
  add_common(gen, common, true);

  auto* buckets = app.add_subcommand("buckets", "Frequency buckets of the corpus as CSV");
  add_common(buckets, common, true);

  std::string manifest;
  auto* weights = app.add_subcommand("weights", "Domain sampling weights from a manifest");
  add_common(weights, common, false);
  weights->add_option("--manifest", manifest, "Domain manifest JSON");

  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics, checkpoint and bucket report");
  add_common(train_cmd, common, true);
  train_cmd->add_flag("--quiet", quiet, "Only print the final summary");

  std::string checkpoint;
  std::size_t bins = 20;
  auto* eval = app.add_subcommand("eval", "Bucketed perplexity and entropy histogram of a checkpoint");
  add_common(eval, common, true);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--bins", bins, "Entropy histogram bins")->check(CLI::PositiveNumber);

  std::vector<double> gammas{0.0, 0.5, 1.0, 2.0, 5.0};
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "One MiLe run per gamma with shared seeds and data order");
  add_common(sweep, common, true);
  sweep->add_option("--gammas", gammas, "Comma-separated gamma values (must include 0)")->delimiter(',');
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  GradCheckFlags gc;
  auto* grad = app.add_subcommand("grad-check", "Analytic loss gradients against finite differences");
  add_common(grad, common, false);
  grad->add_option("--loss", gc.loss, "ce, focal or mile (default: config loss.kind)");
  grad->add_option("--gamma", gc.gamma, "Focusing exponent (default: config loss.gamma)");
  grad->add_option("--mode", gc.mode, "differentiable or detached (default: config loss.factor_grad)");
  grad->add_option("--n", gc.n, "Vocabulary size of the random logits");
  grad->add_option("--trials", gc.trials, "Random logit vectors");
  grad->add_option("--fd-step", gc.h, "Finite-difference step");
  grad->add_option("--tol", gc.tol, "Largest accepted relative error");
  grad->add_option("--seed", gc.seed, "Seed of the random trials");

  std::vector<const char*> args;
  args.reserve(argv.size());
  for (const std::string& a : argv) args.push_back(a.c_str());
  if (args.empty()) args.push_back("milelab");
  try {
    app.parse(static_cast<int>(args.size()), args.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what());
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(common, out);
    if (buckets->parsed()) return cmd_buckets(common, out);
    if (weights->parsed()) return cmd_weights(common, manifest, out);
    if (train_cmd->parsed()) return cmd_train(common, quiet, out);
    if (eval->parsed()) return cmd_eval(common, checkpoint, bins, out);
    if (sweep->parsed()) return cmd_sweep(common, gammas, jobs, out);
    if (grad->parsed()) return cmd_grad_check(common, gc, out);
    return fail(err, "usage", "no command given");
  } catch (const Error& e) {
    return fail(err, to_string(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(err, "config", e.what());
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what());
  }
}

}  // namespace mile::cli
