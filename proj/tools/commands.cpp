#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>

#include <CLI11.hpp>

#include "qsf/checkpoint.hpp"
#include "qsf/config.hpp"
#include "qsf/data.hpp"
#include "qsf/errors.hpp"
#include "qsf/io.hpp"
#include "qsf/oracles.hpp"
#include "qsf/pipeline.hpp"
#include "qsf/spectrum.hpp"
#include "qsf/train.hpp"

namespace qsf::cli {
namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

struct TrainArgs {
  std::string config;
  std::optional<int> stage;
  std::optional<std::string> init_from;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corpus;
  std::optional<std::string> out_dir;
  std::optional<int> steps;
  std::optional<int> threads;
  bool strict = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg;
  Json j = Json::object();
  if (!a.config.empty()) {
    try {
      j = Json::parse(read_file(a.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config '" + a.config + "' is not valid JSON: " + e.what());
    }
  }
  if (a.stage) j["stage"] = *a.stage;
  if (a.init_from) j["init_from"] = *a.init_from;
  if (a.seed) j["seed"] = *a.seed;
  if (a.corpus) j["corpus"] = *a.corpus;
  if (a.out_dir) j["out_dir"] = *a.out_dir;
  if (a.strict) j["strict_deterministic"] = true;
  if (a.steps || a.threads) {
    if (!j.contains("train")) j["train"] = Json::object();
    if (a.steps) j["train"]["steps"] = *a.steps;
    if (a.threads) j["train"]["threads"] = *a.threads;
  }
  cfg = run_config_from_json(j);
  if (cfg.train.warmup > cfg.train.steps) cfg.train.warmup = cfg.train.steps;
  cfg.validate();

  const Corpus corpus = Corpus::from_file(cfg.corpus);
  out << "stage " << to_string(cfg.model.stage) << ", "
      << Model(cfg.model).parameter_count() << " parameters, corpus " << corpus.size()
      << " bytes\n";
  const TrainResult r = train_stage(cfg, corpus);
  out << "train loss " << fmt("%.4f", r.first_train_loss) << " -> "
      << fmt("%.4f", r.final_train_loss) << ", val loss " << fmt("%.4f", r.final_val_loss)
      << "\n";
  out << "checkpoint " << r.checkpoint_path << "\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string ckpt;
  std::string prompt;
  int max_tokens = 200;
  double temperature = 0.0;
  std::uint64_t seed = 1;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  GenerateOptions opts;
  opts.max_tokens = a.max_tokens;
  opts.temperature = a.temperature;
  opts.seed = a.seed;
  out << generate(ckpt, a.prompt, opts) << "\n";
  return kExitOk;
}

int cmd_spectrum(const std::string& ckpt_path, const std::string& out_path, double tol,
                 std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const SpectrumReport report = layer_spectrum(ckpt, tol);
  export_spectrum_csv(report, out_path);
  for (const auto& layer : report.layers) {
    out << "layer " << layer.layer << ": decay " << layer.decay << ", neutral " << layer.neutral
        << ", growth " << layer.growth << "\n";
  }
  out << "total: decay " << report.decay << ", neutral " << report.neutral << ", growth "
      << report.growth << " (tol " << tol << ")\n";
  out << "max ||lambda| - 1| = " << fmt("%.3e", report.max_unit_deviation) << "\n";
  out << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_zeta(const std::string& run_dir, const std::string& out_path, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::path ckpt_path = fs::path(run_dir) / "final.qsfc";
  if (!fs::exists(ckpt_path)) ckpt_path = fs::path(run_dir) / "last_good.qsfc";
  const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
  if (!ckpt.metadata.contains("zeta_trace")) {
    throw FormatError("'" + ckpt_path.string() + "' carries no zeta trace (Stages III-IV only)");
  }
  const ZetaTrace trace = zeta_trace_from_json(ckpt.metadata.at("zeta_trace"));
  const std::string summary = zeta_summary_path(out_path);
  export_zeta_csv(trace, out_path, summary);
  if (!trace.empty()) {
    const auto& first = trace.records().front();
    const auto& last = trace.records().back();
    out << "mean zeta " << fmt("%.4f", first.mean) << " (step " << first.step << ") -> "
        << fmt("%.4f", last.mean) << " (step " << last.step << ")\n";
  }
  out << "wrote " << out_path << " and " << summary << "\n";
  return kExitOk;
}

void print_line(std::ostream& out, const oracle::CheckLine& line) {
  out << (line.pass() ? "ok    " : "FAIL  ") << line.name << ": worst " << fmt("%.3e", line.worst)
      << " (tol " << fmt("%.0e", line.tolerance) << ", " << line.cases << " cases)\n";
}

struct PropagatorArgs {
  int dim = 2;
  int trials = 20;
  std::uint64_t seed = 1;
  std::optional<double> sigma_noise;
  std::string csv;
};

int cmd_check_propagator(const PropagatorArgs& a, std::ostream& out) {
  if (a.dim < 1) throw ConfigError("--dim must be positive");
  if (a.trials < 1) throw ConfigError("--trials must be positive");
  const oracle::CheckSpec spec{a.trials, a.dim, a.dim, a.seed};
  const double noise = a.sigma_noise.value_or(-1.0);
  std::vector<oracle::CheckLine> lines;
  lines.push_back(oracle::check_affine_rk4(spec));
  lines.push_back(oracle::check_affine_singular(spec));
  lines.push_back(oracle::check_lyapunov_rk4(spec));
  lines.push_back(oracle::check_chain_identity(spec));
  if (a.dim == 1) {
    lines.push_back(oracle::check_lyapunov_scalar(spec));
    lines.push_back(oracle::check_guided_scalar(spec, noise));
  }
  if (a.dim <= 3) {
    for (auto& l : oracle::check_guided_quadrature(spec, noise)) lines.push_back(l);
  } else {
    out << "skip  guided quadrature (dimensions above 3)\n";
  }
  bool pass = true;
  for (const auto& l : lines) {
    print_line(out, l);
    pass = pass && l.pass();
  }
  const oracle::ActionCheck action = oracle::check_action_extremality(a.dim, 50, a.seed);
  out << (action.pass() ? "ok    " : "FAIL  ") << "action extremality: classical "
      << fmt("%.3e", action.classical) << ", smallest perturbed "
      << fmt("%.3e", action.min_perturbed) << " (" << action.below << "/" << action.perturbations
      << " above)\n";
  pass = pass && action.pass();
  if (!a.csv.empty()) {
    std::string text = "check,cases,worst,tolerance,pass\n";
    for (const auto& l : lines) {
      text += l.name + ',' + std::to_string(l.cases) + ',' + fmt("%.6e", l.worst) + ',' +
              fmt("%.0e", l.tolerance) + ',' + (l.pass() ? "1" : "0") + '\n';
    }
    text += "action extremality," + std::to_string(action.perturbations) + ',' +
            fmt("%.6e", action.classical - action.min_perturbed) + ",0," +
            (action.pass() ? "1" : "0") + '\n';
    write_file_atomic(a.csv, text);
  }
  return pass ? kExitOk : kExitCheckFailed;
}

int cmd_check_grads(std::uint64_t seed, int trials, std::ostream& out) {
  constexpr double kTol = 1e-4;
  bool pass = true;
  for (ad::OpKind kind : ad::checkable_ops()) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      worst = std::max(worst, ad::grad_check(kind, seed + static_cast<std::uint64_t>(t)));
    }
    const bool ok = worst < kTol;
    pass = pass && ok;
    out << (ok ? "ok    " : "FAIL  ") << ad::op_name(kind) << ": worst relative error "
        << fmt("%.3e", worst) << "\n";
  }
  return pass ? kExitOk : kExitCheckFailed;
}

int cmd_make_corpus(const std::string& path, std::size_t bytes, std::uint64_t seed,
                    std::ostream& out) {
  const std::string text = synthesize_story_corpus(seed, bytes);
  write_file_atomic(path, text);
  out << "wrote " << text.size() << " bytes to " << path << "\n";
  return kExitOk;
}

int cmd_pipeline(PipelineOptions opts, std::ostream& out) {
  opts.log = [&out](const std::string& msg) { out << msg << std::endl; };
  const PipelineResult r = run_pipeline(opts);
  out << pipeline_table(r);
  return kExitOk;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Koopman / linear-attention language model stack"};
  app.name("qsf");
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one stage");
  t->add_option("--config", train.config, "JSON run config");
  t->add_option("--stage", train.stage, "Stage 1-4")->check(CLI::Range(1, 4));
  t->add_option("--init-from", train.init_from, "Checkpoint to transfer from");
  t->add_option("--seed", train.seed, "Seed");
  t->add_option("--corpus", train.corpus, "Corpus text file");
  t->add_option("--out-dir", train.out_dir, "Run directory");
  t->add_option("--steps", train.steps, "Training steps");
  t->add_option("--threads", train.threads, "Worker threads");
  t->add_flag("--strict-deterministic", train.strict, "Fully serial execution");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate text from a checkpoint");
  g->add_option("--ckpt", gen.ckpt, "Checkpoint")->required();
  g->add_option("--prompt", gen.prompt, "Prompt")->required();
  g->add_option("--max-tokens", gen.max_tokens, "Tokens to append");
  g->add_option("--temperature", gen.temperature, "0 = greedy");
  g->add_option("--seed", gen.seed, "Sampling seed");

  std::string spec_ckpt, spec_out;
  double spec_tol = kDefaultNeutralTol;
  auto* s = app.add_subcommand("spectrum", "Export Koopman eigenvalue spectra");
  s->add_option("--ckpt", spec_ckpt, "Checkpoint")->required();
  s->add_option("--out", spec_out, "CSV path")->required();
  s->add_option("--tol", spec_tol, "Neutral tolerance");

  std::string zeta_dir, zeta_out;
  auto* z = app.add_subcommand("zeta", "Export the zeta trace of a run");
  z->add_option("--run-dir", zeta_dir, "Run directory")->required();
  z->add_option("--out", zeta_out, "CSV path")->required();

  PropagatorArgs prop;
  auto* p = app.add_subcommand("check-propagator", "Verify closed forms against oracles");
  p->add_option("--dim", prop.dim, "State dimension");
  p->add_option("--trials", prop.trials, "Random instances per check");
  p->add_option("--seed", prop.seed, "Seed");
  p->add_option("--sigma-noise", prop.sigma_noise, "Fixed diffusion strength");
  p->add_option("--csv", prop.csv, "Write the oracle deltas as CSV");

  std::uint64_t grad_seed = 1;
  int grad_trials = 3;
  auto* gc = app.add_subcommand("check-grads", "Finite-difference check of every op");
  gc->add_option("--seed", grad_seed, "Seed");
  gc->add_option("--trials", grad_trials, "Random instances per op");

  std::string corpus_out;
  std::size_t corpus_bytes = 5'000'000;
  std::uint64_t corpus_seed = 1;
  auto* mc = app.add_subcommand("make-corpus", "Write the synthetic story corpus");
  mc->add_option("--out", corpus_out, "Output path")->required();
  mc->add_option("--bytes", corpus_bytes, "Approximate size");
  mc->add_option("--seed", corpus_seed, "Seed");

  PipelineOptions pipe;
  auto* pl = app.add_subcommand("pipeline", "Train stages I-IV and compare");
  pl->add_option("--corpus", pipe.corpus, "Corpus text file")->required();
  pl->add_option("--out-dir", pipe.out_dir, "Parent run directory");
  pl->add_option("--seed", pipe.seed, "Seed shared by every stage");
  pl->add_option("--steps", pipe.steps, "Steps per stage");
  pl->add_option("--stage4-snapshots", pipe.stage4_snapshots, "Extra Stage IV checkpoint steps");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*t) return cmd_train(train, out);
    if (*g) return cmd_generate(gen, out);
    if (*s) return cmd_spectrum(spec_ckpt, spec_out, spec_tol, out);
    if (*z) return cmd_zeta(zeta_dir, zeta_out, out);
    if (*p) return cmd_check_propagator(prop, out);
    if (*gc) return cmd_check_grads(grad_seed, grad_trials, out);
    if (*mc) return cmd_make_corpus(corpus_out, corpus_bytes, corpus_seed, out);
    if (*pl) return cmd_pipeline(pipe, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace qsf::cli
