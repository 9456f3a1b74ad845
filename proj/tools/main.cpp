#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "rvae/autodiff.hpp"
#include "rvae/errors.hpp"

using namespace rvae::cli;

namespace {

// Fills options of `app` that were not given on the command line from a
// TOML/INI file. Keys are long option names without dashes, optionally
// inside a section named after the subcommand.
void apply_config_file(CLI::App* app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw rvae::IoError("cannot read config file " + path);
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == app->get_name()))
      throw rvae::ConfigError("config file " + path + ": unknown section '" + item.parents[0] + "'");
    CLI::Option* opt = app->get_option_no_throw("--" + item.name);
    if (!opt || item.name == "config")
      throw rvae::ConfigError("config file " + path + ": unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    if (opt->get_type_size() == 0) {
      if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "1")) opt->add_result("");
    } else {
      opt->add_result(item.inputs);
    }
    opt->run_callback();
  }
}

void enhance_flags(CLI::App* app, rvae::EnhanceConfig& c) {
  app->add_option("--iters", c.iterations, "EM iterations")->capture_default_str();
  app->add_option("--K", c.rank, "NMF rank of the noise model")->capture_default_str();
  app->add_option("--samples", c.samples, "posterior samples R per M-step")->capture_default_str();
  app->add_option("--estep-steps", c.estep_grad_steps, "gradient steps per E-step (default 10 ffnn, 1 rnn/brnn)");
  app->add_option("--estep-lr", c.estep_step_size, "Adam step size of the E-step")->capture_default_str();
  app->add_option("--seed", c.seed, "root seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  rvae::ad::tune_allocator();
  CLI::App app{"Recurrent VAE speech enhancement"};
  app.require_subcommand(1, 1);

  SynthCorpusOptions sc;
  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic clean-speech corpus");
  synth->add_option("--out", sc.out, "output directory")->required();
  synth->add_option("--minutes", sc.minutes, "total duration")->capture_default_str();
  synth->add_option("--val-fraction", sc.validation_fraction, "share of files in val.list")->capture_default_str();
  synth->add_option("--seed", sc.seed, "root seed")->capture_default_str();

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "train a speech prior");
  std::optional<std::string> train_config;
  train->add_option("--config", train_config, "TOML/INI file with option values; command-line flags win");
  train->add_option("--train", tr.train, "list file or directory of clean WAVs (required)");
  train->add_option("--val", tr.validation, "validation list file or directory");
  train->add_option("--out", tr.out, "checkpoint directory (required)");
  train->add_option("--variant", tr.variant, "ffnn, rnn or brnn")->capture_default_str();
  train->add_option("--L", tr.config.latent, "latent dimension")->capture_default_str();
  train->add_option("--hidden", tr.config.hidden, "hidden layer size")->capture_default_str();
  train->add_option("--epochs", tr.config.max_epochs, "maximum epochs")->capture_default_str();
  train->add_option("--max-steps", tr.config.max_steps, "stop after this many steps (0 = no limit)")
      ->capture_default_str();
  train->add_option("--patience", tr.config.patience, "early-stopping patience in epochs")->capture_default_str();
  train->add_option("--lr", tr.config.adam.step_size, "Adam step size")->capture_default_str();
  train->add_option("--batch-sequences", tr.config.sequences_per_batch)->capture_default_str();
  train->add_option("--sequence-length", tr.config.sequence_length)->capture_default_str();
  train->add_option("--ffnn-batch-frames", tr.config.ffnn_batch_frames)->capture_default_str();
  train->add_option("--clip-norm", tr.config.clip_norm, "global gradient norm clip")->capture_default_str();
  train->add_option("--seed", tr.config.seed, "root seed")->capture_default_str();
  train->add_flag("--quiet", tr.quiet, "no per-epoch log");

  EnhanceOptions en;
  auto* enh = app.add_subcommand("enhance", "enhance one noisy WAV");
  enh->add_option("--ckpt", en.checkpoint, "checkpoint directory")->required();
  enh->add_option("--in", en.input, "noisy WAV")->required();
  enh->add_option("--out", en.output, "enhanced WAV")->required();
  enh->add_option("--variant", en.variant, "expected model variant");
  enh->add_option("--alg", en.algorithm, "vem or peem")->capture_default_str();
  enh->add_option("--trace-csv", en.trace_csv, "per-iteration cost and free energy");
  enhance_flags(enh, en.config);

  MixOptions mx;
  auto* mix = app.add_subcommand("mix", "mix clean speech and noise at a given SNR");
  mix->add_option("--clean", mx.clean, "clean WAV")->required();
  mix->add_option("--noise", mx.noise, "noise WAV (default: synthetic noise)");
  mix->add_option("--noise-type", mx.noise_type, "white, pink, brown or modulated")->capture_default_str();
  mix->add_option("--snr", mx.snr_db, "SNR in dB")->capture_default_str();
  mix->add_option("--seed", mx.seed, "root seed")->capture_default_str();
  mix->add_option("--out", mx.out, "mixture WAV")->required();
  mix->add_option("--clean-out", mx.clean_out, "scaled clean component");
  mix->add_option("--noise-out", mx.noise_out, "scaled noise component");

  TestsetOptions ts;
  auto* mts = app.add_subcommand("make-testset", "build a directory of noisy mixtures");
  mts->add_option("--clean", ts.clean, "list file or directory of clean WAVs")->required();
  mts->add_option("--out", ts.out, "test set directory")->required();
  mts->add_option("--snr", ts.snrs, "SNRs to draw from")->capture_default_str()->delimiter(',');
  mts->add_option("--noise-types", ts.noise_types, "noise types to draw from (default all)")->delimiter(',');
  mts->add_option("--count", ts.count, "use the first N utterances (0 = all)")->capture_default_str();
  mts->add_option("--seed", ts.seed, "root seed")->capture_default_str();

  EvaluateOptions ev;
  auto* eval = app.add_subcommand("evaluate", "enhance a test set and report SI-SDR");
  eval->add_option("--ckpt", ev.checkpoint, "checkpoint directory")->required();
  eval->add_option("--testset", ev.testset, "test set directory")->required();
  eval->add_option("--report", ev.report, "CSV report")->required();
  eval->add_option("--variant", ev.variant, "expected model variant");
  eval->add_option("--alg", ev.algorithms, "vem and/or peem")->capture_default_str()->delimiter(',');
  eval->add_option("--jobs", ev.jobs, "worker threads")->capture_default_str();
  eval->add_option("--limit", ev.limit, "evaluate the first N items (0 = all)")->capture_default_str();
  enhance_flags(eval, ev.config);

  GradcheckOptionsCli gc;
  auto* grad = app.add_subcommand("gradcheck", "gradient and M-step self-checks");
  grad->add_option("--seeds", gc.seeds, "random instances per gradient check")->capture_default_str();
  grad->add_option("--seed", gc.seed, "base seed")->capture_default_str();
  grad->add_option("--trials", gc.trials, "M-step trials")->capture_default_str();
  grad->add_option("--sweeps", gc.sweeps, "M-step sweeps per trial")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train && train_config) apply_config_file(train, *train_config);
    if (*synth) return synth_corpus(sc);
    if (*train) return rvae::cli::train(tr);
    if (*enh) return enhance(en);
    if (*mix) return rvae::cli::mix(mx);
    if (*mts) return make_testset(ts);
    if (*eval) return evaluate(ev);
    if (*grad) return gradcheck(gc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
