#include "commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "rvae/corpus.hpp"
#include "rvae/diagnostics.hpp"
#include "rvae/errors.hpp"
#include "rvae/eval.hpp"
#include "rvae/manifest.hpp"
#include "rvae/rng.hpp"
#include "rvae/signal.hpp"

namespace rvae::cli {

using nlohmann::json;

namespace {

fs::path sidecar(const fs::path& output) {
  fs::path p = output;
  p += ".run.json";
  return p;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json enhance_json(const EnhanceConfig& c, Variant v) {
  return {{"algorithm", to_string(c.algorithm)}, {"iterations", c.iterations},
          {"K", c.rank},                        {"estep_grad_steps", c.grad_steps_for(v)},
          {"estep_step_size", c.estep_step_size}, {"R", c.samples},
          {"seed", c.seed}};
}

std::vector<Eigen::MatrixXd> load_powers(const std::vector<fs::path>& files) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(stft(read_wav(f)).power());
  return out;
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iteration,cost,vfe\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.iteration, r.cost, r.vfe);
    os << buf;
  }
  write_file_atomic(path, os.str());
}

}  // namespace

void check_variant(const ModelCheckpoint& ckpt, const std::optional<std::string>& requested) {
  if (!requested) return;
  const Variant want = parse_variant(*requested);
  if (want != ckpt.model.variant())
    throw ConfigError("variant mismatch: checkpoint holds a '" + to_string(ckpt.model.variant()) +
                      "' model but --variant " + to_string(want) + " was requested");
}

int synth_corpus(const SynthCorpusOptions& o) {
  RunManifest m;
  m.command = "synth-corpus";
  m.started_at = utc_timestamp();
  m.seed = o.seed;
  m.config = {{"out", o.out.string()}, {"minutes", o.minutes}, {"validation_fraction", o.validation_fraction}};
  const CorpusSummary s = write_synth_corpus(o.out, o.minutes, o.seed, o.validation_fraction);
  m.finished_at = utc_timestamp();
  m.outputs = {{"train_files", s.train.size()},
               {"validation_files", s.validation.size()},
               {"total_seconds", s.total_seconds},
               {"train_list", "train.list"},
               {"validation_list", "val.list"}};
  m.write(o.out / "run.json");
  std::cout << "wrote " << s.train.size() << " train + " << s.validation.size() << " validation utterances ("
            << fmt(s.total_seconds) << " s) to " << o.out.string() << "\n";
  return 0;
}

int train(const TrainOptions& o) {
  if (o.train.empty() || o.out.empty()) throw ConfigError("train needs --train and --out (on the command line or in --config)");
  TrainConfig cfg = o.config;
  cfg.variant = parse_variant(o.variant);
  cfg.validate();
  RunManifest m;
  m.command = "train";
  m.started_at = utc_timestamp();
  m.seed = cfg.seed;
  m.config = {{"train", o.train.string()},
              {"validation", o.validation ? json(o.validation->string()) : json(nullptr)},
              {"out", o.out.string()},
              {"variant", to_string(cfg.variant)},
              {"L", cfg.latent},
              {"hidden", cfg.hidden},
              {"ffnn_batch_frames", cfg.ffnn_batch_frames},
              {"batch_sequences", cfg.sequences_per_batch},
              {"sequence_length", cfg.sequence_length},
              {"lr", cfg.adam.step_size},
              {"beta1", cfg.adam.beta1},
              {"beta2", cfg.adam.beta2},
              {"epsilon", cfg.adam.epsilon},
              {"patience", cfg.patience},
              {"epochs", cfg.max_epochs},
              {"max_steps", cfg.max_steps},
              {"clip_norm", cfg.clip_norm}};

  const auto train_files = resolve_inputs(o.train);
  if (train_files.empty()) throw IoError("no training utterances found in " + o.train.string());
  const auto corpus = load_powers(train_files);
  std::vector<Eigen::MatrixXd> validation;
  if (o.validation) validation = load_powers(resolve_inputs(*o.validation));

  std::ostringstream history;
  history << "epoch,steps,train_vfe,validation_vfe,improved\n";
  const TrainResult res = train(corpus, validation, cfg, [&](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%d\n", e.epoch, e.steps, e.train_vfe, e.validation_vfe,
                  int(e.improved));
    history << buf;
    if (!o.quiet)
      std::cerr << "epoch " << e.epoch << " steps " << e.steps << " train " << fmt(e.train_vfe) << " val "
                << fmt(e.validation_vfe) << (e.improved ? " *" : "") << "\n";
  });
  if (res.diverged) std::cerr << "warning: " << res.message << "\n";

  save_checkpoint(res.checkpoint, o.out);
  write_file_atomic(o.out / "history.csv", history.str());
  m.finished_at = utc_timestamp();
  m.checkpoint_hash = checkpoint_hash(o.out);
  m.outputs = {{"checkpoint", o.out.string()},
               {"epochs", res.history.size()},
               {"best_epoch", res.checkpoint.meta.epoch},
               {"steps", res.checkpoint.meta.steps},
               {"validation_vfe", res.checkpoint.meta.validation_vfe ? json(*res.checkpoint.meta.validation_vfe)
                                                                     : json(nullptr)},
               {"diverged", res.diverged}};
  m.write(o.out / "run.json");
  std::cout << "checkpoint " << o.out.string() << " " << *m.checkpoint_hash << "\n";
  return res.diverged && res.history.empty() ? 1 : 0;
}

int enhance(const EnhanceOptions& o) {
  RunManifest m;
  m.command = "enhance";
  m.started_at = utc_timestamp();
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  check_variant(ckpt, o.variant);
  EnhanceConfig cfg = o.config;
  cfg.algorithm = parse_algorithm(o.algorithm);
  cfg.validate();
  m.seed = cfg.seed;
  m.config = enhance_json(cfg, ckpt.model.variant());
  m.config["checkpoint"] = o.checkpoint.string();
  m.config["input"] = o.input.string();
  m.config["variant"] = to_string(ckpt.model.variant());
  m.checkpoint_hash = checkpoint_hash(o.checkpoint);

  const Waveform mixture = read_wav(o.input);
  const EnhanceResult res = rvae::enhance(mixture, ckpt.model, cfg);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  write_wav(o.output, res.speech);
  if (o.trace_csv) write_trace(*o.trace_csv, res.trace);
  m.finished_at = utc_timestamp();
  m.outputs = {{"speech", o.output.string()},
               {"speech_hash", git_file_hash(o.output)},
               {"final_cost", res.trace.empty() ? json(nullptr) : json(res.trace.back().cost)},
               {"warnings", res.warnings}};
  if (o.trace_csv) m.outputs["trace"] = o.trace_csv->string();
  m.write(sidecar(o.output));
  return 0;
}

int mix(const MixOptions& o) {
  RunManifest m;
  m.command = "mix";
  m.started_at = utc_timestamp();
  m.seed = o.seed;
  const Waveform clean = read_wav(o.clean);
  Waveform noise;
  if (o.noise) {
    noise = read_wav(*o.noise);
  } else {
    auto rng = make_rng(o.seed, "mix.noise");
    noise = synth_noise(parse_noise_type(o.noise_type), clean.size() + kSampleRate, rng);
  }
  m.config = {{"clean", o.clean.string()},
              {"noise", o.noise ? json(o.noise->string()) : json(nullptr)},
              {"noise_type", o.noise ? json(nullptr) : json(o.noise_type)},
              {"snr_db", o.snr_db}};
  const Mixture mx = mix_at_snr({clean, noise, o.snr_db, derive_seed(o.seed, "mix.crop")});
  write_wav(o.out, mx.mixture);
  m.outputs = {{"mixture", o.out.string()}, {"noise_offset", mx.noise_offset}};
  if (o.clean_out) {
    write_wav(*o.clean_out, mx.scaled_clean);
    m.outputs["clean"] = o.clean_out->string();
  }
  if (o.noise_out) {
    write_wav(*o.noise_out, mx.scaled_noise);
    m.outputs["noise"] = o.noise_out->string();
  }
  m.finished_at = utc_timestamp();
  m.write(sidecar(o.out));
  return 0;
}

int make_testset(const TestsetOptions& o) {
  RunManifest m;
  m.command = "make-testset";
  m.started_at = utc_timestamp();
  m.seed = o.seed;
  auto files = resolve_inputs(o.clean);
  if (files.empty()) throw IoError("no clean utterances found in " + o.clean.string());
  if (o.count && o.count < files.size()) files.resize(o.count);
  std::vector<NoiseType> types;
  for (const auto& t : o.noise_types) types.push_back(parse_noise_type(t));
  if (types.empty()) types = all_noise_types();
  std::vector<std::string> type_names;
  for (auto t : types) type_names.push_back(to_string(t));
  m.config = {{"clean", o.clean.string()}, {"snrs", o.snrs}, {"noise_types", type_names}, {"count", files.size()}};
  const auto items = write_testset(files, o.out, o.snrs, o.seed, types);
  m.finished_at = utc_timestamp();
  m.outputs = {{"index", kTestsetIndex}, {"items", items.size()}};
  m.write(o.out / "run.json");
  std::cout << "wrote " << items.size() << " mixtures to " << o.out.string() << "\n";
  return 0;
}

int evaluate(const EvaluateOptions& o) {
  RunManifest m;
  m.command = "evaluate";
  m.started_at = utc_timestamp();
  m.seed = o.config.seed;
  auto items = read_testset(o.testset);
  if (o.limit && o.limit < items.size()) items.resize(o.limit);
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  check_variant(ckpt, o.variant);
  const Variant variant = ckpt.model.variant();
  std::vector<Algorithm> algs;
  for (const auto& a : o.algorithms) algs.push_back(parse_algorithm(a));
  if (algs.empty()) throw ConfigError("at least one algorithm is required");
  o.config.validate();

  struct Row {
    double noisy = 0.0;
    double enhanced = 0.0;
    std::vector<std::string> warnings;
  };
  const std::size_t total = items.size() * algs.size();
  std::vector<Row> rows(total);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  const auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      try {
        const TestItem& item = items[k / algs.size()];
        const Waveform mixture = read_wav(o.testset / item.mixture);
        const Waveform clean = read_wav(o.testset / item.clean);
        EnhanceConfig cfg = o.config;
        cfg.algorithm = algs[k % algs.size()];
        cfg.seed = derive_seed(o.config.seed, "evaluate." + item.id);
        const EnhanceResult res = rvae::enhance(mixture, ckpt.model, cfg);
        const Waveform ref = trim_edges(clean);
        rows[k] = {si_sdr(ref, trim_edges(mixture)), si_sdr(ref, trim_edges(res.speech)), res.warnings};
        std::lock_guard lock(mu);
        std::cerr << item.id << " " << to_string(cfg.algorithm) << " noisy " << fmt(rows[k].noisy) << " enhanced "
                  << fmt(rows[k].enhanced) << "\n";
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(o.jobs, total));
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  std::ostringstream csv;
  csv << "id,noise_type,snr_db,algorithm,variant,si_sdr_noisy,si_sdr_enhanced\n";
  char buf[64];
  for (std::size_t k = 0; k < total; ++k) {
    const TestItem& item = items[k / algs.size()];
    std::snprintf(buf, sizeof buf, "%g", item.snr_db);
    csv << item.id << ',' << to_string(item.noise) << ',' << buf << ',' << to_string(algs[k % algs.size()]) << ','
        << to_string(variant) << ',' << fmt(rows[k].noisy) << ',' << fmt(rows[k].enhanced) << '\n';
  }
  write_file_atomic(o.report, csv.str());

  json summaries = json::object();
  for (std::size_t a = 0; a < algs.size(); ++a) {
    std::vector<double> enhanced, gain;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const Row& r = rows[i * algs.size() + a];
      enhanced.push_back(r.enhanced);
      gain.push_back(r.enhanced - r.noisy);
    }
    const Summary s = summarize(enhanced), g = summarize(gain);
    summaries[to_string(algs[a])] = {{"si_sdr_median", s.median},  {"si_sdr_ci", {s.ci_low, s.ci_high}},
                                     {"improvement_median", g.median}, {"improvement_ci", {g.ci_low, g.ci_high}},
                                     {"count", s.count}};
    std::cout << to_string(algs[a]) << "-" << to_string(variant) << ": SI-SDR median " << fmt(s.median) << " ["
              << fmt(s.ci_low) << ", " << fmt(s.ci_high) << "], improvement median " << fmt(g.median) << " ["
              << fmt(g.ci_low) << ", " << fmt(g.ci_high) << "] over " << s.count << " mixtures\n";
  }

  m.config = enhance_json(o.config, variant);
  m.config.erase("algorithm");
  m.config["algorithms"] = o.algorithms;
  m.config["checkpoint"] = o.checkpoint.string();
  m.config["testset"] = o.testset.string();
  m.config["variant"] = to_string(variant);
  m.config["jobs"] = o.jobs;
  m.checkpoint_hash = checkpoint_hash(o.checkpoint);
  m.finished_at = utc_timestamp();
  m.outputs = {{"report", o.report.string()}, {"report_hash", git_file_hash(o.report)}, {"summary", summaries}};
  m.write(sidecar(o.report));
  return 0;
}

int gradcheck(const GradcheckOptionsCli& o) {
  GradcheckOptions g;
  g.seeds = o.seeds;
  g.base_seed = o.seed;
  std::vector<CheckResult> results = gradient_suite(g);
  results.push_back(mstep_monotonicity(o.trials, o.sweeps, o.seed));
  results.push_back(mstep_fixed_point(o.trials, o.seed));
  bool ok = true;
  for (const auto& r : results) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e <= %.1e", r.worst, r.tolerance);
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  worst " << buf << "  cases " << r.cases;
    if (!r.detail.empty()) std::cout << "  " << r.detail;
    std::cout << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace rvae::cli
