#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rvae/enhancer.hpp"
#include "rvae/training.hpp"

namespace rvae::cli {

namespace fs = std::filesystem;

struct SynthCorpusOptions {
  fs::path out;
  double minutes = 10.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  fs::path train;  // list file or directory of WAVs
  std::optional<fs::path> validation;
  fs::path out;
  std::string variant = "rnn";
  TrainConfig config;
  bool quiet = false;
};

struct EnhanceOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
  std::optional<std::string> variant;  // must match the checkpoint when given
  std::string algorithm = "vem";
  EnhanceConfig config;
  std::optional<fs::path> trace_csv;
};

struct MixOptions {
  fs::path clean;
  std::optional<fs::path> noise;
  std::string noise_type = "white";
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<fs::path> clean_out;
  std::optional<fs::path> noise_out;
};

struct TestsetOptions {
  fs::path clean;
  fs::path out;
  std::vector<double> snrs{-5.0, 0.0, 5.0};
  std::vector<std::string> noise_types;
  std::size_t count = 0;  // 0 = all
  std::uint64_t seed = 0;
};

struct EvaluateOptions {
  fs::path checkpoint;
  fs::path testset;
  fs::path report;
  std::optional<std::string> variant;
  std::vector<std::string> algorithms{"vem"};
  EnhanceConfig config;
  std::size_t jobs = 1;
  std::size_t limit = 0;  // 0 = all items
};

struct GradcheckOptionsCli {
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  std::size_t trials = 1000;
  std::size_t sweeps = 200;
};

int synth_corpus(const SynthCorpusOptions& o);
int train(const TrainOptions& o);
int enhance(const EnhanceOptions& o);
int mix(const MixOptions& o);
int make_testset(const TestsetOptions& o);
int evaluate(const EvaluateOptions& o);
int gradcheck(const GradcheckOptionsCli& o);

/// Throws ConfigError naming both variants when `requested` differs from the checkpoint.
void check_variant(const ModelCheckpoint& ckpt, const std::optional<std::string>& requested);

}  // namespace rvae::cli
