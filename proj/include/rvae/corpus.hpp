#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rvae/signal.hpp"

namespace rvae {

// ---- synthetic speech-like signals -------------------------------------------------------

struct SynthSpeechConfig {
  double f0_min = 80.0;
  double f0_max = 300.0;
  double min_seconds = 1.5;
  double max_seconds = 3.0;
  double peak = 0.5;
};

/// Voiced "syllables" separated by short pauses: a band-limited harmonic
/// source with a gliding fundamental and a little aspiration noise, shaped by
/// three AR(2) formant resonators and a syllabic envelope with slow amplitude
/// modulation.
Waveform synth_utterance(double seconds, std::mt19937_64& rng, const SynthSpeechConfig& cfg = {});

// ---- synthetic noise ---------------------------------------------------------------------

enum class NoiseType { white, pink, brown, modulated };

std::string to_string(NoiseType t);
NoiseType parse_noise_type(std::string_view name);
std::vector<NoiseType> all_noise_types();

/// Unit-RMS noise of the given type.
Waveform synth_noise(NoiseType type, std::size_t samples, std::mt19937_64& rng);

// ---- corpus directories -------------------------------------------------------------------

struct CorpusSummary {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  double total_seconds = 0.0;
};

/// Writes utt_NNNNN.wav files plus train.list / val.list (one file name per
/// line) into `dir`. Total duration equals `minutes` up to one sample per file.
CorpusSummary write_synth_corpus(const std::filesystem::path& dir, double minutes, std::uint64_t seed,
                                 double validation_fraction = 0.1, const SynthSpeechConfig& cfg = {});

/// Reads a list file (relative names resolved against its directory). Blank
/// lines and lines starting with '#' are skipped.
std::vector<std::filesystem::path> read_list(const std::filesystem::path& list_file);

/// All *.wav files of a directory, sorted by name.
std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir);

/// Utterances either from a list file or from a directory of WAVs.
std::vector<std::filesystem::path> resolve_inputs(const std::filesystem::path& path);

// ---- test sets ----------------------------------------------------------------------------

struct TestItem {
  std::string id;
  NoiseType noise = NoiseType::white;
  double snr_db = 0.0;
  std::filesystem::path mixture;  // relative to the test set directory
  std::filesystem::path clean;
};

inline constexpr const char* kTestsetIndex = "testset.csv";

/// Mixes each clean utterance with a freshly generated noise of a uniformly
/// drawn type at a uniformly drawn SNR from `snrs`, and writes
/// <id>.mix.wav, <id>.clean.wav and testset.csv.
std::vector<TestItem> write_testset(const std::vector<std::filesystem::path>& clean_files,
                                    const std::filesystem::path& dir, const std::vector<double>& snrs,
                                    std::uint64_t seed, const std::vector<NoiseType>& types = all_noise_types());

std::vector<TestItem> read_testset(const std::filesystem::path& dir);

}  // namespace rvae
