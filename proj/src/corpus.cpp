#include "rvae/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rvae/errors.hpp"
#include "rvae/eval.hpp"
#include "rvae/rng.hpp"

namespace rvae {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Second-order all-pole resonator, y[n] = x[n] + b1 y[n-1] - r^2 y[n-2].
struct Resonator {
  double b1 = 0.0, b2 = 0.0, y1 = 0.0, y2 = 0.0, gain = 1.0;

  void tune(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    b1 = 2.0 * r * std::cos(kTwoPi * freq / fs);
    b2 = -r * r;
    gain = 1.0 - r;
  }
  double operator()(double x) {
    const double y = gain * x + b1 * y1 + b2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// sum_{k=1..K} cos(k phi) / K, evaluated with the Dirichlet kernel.
double harmonic_sum(double phi, int harmonics) {
  const double half = std::sin(0.5 * phi);
  if (std::abs(half) < 1e-9) return 1.0;
  return (std::sin((harmonics + 0.5) * phi) / (2.0 * half) - 0.5) / harmonics;
}

void normalize_rms(std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  const double rms = std::sqrt(e / double(std::max<std::size_t>(x.size(), 1)));
  if (rms > 0.0)
    for (double& v : x) v /= rms;
}

std::string utt_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt_%05zu.wav", i);
  return buf;
}

void write_list(const fs::path& file, const std::vector<std::string>& names) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& n : names) out << n << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

}  // namespace

Waveform synth_utterance(double seconds, std::mt19937_64& rng, const SynthSpeechConfig& cfg) {
  if (!(seconds > 0.0)) throw ContractError("synth_utterance: duration must be positive");
  const double fs = kSampleRate;
  const auto n = std::size_t(std::llround(seconds * fs));
  Waveform out;
  out.samples.assign(n, 0.0);

  const double base = uniform(rng, cfg.f0_min, cfg.f0_max);
  Resonator f1, f2, f3;
  std::normal_distribution<double> aspiration;
  double tilt = 0.0, phase = 0.0;
  auto t = std::size_t(uniform(rng, 0.03, 0.12) * fs);
  while (t < n) {
    const auto len = std::size_t(uniform(rng, 0.12, 0.35) * fs);
    const double f0a = std::clamp(base * uniform(rng, 0.85, 1.15), cfg.f0_min, cfg.f0_max);
    const double f0b = std::clamp(f0a * uniform(rng, 0.8, 1.2), cfg.f0_min, cfg.f0_max);
    f1.tune(uniform(rng, 300.0, 900.0), uniform(rng, 60.0, 160.0), fs);
    f2.tune(uniform(rng, 900.0, 2500.0), uniform(rng, 80.0, 200.0), fs);
    f3.tune(uniform(rng, 2500.0, 3500.0), uniform(rng, 150.0, 300.0), fs);
    const double depth = uniform(rng, 0.2, 0.5);
    const double am_rate = uniform(rng, 3.0, 8.0);
    const double am_phase = uniform(rng, 0.0, kTwoPi);
    const double level = uniform(rng, 0.4, 1.0);
    const double breath = uniform(rng, 0.05, 0.2);

    for (std::size_t k = 0; k < len && t + k < n; ++k) {
      const double tau = double(k) / double(len);
      const double f0 = f0a + (f0b - f0a) * tau;
      phase = std::fmod(phase + kTwoPi * f0 / fs, kTwoPi);
      const int harmonics = std::max(1, int(0.45 * fs / f0));
      const double src = harmonic_sum(phase, harmonics) + breath * aspiration(rng) / std::sqrt(double(harmonics));
      tilt = 0.35 * src + 0.65 * tilt;
      const double voiced = f1(tilt) + 0.6 * f2(tilt) + 0.25 * f3(tilt);
      const double shape = std::pow(std::sin(std::numbers::pi * tau), 2.0);
      const double am = 1.0 + depth * std::sin(kTwoPi * am_rate * double(t + k) / fs + am_phase);
      out.samples[t + k] = level * shape * am * voiced;
    }
    t += len + std::size_t(uniform(rng, 0.02, 0.15) * fs);
  }

  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  std::normal_distribution<double> floor_noise(0.0, 1e-4);
  const double scale = peak > 0.0 ? cfg.peak / peak : 1.0;
  for (double& v : out.samples) v = v * scale + floor_noise(rng);
  return out;
}

std::string to_string(NoiseType t) {
  switch (t) {
    case NoiseType::white: return "white";
    case NoiseType::pink: return "pink";
    case NoiseType::brown: return "brown";
    case NoiseType::modulated: return "modulated";
  }
  return "?";
}

NoiseType parse_noise_type(std::string_view name) {
  for (auto t : all_noise_types())
    if (to_string(t) == name) return t;
  throw ConfigError("unknown noise type '" + std::string(name) + "'");
}

std::vector<NoiseType> all_noise_types() {
  return {NoiseType::white, NoiseType::pink, NoiseType::brown, NoiseType::modulated};
}

Waveform synth_noise(NoiseType type, std::size_t samples, std::mt19937_64& rng) {
  if (samples == 0) throw ContractError("synth_noise: zero length");
  std::normal_distribution<double> gauss;
  Waveform out;
  auto& x = out.samples;
  x.resize(samples);
  for (double& v : x) v = gauss(rng);

  switch (type) {
    case NoiseType::white: break;
    case NoiseType::pink: {
      std::size_t size = 1;
      while (size < samples) size <<= 1;
      std::vector<std::complex<double>> buf(size);
      std::copy(x.begin(), x.end(), buf.begin());
      fft_inplace(buf);
      buf[0] = 0.0;
      for (std::size_t k = 1; k < size; ++k) {
        const std::size_t f = std::min(k, size - k);
        buf[k] /= std::sqrt(double(f));
      }
      fft_inplace(buf, true);
      for (std::size_t i = 0; i < samples; ++i) x[i] = buf[i].real();
      break;
    }
    case NoiseType::brown: {
      double y = 0.0, mean = 0.0;
      for (double& v : x) v = y = 0.995 * y + v;
      for (double v : x) mean += v;
      mean /= double(samples);
      for (double& v : x) v -= mean;
      break;
    }
    case NoiseType::modulated: {
      const double rate = uniform(rng, 0.5, 4.0);
      const double offset = uniform(rng, 0.0, kTwoPi);
      double y = 0.0;
      for (std::size_t i = 0; i < samples; ++i) {
        y = 0.3 * x[i] + 0.7 * y;
        x[i] = y * (1.0 + 0.8 * std::sin(kTwoPi * rate * double(i) / kSampleRate + offset));
      }
      break;
    }
  }
  normalize_rms(x);
  return out;
}

CorpusSummary write_synth_corpus(const fs::path& dir, double minutes, std::uint64_t seed, double validation_fraction,
                                 const SynthSpeechConfig& cfg) {
  if (!(minutes > 0.0)) throw ContractError("corpus length must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ContractError("validation fraction must lie in [0, 1)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto dur_rng = make_rng(seed, "corpus.durations");
  const double total = minutes * 60.0;
  std::vector<double> durations;
  for (double left = total; left > 0.0;) {
    double d = uniform(dur_rng, cfg.min_seconds, cfg.max_seconds);
    if (left - d < cfg.min_seconds) d = left;
    durations.push_back(d);
    left -= d;
  }

  CorpusSummary summary;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    auto rng = make_rng(seed, "corpus.utt." + std::to_string(i));
    const Waveform w = synth_utterance(durations[i], rng, cfg);
    names.push_back(utt_name(i));
    write_wav(dir / names.back(), w, WavFormat::float32);
    summary.total_seconds += w.duration_seconds();
  }

  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  auto split_rng = make_rng(seed, "corpus.split");
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = names.size() < 2 ? 0 : std::size_t(std::lround(validation_fraction * double(names.size())));
  if (validation_fraction > 0.0 && names.size() >= 2) n_val = std::max<std::size_t>(n_val, 1);
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? summary.validation : summary.train).push_back(names[order[i]]);
  std::sort(summary.train.begin(), summary.train.end());
  std::sort(summary.validation.begin(), summary.validation.end());
  write_list(dir / "train.list", summary.train);
  write_list(dir / "val.list", summary.validation);
  return summary;
}

std::vector<fs::path> read_list(const fs::path& list_file) {
  std::ifstream in(list_file);
  if (!in) throw IoError("cannot open list " + list_file.string());
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    fs::path p(line);
    out.push_back(p.is_absolute() ? p : list_file.parent_path() / p);
  }
  return out;
}

std::vector<fs::path> list_wavs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> resolve_inputs(const fs::path& path) {
  if (fs::is_directory(path)) return list_wavs(path);
  if (path.extension() == ".wav") return {path};
  return read_list(path);
}

std::vector<TestItem> write_testset(const std::vector<fs::path>& clean_files, const fs::path& dir,
                                    const std::vector<double>& snrs, std::uint64_t seed,
                                    const std::vector<NoiseType>& types) {
  if (clean_files.empty()) throw ContractError("write_testset: no clean utterances");
  if (snrs.empty() || types.empty()) throw ContractError("write_testset: no SNRs or noise types");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto draw = make_rng(seed, "testset.draw");
  std::vector<TestItem> items;
  for (std::size_t i = 0; i < clean_files.size(); ++i) {
    const Waveform clean = read_wav(clean_files[i]);
    TestItem item;
    item.id = clean_files[i].stem().string();
    item.noise = types[std::uniform_int_distribution<std::size_t>(0, types.size() - 1)(draw)];
    item.snr_db = snrs[std::uniform_int_distribution<std::size_t>(0, snrs.size() - 1)(draw)];
    auto noise_rng = make_rng(seed, "testset.noise." + std::to_string(i));
    MixSpec spec{clean, synth_noise(item.noise, clean.size() + kSampleRate, noise_rng), item.snr_db,
                 derive_seed(seed, "testset.mix." + std::to_string(i))};
    const Mixture m = mix_at_snr(spec);
    item.mixture = item.id + ".mix.wav";
    item.clean = item.id + ".clean.wav";
    write_wav(dir / item.mixture, m.mixture);
    write_wav(dir / item.clean, m.scaled_clean);
    items.push_back(item);
  }

  std::ofstream out(dir / kTestsetIndex);
  if (!out) throw IoError("cannot write test set index in " + dir.string());
  out << "id,noise_type,snr_db,mixture,clean\n";
  for (const auto& it : items)
    out << it.id << ',' << to_string(it.noise) << ',' << it.snr_db << ',' << it.mixture.string() << ','
        << it.clean.string() << '\n';
  if (!out) throw IoError("write failed: test set index");
  return items;
}

std::vector<TestItem> read_testset(const fs::path& dir) {
  const fs::path index = dir / kTestsetIndex;
  std::ifstream in(index);
  if (!in) throw IoError("no " + std::string(kTestsetIndex) + " in " + dir.string());
  std::vector<TestItem> items;
  std::string line;
  std::getline(in, line);  // header
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw FormatError(index.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    TestItem it;
    it.id = cols[0];
    it.noise = parse_noise_type(cols[1]);
    try {
      it.snr_db = std::stod(cols[2]);
    } catch (const std::exception&) {
      throw FormatError(index.string() + ":" + std::to_string(lineno) + ": bad SNR '" + cols[2] + "'");
    }
    it.mixture = cols[3];
    it.clean = cols[4];
    items.push_back(std::move(it));
  }
  if (items.empty()) throw ContractError("test set " + dir.string() + " is empty");
  return items;
}

}  // namespace rvae
