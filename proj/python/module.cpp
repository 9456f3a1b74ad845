#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rvae/corpus.hpp"
#include "rvae/diagnostics.hpp"
#include "rvae/enhancer.hpp"
#include "rvae/errors.hpp"
#include "rvae/eval.hpp"
#include "rvae/rng.hpp"
#include "rvae/signal.hpp"
#include "rvae/training.hpp"

namespace py = pybind11;
using namespace rvae;

namespace {

using Samples = py::array_t<double, py::array::c_style | py::array::forcecast>;

Waveform to_wave(const Samples& a, int rate = kSampleRate) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-D signal");
  Waveform w;
  w.samples.assign(a.data(), a.data() + a.size());
  w.sample_rate = rate;
  return w;
}

py::array_t<double> to_array(const Waveform& w) { return py::array_t<double>(py::ssize_t(w.size()), w.samples.data()); }

Eigen::MatrixXd power_of(const Samples& a) { return stft(to_wave(a)).power(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recurrent VAE speech priors and VEM/PEEM speech enhancement";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.attr("SAMPLE_RATE") = kSampleRate;
  m.attr("WINDOW_SIZE") = kWindowSize;

  m.def("stft", [](const Samples& x) { return stft(to_wave(x)).bins; }, py::arg("x"),
        "F x N complex STFT (sine window 1024, hop 256).");
  m.def(
      "istft",
      [](const Eigen::MatrixXcd& X, std::size_t length) {
        ComplexSpectrogram spec;
        spec.bins = X;
        return to_array(istft(spec, length));
      },
      py::arg("X"), py::arg("length"));
  m.def("si_sdr", [](const Samples& ref, const Samples& est) { return si_sdr(to_wave(ref), to_wave(est)); },
        py::arg("reference"), py::arg("estimate"));
  m.def(
      "mix_at_snr",
      [](const Samples& clean, const Samples& noise, double snr_db, std::uint64_t seed) {
        const Mixture mx = mix_at_snr({to_wave(clean), to_wave(noise), snr_db, seed});
        return py::make_tuple(to_array(mx.mixture), to_array(mx.scaled_clean), to_array(mx.scaled_noise));
      },
      py::arg("clean"), py::arg("noise"), py::arg("snr_db"), py::arg("seed") = 0,
      "Returns (mixture, scaled_clean, scaled_noise).");
  m.def(
      "synth_utterance",
      [](double seconds, std::uint64_t seed) {
        auto rng = make_rng(seed, "python.utterance");
        return to_array(synth_utterance(seconds, rng));
      },
      py::arg("seconds"), py::arg("seed") = 0);
  m.def(
      "synth_noise",
      [](const std::string& type, std::size_t samples, std::uint64_t seed) {
        auto rng = make_rng(seed, "python.noise");
        return to_array(synth_noise(parse_noise_type(type), samples, rng));
      },
      py::arg("type"), py::arg("samples"), py::arg("seed") = 0);
  m.def("read_wav", [](const std::filesystem::path& p) { return to_array(read_wav(p)); }, py::arg("path"));
  m.def("write_wav", [](const std::filesystem::path& p, const Samples& x) { write_wav(p, to_wave(x)); },
        py::arg("path"), py::arg("samples"));

  py::class_<ModelCheckpoint>(m, "Model")
      .def_property_readonly("variant", [](const ModelCheckpoint& c) { return to_string(c.model.variant()); })
      .def_property_readonly("latent", [](const ModelCheckpoint& c) { return c.model.dims().latent; })
      .def_property_readonly("hidden", [](const ModelCheckpoint& c) { return c.model.dims().hidden; })
      .def_property_readonly("freqs", [](const ModelCheckpoint& c) { return c.model.dims().freqs; })
      .def_property_readonly("epoch", [](const ModelCheckpoint& c) { return c.meta.epoch; })
      .def_property_readonly("steps", [](const ModelCheckpoint& c) { return c.meta.steps; })
      .def("save", [](const ModelCheckpoint& c, const std::filesystem::path& dir) { save_checkpoint(c, dir); },
           py::arg("dir"))
      .def("vfe",
           [](const ModelCheckpoint& c, const Samples& x, std::uint64_t seed) {
             auto rng = make_rng(seed, "python.vfe");
             return vfe(power_of(x), c.model.decoder, c.model.encoder, rng);
           },
           py::arg("x"), py::arg("seed") = 0, "Single-sample free energy of a clean waveform.");
  m.def("load_checkpoint", &load_checkpoint, py::arg("dir"));

  m.def(
      "train",
      [](const std::vector<Samples>& waves, const std::vector<Samples>& validation, const std::string& variant,
         std::size_t latent, std::size_t hidden, std::size_t max_epochs, std::size_t max_steps, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.variant = parse_variant(variant);
        cfg.latent = latent;
        cfg.hidden = hidden;
        cfg.max_epochs = max_epochs;
        cfg.max_steps = max_steps;
        cfg.seed = seed;
        std::vector<Eigen::MatrixXd> tr, va;
        for (const auto& w : waves) tr.push_back(power_of(w));
        for (const auto& w : validation) va.push_back(power_of(w));
        py::gil_scoped_release release;
        return train(tr, va, cfg).checkpoint;
      },
      py::arg("waves"), py::arg("validation") = std::vector<Samples>{}, py::arg("variant") = "rnn",
      py::arg("latent") = 16, py::arg("hidden") = 128, py::arg("max_epochs") = 200, py::arg("max_steps") = 0,
      py::arg("seed") = 0, "Trains a prior on clean waveforms and returns the best-validation model.");

  m.def(
      "enhance",
      [](const Samples& mixture, const ModelCheckpoint& model, const std::string& algorithm, std::size_t iterations,
         std::size_t K, std::uint64_t seed) {
        EnhanceConfig cfg;
        cfg.algorithm = parse_algorithm(algorithm);
        cfg.iterations = iterations;
        cfg.rank = K;
        cfg.seed = seed;
        const Waveform x = to_wave(mixture);
        EnhanceResult res;
        {
          py::gil_scoped_release release;
          res = enhance(x, model.model, cfg);
        }
        std::vector<std::tuple<std::size_t, double, double>> trace;
        for (const auto& r : res.trace) trace.emplace_back(r.iteration, r.cost, r.vfe);
        return py::make_tuple(to_array(res.speech), trace);
      },
      py::arg("mixture"), py::arg("model"), py::arg("algorithm") = "vem", py::arg("iterations") = 500,
      py::arg("K") = 8, py::arg("seed") = 0, "Returns (speech, [(iteration, cost, vfe), ...]).");

  m.def(
      "gradient_suite",
      [](std::size_t seeds) {
        GradcheckOptions o;
        o.seeds = seeds;
        py::list out;
        for (const auto& r : gradient_suite(o))
          out.append(py::dict(py::arg("name") = r.name, py::arg("worst") = r.worst, py::arg("tolerance") = r.tolerance,
                              py::arg("cases") = r.cases, py::arg("passed") = r.passed));
        return out;
      },
      py::arg("seeds") = 20);
}
