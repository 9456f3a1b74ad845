#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rvae/adam.hpp"
#include "rvae/model.hpp"

namespace rvae {

/// Paired decoder (theta_dec) and encoder (theta_enc).
struct Model {
  DecoderParams decoder;
  EncoderParams encoder;

  Variant variant() const { return decoder.variant; }
  const ModelDims& dims() const { return decoder.dims; }
  static Model init(Variant variant, ModelDims dims, std::uint64_t seed);
};

/// Time-major batch of B sequences of N frames; row n*B + b is frame n of
/// sequence b. Padding rows have mask 0.
struct SequenceBatch {
  Tensor features;  // (N*B) x F, log(1 + |s|^2)
  Tensor power;     // (N*B) x F, |s|^2
  Tensor mask;      // (N*B) x 1
  std::size_t batch = 1;

  std::size_t rows() const { return mask.size(); }
  std::size_t frames() const { return batch ? rows() / batch : 0; }
  double valid_frames() const;

  /// A single full sequence from an F x N power spectrogram.
  static SequenceBatch single(const Eigen::MatrixXd& power);
};

struct Segment {
  const Eigen::MatrixXd* power;
  std::size_t start;
  std::size_t length;
};

/// Packs segments into one batch padded to `frames` rows per sequence.
SequenceBatch make_batch(const std::vector<Segment>& segments, std::size_t frames);

/// Test-time substitution v_s -> g_n v_s + v_b (gain per row, noise variance per entry).
struct MixtureTerms {
  Tensor gain;       // (N*B) x 1
  Tensor noise_var;  // (N*B) x F
};

struct FreeEnergyGraph {
  ad::Var objective;   // -sum d_IS - KL   (to maximise)
  ad::Var is_sum;      // sum mask * d_IS(|s|^2, v)
  ad::Var kl_sum;      // sum mask * KL(q(z_n | .) || N(0, I))
  ad::Var speech_var;  // (N*B) x F, v_s(z)
  ad::Var observed_var;  // v_s(z), or v_x(z) with a mixture
  EncoderPass posterior;
};

/// Single-sample (R = 1) reparameterised estimate of the variational free
/// energy, dropping additive constants:
///   L = -sum_{f,n} d_IS(|s_fn|^2, v_fn(z)) - sum_n KL(q(z_n | z_{0:n-1}, s) || p(z_n))
FreeEnergyGraph build_free_energy(const DecoderParams& dec, const Bindings& dec_bound, const EncoderParams& enc,
                                  const Bindings& enc_bound, const SequenceBatch& batch, const Tensor& eps,
                                  const MixtureTerms* mixture = nullptr);

/// Values of one free-energy sample, for diagnostics and oracles.
struct FreeEnergySample {
  double vfe = 0.0;
  double is_sum = 0.0;
  double kl_sum = 0.0;
  LatentSequence z;
  PosteriorParams posterior;
  VarianceField speech_var;  // F x N
};

FreeEnergySample free_energy_sample(const Eigen::MatrixXd& power, const DecoderParams& dec, const EncoderParams& enc,
                                    const Tensor& eps);

double vfe(const Eigen::MatrixXd& power, const DecoderParams& dec, const EncoderParams& enc, std::mt19937_64& rng);
double vfe(const ComplexSpectrogram& spec, const DecoderParams& dec, const EncoderParams& enc,
           std::mt19937_64& rng);

struct TrainConfig {
  Variant variant = Variant::rnn;
  std::size_t latent = 16;
  std::size_t hidden = 128;
  std::size_t ffnn_batch_frames = 128;
  std::size_t sequences_per_batch = 32;
  std::size_t sequence_length = 50;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  std::size_t max_steps = 0;  // 0 = no limit
  double clip_norm = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingMeta {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::optional<double> validation_vfe;  // per frame
  std::uint64_t seed = 0;
};

struct ModelCheckpoint {
  Model model;
  TrainingMeta meta;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_vfe = 0.0;       // per frame, running mean over the epoch
  double validation_vfe = 0.0;  // per frame
  bool improved = false;
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // best validation epoch
  std::vector<EpochRecord> history;
  std::vector<double> step_vfe;  // per-frame training VFE of every step
  bool diverged = false;
  std::string message;
};

/// Stops once `patience` consecutive epochs fail to beat the best score.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records a validation score (higher is better); returns true if it is the new best.
  bool update(double score);
  bool should_stop() const { return stale_ >= patience_; }
  std::optional<double> best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::optional<double> best_;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Maximises the VFE over theta_enc and theta_dec with Adam. `validation` may
/// be empty, in which case the training set doubles as validation set.
TrainResult train(const std::vector<Eigen::MatrixXd>& corpus, const std::vector<Eigen::MatrixXd>& validation,
                  const TrainConfig& cfg, const EpochObserver& observer = {});
TrainResult train(const std::vector<ComplexSpectrogram>& corpus, const TrainConfig& cfg);

// ---- checkpoint directory: manifest.json + weights.bin ---------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& dir);
ModelCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace rvae
