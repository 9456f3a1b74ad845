#include "rvae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rvae/errors.hpp"
#include "rvae/rng.hpp"

namespace rvae {

Model Model::init(Variant variant, ModelDims dims, std::uint64_t seed) {
  auto dec_rng = make_rng(seed, "init.decoder");
  auto enc_rng = make_rng(seed, "init.encoder");
  return {DecoderParams::init(variant, dims, dec_rng), EncoderParams::init(variant, dims, enc_rng)};
}

double SequenceBatch::valid_frames() const { return std::accumulate(mask.values().begin(), mask.values().end(), 0.0); }

SequenceBatch SequenceBatch::single(const Eigen::MatrixXd& power) {
  const Segment seg{&power, 0, std::size_t(power.cols())};
  return make_batch({seg}, seg.length);
}

SequenceBatch make_batch(const std::vector<Segment>& segments, std::size_t frames) {
  if (segments.empty()) throw ContractError("make_batch: no segments");
  const std::size_t batch = segments.size();
  const std::size_t freqs = std::size_t(segments.front().power->rows());
  SequenceBatch out;
  out.batch = batch;
  out.features = Tensor::matrix(frames * batch, freqs);
  out.power = Tensor::matrix(frames * batch, freqs);
  out.mask = Tensor::matrix(frames * batch, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const Segment& s = segments[b];
    if (std::size_t(s.power->rows()) != freqs) throw DimensionError("make_batch: frequency counts differ");
    if (s.length > frames || s.start + s.length > std::size_t(s.power->cols()))
      throw DimensionError("make_batch: segment exceeds its spectrogram or the batch length");
    for (std::size_t n = 0; n < s.length; ++n) {
      const std::size_t row = n * batch + b;
      const auto col = s.power->col(Eigen::Index(s.start + n));
      for (std::size_t f = 0; f < freqs; ++f) {
        const double p = col(Eigen::Index(f));
        out.power(row, f) = p;
        out.features(row, f) = std::log1p(p);
      }
      out.mask[row] = 1.0;
    }
  }
  return out;
}

FreeEnergyGraph build_free_energy(const DecoderParams& dec, const Bindings& dec_bound, const EncoderParams& enc,
                                  const Bindings& enc_bound, const SequenceBatch& batch, const Tensor& eps,
                                  const MixtureTerms* mixture) {
  if (dec.variant != enc.variant)
    throw ConfigError("decoder variant " + to_string(dec.variant) + " does not match encoder variant " +
                      to_string(enc.variant));
  if (batch.features.cols() != dec.dims.freqs)
    throw ConfigError("free energy: spectrogram has " + std::to_string(batch.features.cols()) +
                      " bins, model expects F=" + std::to_string(dec.dims.freqs));
  ad::Tape& tape = enc_bound.tape();
  if (&dec_bound.tape() != &tape) throw ContractError("free energy: bindings on different tapes");

  FreeEnergyGraph g;
  g.posterior = encode_on_tape(enc, enc_bound, tape.constant(batch.features), batch.batch, eps, &batch.mask);
  g.speech_var = decode_on_tape(dec, dec_bound, g.posterior.z, batch.batch, &batch.mask);
  g.observed_var = g.speech_var;
  if (mixture) {
    if (mixture->gain.size() != batch.rows() || mixture->noise_var.rows() != batch.rows() ||
        mixture->noise_var.cols() != dec.dims.freqs)
      throw DimensionError("free energy: mixture terms do not match the batch");
    g.observed_var = ad::add(ad::scale_rows(g.speech_var, mixture->gain), tape.constant(mixture->noise_var));
  }
  g.is_sum = ad::is_divergence_sum(g.observed_var, batch.power, batch.mask);
  g.kl_sum = ad::gaussian_kl_sum(g.posterior.mean, g.posterior.var, batch.mask);
  g.objective = ad::scale(ad::add(g.is_sum, g.kl_sum), -1.0);
  return g;
}

FreeEnergySample free_energy_sample(const Eigen::MatrixXd& power, const DecoderParams& dec, const EncoderParams& enc,
                                    const Tensor& eps) {
  ad::Tape tape;
  const Bindings bd(tape, dec.tensors, false), be(tape, enc.tensors, false);
  const SequenceBatch batch = SequenceBatch::single(power);
  const FreeEnergyGraph g = build_free_energy(dec, bd, enc, be, batch, eps);
  FreeEnergySample s;
  s.vfe = g.objective.value()[0];
  s.is_sum = g.is_sum.value()[0];
  s.kl_sum = g.kl_sum.value()[0];
  s.z = {g.posterior.z.value()};
  s.posterior = {g.posterior.mean.value(), g.posterior.var.value()};
  s.speech_var = {g.speech_var.value().as_matrix().transpose()};
  return s;
}

double vfe(const Eigen::MatrixXd& power, const DecoderParams& dec, const EncoderParams& enc, std::mt19937_64& rng) {
  const Tensor eps = standard_normal(std::size_t(power.cols()), enc.dims.latent, rng);
  const double value = free_energy_sample(power, dec, enc, eps).vfe;
  if (!std::isfinite(value)) throw NumericError("vfe: non-finite free energy");
  return value;
}

double vfe(const ComplexSpectrogram& spec, const DecoderParams& dec, const EncoderParams& enc,
           std::mt19937_64& rng) {
  return vfe(spec.power(), dec, enc, rng);
}

void TrainConfig::validate() const {
  if (latent == 0 || hidden == 0) throw ConfigError("latent and hidden sizes must be positive");
  if (ffnn_batch_frames == 0 || sequences_per_batch == 0 || sequence_length == 0)
    throw ConfigError("batch sizes must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(adam.step_size > 0.0)) throw ConfigError("Adam step size must be positive");
}

bool EarlyStopping::update(double score) {
  if (!best_ || score > *best_) {
    best_ = score;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

namespace {

struct Plan {
  std::vector<Segment> segments;
  std::size_t batch;
  std::size_t frames;
};

Plan plan_segments(const std::vector<Eigen::MatrixXd>& corpus, const TrainConfig& cfg) {
  Plan plan;
  if (cfg.variant == Variant::ffnn) {
    plan.batch = cfg.ffnn_batch_frames;
    plan.frames = 1;
    for (const auto& p : corpus)
      for (std::size_t n = 0; n < std::size_t(p.cols()); ++n) plan.segments.push_back({&p, n, 1});
  } else {
    plan.batch = cfg.sequences_per_batch;
    plan.frames = cfg.sequence_length;
    for (const auto& p : corpus) {
      const std::size_t total = std::size_t(p.cols());
      for (std::size_t start = 0; start < total; start += cfg.sequence_length)
        plan.segments.push_back({&p, start, std::min(cfg.sequence_length, total - start)});
    }
  }
  return plan;
}

SequenceBatch batch_from(const Plan& plan, std::size_t first) {
  const std::size_t last = std::min(first + plan.batch, plan.segments.size());
  std::vector<Segment> segs(plan.segments.begin() + std::ptrdiff_t(first), plan.segments.begin() + std::ptrdiff_t(last));
  std::size_t frames = 0;
  for (const auto& s : segs) frames = std::max(frames, s.length);
  return make_batch(segs, frames);
}

// Per-frame VFE over a whole set with a fixed noise stream, so epochs are
// compared on common random numbers.
double evaluate(const Model& model, const Plan& plan, std::uint64_t seed) {
  auto rng = make_rng(seed, "train.validation");
  double total = 0.0, frames = 0.0;
  for (std::size_t first = 0; first < plan.segments.size(); first += plan.batch) {
    const SequenceBatch sb = batch_from(plan, first);
    const Tensor eps = standard_normal(sb.rows(), model.dims().latent, rng);
    ad::Tape tape;
    const Bindings bd(tape, model.decoder.tensors, false), be(tape, model.encoder.tensors, false);
    total += build_free_energy(model.decoder, bd, model.encoder, be, sb, eps).objective.value()[0];
    frames += sb.valid_frames();
  }
  return frames > 0 ? total / frames : 0.0;
}

void init_output_bias(Model& model, const std::vector<Eigen::MatrixXd>& corpus) {
  const std::size_t freqs = model.dims().freqs;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(Eigen::Index(freqs));
  double count = 0.0;
  for (const auto& p : corpus) {
    acc += p.array().max(kVarianceFloor).log().matrix().rowwise().sum();
    count += double(p.cols());
  }
  Tensor& bias = model.decoder.tensors.at("dec.out.b");
  for (std::size_t f = 0; f < freqs; ++f) bias[f] = acc(Eigen::Index(f)) / std::max(count, 1.0);
}

bool all_finite(const ParamSet& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

}  // namespace

TrainResult train(const std::vector<Eigen::MatrixXd>& corpus, const std::vector<Eigen::MatrixXd>& validation,
                  const TrainConfig& cfg, const EpochObserver& observer) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("train: empty corpus");
  const std::size_t freqs = std::size_t(corpus.front().rows());
  for (const auto* set : {&corpus, &validation})
    for (const auto& p : *set)
      if (std::size_t(p.rows()) != freqs || p.cols() == 0 || !p.allFinite())
        throw ContractError("train: spectrograms must share F and be finite and non-empty");

  Model model = Model::init(cfg.variant, ModelDims{cfg.latent, freqs, cfg.hidden}, cfg.seed);
  init_output_bias(model, corpus);

  Plan plan = plan_segments(corpus, cfg);
  const Plan val_plan = plan_segments(validation.empty() ? corpus : validation, cfg);
  auto shuffle_rng = make_rng(cfg.seed, "train.shuffle");
  auto eps_rng = make_rng(cfg.seed, "train.eps");
  AdamState adam_dec(cfg.adam), adam_enc(cfg.adam);
  EarlyStopping stopper(cfg.patience);

  TrainResult result;
  result.checkpoint = {model, TrainingMeta{0, 0, std::nullopt, cfg.seed}};
  std::size_t steps = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(plan.segments.begin(), plan.segments.end(), shuffle_rng);
    double epoch_vfe = 0.0, epoch_frames = 0.0;
    bool step_limit = false;
    for (std::size_t first = 0; first < plan.segments.size(); first += plan.batch) {
      const SequenceBatch sb = batch_from(plan, first);
      const Tensor eps = standard_normal(sb.rows(), cfg.latent, eps_rng);
      ad::Tape tape;
      const Bindings bd(tape, model.decoder.tensors, true), be(tape, model.encoder.tensors, true);
      const FreeEnergyGraph g = build_free_energy(model.decoder, bd, model.encoder, be, sb, eps);
      const double objective = g.objective.value()[0];
      const double valid = sb.valid_frames();
      if (!std::isfinite(objective)) {
        result.diverged = true;
        result.message = "non-finite VFE at step " + std::to_string(steps + 1) + " (epoch " + std::to_string(epoch) +
                         "); returning the last good checkpoint";
        return result;
      }
      tape.backward(ad::scale(g.objective, -1.0 / valid));
      ParamSet gd = bd.gradients(), ge = be.gradients();
      if (!all_finite(gd) || !all_finite(ge)) {
        result.diverged = true;
        result.message = "non-finite gradient at step " + std::to_string(steps + 1) + "; returning the last good checkpoint";
        return result;
      }
      const double norm = std::hypot(global_norm(gd), global_norm(ge));
      if (norm > cfg.clip_norm) {
        for (ParamSet* grads : {&gd, &ge})
          for (auto& [name, t] : *grads)
            for (double& x : t.values()) x *= cfg.clip_norm / norm;
      }
      adam_dec.minimize(model.decoder.tensors, gd);
      adam_enc.minimize(model.encoder.tensors, ge);
      ++steps;
      result.step_vfe.push_back(objective / valid);
      epoch_vfe += objective;
      epoch_frames += valid;
      if (cfg.max_steps && steps >= cfg.max_steps) {
        step_limit = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = steps;
    rec.train_vfe = epoch_vfe / std::max(epoch_frames, 1.0);
    rec.validation_vfe = evaluate(model, val_plan, cfg.seed);
    if (!std::isfinite(rec.validation_vfe)) {
      result.diverged = true;
      result.message = "non-finite validation VFE after epoch " + std::to_string(epoch);
      return result;
    }
    rec.improved = stopper.update(rec.validation_vfe);
    if (rec.improved) result.checkpoint = {model, TrainingMeta{epoch, steps, rec.validation_vfe, cfg.seed}};
    result.history.push_back(rec);
    if (observer) observer(rec);
    if (step_limit || stopper.should_stop()) break;
  }
  return result;
}

TrainResult train(const std::vector<ComplexSpectrogram>& corpus, const TrainConfig& cfg) {
  std::vector<Eigen::MatrixXd> power;
  power.reserve(corpus.size());
  for (const auto& s : corpus) power.push_back(s.power());
  return train(power, {}, cfg);
}

}  // namespace rvae
