// SPDX-License-Identifier: Apache-2.0
#include "scdnet/cascade.hpp"

#include <stdexcept>

namespace scdnet {

const char* to_string(FusionMode mode) { return mode == FusionMode::mean_bits ? "mean_bits" : "mean_prob"; }

FusionMode fusion_from_string(const std::string& s) {
  if (s == "mean_bits") return FusionMode::mean_bits;
  if (s == "mean_prob") return FusionMode::mean_prob;
  throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

Prediction fuse(const Prediction& current, const Prediction& previous, FusionMode mode, const Mat& code_table) {
  if (current.bits.rows() != previous.bits.rows() || current.bits.cols() != previous.bits.cols() ||
      current.probs.rows() != previous.probs.rows() || current.probs.cols() != previous.probs.cols()) {
    throw ShapeError("fuse: bits " + shape_str(current.bits.value()) + " / " + shape_str(previous.bits.value()) +
                     ", probs " + shape_str(current.probs.value()) + " / " + shape_str(previous.probs.value()));
  }
  Prediction out;
  if (mode == FusionMode::mean_bits) {
    out.bits = ops::scale(ops::add(current.bits, previous.bits), 0.5);
    out.probs = current.probs;
  } else {
    // The mean of two distributions is already normalized.
    out.probs = ops::scale(ops::add(current.probs, previous.probs), 0.5);
    out.bits = ops::matmul(out.probs, Tensor::constant(code_table));
  }
  return out;
}

CascadeModel::CascadeModel(const StageConfig& cfg, const BitCodec& codec, int num_stages, FusionMode fusion,
                           Rng& init_rng)
    : cfg_(cfg), codec_(codec), fusion_(fusion) {
  if (num_stages < 1) throw std::invalid_argument("CascadeModel: need at least one stage");
  for (int i = 1; i <= num_stages; ++i) {
    stages_.push_back(std::make_unique<DiffusionStage>(cfg, codec, i, init_rng, "stage" + std::to_string(i)));
  }
}

std::vector<Tensor> CascadeModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& s : stages_) {
    auto p = s->params().tensors();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void CascadeModel::freeze_stage(int i, bool frozen) { stage(i).params().set_trainable(!frozen); }

void CascadeModel::export_params(Checkpoint& ckpt) const {
  for (const auto& s : stages_) s->params().export_to(ckpt);
}

void CascadeModel::import_params(const Checkpoint& ckpt) {
  for (auto& s : stages_) s->params().import_from(ckpt);
}

std::vector<Tensor> CascadeModel::encode_visual(const VisualBatch& visual, const ForwardMode& mode) const {
  std::vector<Tensor> out;
  out.reserve(stages_.size());
  for (const auto& s : stages_) out.push_back(s->encode_visual(visual, mode));
  return out;
}

CascadeOutputs CascadeModel::forward(const Mat& x_t, std::span<const double> gammas,
                                     const std::vector<Tensor>& visual_tokens, const std::vector<int>& visual_lens,
                                     const std::vector<Mat>& self_conds, const std::vector<Sentence>& retrieved,
                                     const ForwardMode& mode) const {
  if (visual_tokens.size() != stages_.size() || self_conds.size() != stages_.size()) {
    throw std::invalid_argument("cascade forward: need one visual encoding and one self-conditioning input per stage");
  }
  CascadeOutputs out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    ConditioningBundle bundle;
    bundle.self_cond = self_conds[i];
    bundle.retrieved = retrieved;
    if (i > 0) bundle.prev_stage = out.fused.back().bits.value();
    StageOutput o = stages_[i]->forward(x_t, gammas, visual_tokens[i], visual_lens, bundle, mode);
    ++evaluations_;
    Prediction p{o.bits, o.probs};
    out.fused.push_back(i == 0 ? p : fuse(p, out.fused.back(), fusion_, codec_.table()));
    out.raw.push_back(std::move(o));
  }
  return out;
}

Mat encode_batch(const BitCodec& codec, const std::vector<Sentence>& sentences, int length) {
  Mat x(static_cast<Eigen::Index>(sentences.size()) * length, codec.bits());
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    x.middleRows(static_cast<Eigen::Index>(b) * length, length) = codec.encode_sentence(sentences[b], length);
  }
  return x;
}

std::vector<Sentence> split_rows(const Sentence& flat, int batch, int length) {
  if (static_cast<int>(flat.size()) != batch * length) throw std::invalid_argument("split_rows: size mismatch");
  std::vector<Sentence> out;
  for (int b = 0; b < batch; ++b) {
    out.emplace_back(flat.begin() + b * length, flat.begin() + (b + 1) * length);
  }
  return out;
}

CascadeLoss CascadeModel::training_loss(const CaptionBatch& batch, const TrainOptions& opts, Rng& rng,
                                        const ForwardMode& mode) const {
  const int B = batch.visual.batch_size();
  const int L = cfg_.max_len;
  if (static_cast<int>(batch.targets.size()) != B) throw std::invalid_argument("training_loss: one target per image");
  const Mat x0 = encode_batch(codec_, batch.targets, L);
  Sentence targets;
  targets.reserve(static_cast<std::size_t>(B * L));
  for (const auto& s : batch.targets) {
    for (int i = 0; i < L; ++i) targets.push_back(i < static_cast<int>(s.size()) ? s[static_cast<std::size_t>(i)] : Vocabulary::kPad);
  }

  std::vector<double> gammas(static_cast<std::size_t>(B));
  Mat x_t(x0.rows(), x0.cols());
  for (int b = 0; b < B; ++b) {
    const double t_prime = rng.uniform_open_low();
    gammas[static_cast<std::size_t>(b)] = opts.schedule.gamma(t_prime);
    const Mat eps = gaussian(L, x0.cols(), rng);
    x_t.middleRows(static_cast<Eigen::Index>(b) * L, L) =
        forward_diffuse_at(x0.middleRows(static_cast<Eigen::Index>(b) * L, L), t_prime, eps, opts.schedule);
  }

  const std::vector<Tensor> visual = encode_visual(batch.visual, mode);
  std::vector<Mat> self_conds(stages_.size(), Mat::Zero(x0.rows(), x0.cols()));
  if (opts.self_conditioning && rng.uniform() < opts.self_cond_probability) {
    NoGradGuard no_grad;
    const CascadeOutputs warm = forward(x_t, gammas, visual, batch.visual.lens, self_conds, batch.retrieved);
    for (std::size_t i = 0; i < stages_.size(); ++i) self_conds[i] = warm.fused[i].bits.value();
  }

  const CascadeOutputs outs = forward(x_t, gammas, visual, batch.visual.lens, self_conds, batch.retrieved, mode);
  CascadeLoss loss;
  for (const auto& o : outs.raw) {
    StageLoss sl = stage_loss(o, x0, targets, opts.label_smoothing);
    loss.total = loss.total.defined() ? ops::add(loss.total, sl.total) : sl.total;
    loss.stages.push_back(std::move(sl));
  }
  return loss;
}

std::vector<Sentence> cascade_sample(const CascadeModel& model, const VisualBatch& visual,
                                     const std::vector<Sentence>& retrieved, const SamplerConfig& config,
                                     const NoiseSchedule& schedule, Rng& rng, SampleResult* raw) {
  NoGradGuard no_grad;
  const int B = visual.batch_size();
  const int L = model.config().max_len;
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * L;
  const std::vector<Tensor> tokens = model.encode_visual(visual);
  std::vector<Mat> self_conds(static_cast<std::size_t>(model.num_stages()), Mat::Zero(rows, model.codec().bits()));
  Denoiser denoiser = [&](const Mat& x_t, double gamma, const Mat&) {
    const std::vector<double> gammas(static_cast<std::size_t>(B), gamma);
    const CascadeOutputs outs = model.forward(x_t, gammas, tokens, visual.lens, self_conds, retrieved);
    if (config.self_conditioning) {
      for (std::size_t i = 0; i < self_conds.size(); ++i) self_conds[i] = outs.fused[i].bits.value();
    }
    return DenoiseOutput{outs.fused.back().bits.value(), outs.fused.back().probs.value()};
  };
  SampleResult result = sample(denoiser, model.codec(), rows, config, schedule, rng);
  std::vector<Sentence> words = split_rows(result.words, B, L);
  if (raw) *raw = std::move(result);
  return words;
}

StepLosses train_cascade_step(const CascadeModel& model, Adam& optimizer, const CaptionBatch& batch,
                              const TrainOptions& opts, Rng& rng, double dropout) {
  const ForwardMode mode{dropout, &rng};
  CascadeLoss loss = model.training_loss(batch, opts, rng, mode);
  StepLosses out;
  out.total = loss.total.item();
  for (const auto& s : loss.stages) out.stages.push_back(s.total.item());
  backward(loss.total);
  optimizer.step();
  return out;
}

}  // namespace scdnet
