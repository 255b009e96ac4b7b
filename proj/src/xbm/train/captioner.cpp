#include "xbm/train/captioner.hpp"

#include <cmath>

#include "xbm/ad/optim.hpp"
#include "xbm/train/losses.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"

namespace xbm::train {

Captioner::Captioner(const nn::ModelConfig& c, std::uint64_t seed)
    : cfg(c), encoder("encoder", c, seed), decoder("decoder", c, seed) {}

std::vector<ad::Parameter*> Captioner::params() {
  std::vector<ad::Parameter*> out;
  encoder.collect(out);
  decoder.collect(out);
  return out;
}

std::vector<ad::Parameter*> Captioner::encoder_params() {
  std::vector<ad::Parameter*> out;
  encoder.collect(out);
  return out;
}

std::vector<ad::Parameter*> Captioner::decoder_params() {
  std::vector<ad::Parameter*> out;
  decoder.collect(out);
  return out;
}

void Captioner::set_trainable(bool trainable) {
  for (auto* p : params()) p->requires_grad = trainable;
}

std::vector<std::vector<int>> Captioner::describe(std::span<const Example* const> batch,
                                                  const decode::BeamOptions& options) {
  ad::Tape t(false);
  ad::Var mem = encoder(t, t.constant(image_tensor(batch)));
  std::vector<std::vector<int>> out;
  for (auto& h : decode::beam_search(decoder, t, mem, static_cast<std::int64_t>(batch.size()), options))
    out.push_back(std::move(h.tokens));
  return out;
}

ad::Tensor image_tensor(std::span<const Example* const> batch) {
  std::vector<const Image*> imgs;
  imgs.reserve(batch.size());
  for (const Example* e : batch) imgs.push_back(&e->image);
  return nn::image_batch(imgs);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(seed, mix64(hash_name("shuffle") ^ epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<PretrainEpoch> pretrain_captioner(Captioner& model, std::span<const Example> corpus,
                                              const PretrainConfig& c, std::uint64_t seed,
                                              const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (corpus.empty()) fail(ErrorKind::data, "pretraining corpus is empty");
  for (const auto& ex : corpus)
    if (!ex.has_caption) fail(ErrorKind::data, "pretraining corpus lacks captions (example seed " +
                                                    std::to_string(ex.seed) + ")");
  if (c.batch_size < 1) fail(ErrorKind::config, "pretrain batch size must be positive");
  auto params = model.params();
  ad::AdamW opt(params, {0.9, 0.999, 1e-8, c.weight_decay});
  const std::size_t n = corpus.size();
  const auto bs = static_cast<std::size_t>(c.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  std::int64_t horizon = per_epoch * c.epochs;
  if (c.max_steps > 0) horizon = std::min(horizon, c.max_steps);
  std::int64_t step = 0;
  std::vector<PretrainEpoch> log;
  for (int epoch = 0; epoch < c.epochs && step < horizon; ++epoch) {
    const auto order = epoch_order(n, seed, static_cast<std::uint64_t>(epoch));
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n && step < horizon; start += bs) {
      std::vector<const Example*> batch;
      std::vector<std::vector<int>> caps;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
        batch.push_back(&corpus[order[i]]);
        caps.push_back(corpus[order[i]].caption);
      }
      ad::Tape t;
      ad::Var mem = model.encoder(t, t.constant(image_tensor(batch)));
      ad::Var loss = distillation_loss(model.decoder, t, mem, caps);
      t.backward(loss);
      ad::clip_grad_norm(params, 5.0);
      opt.step(ad::cosine_lr(step, horizon, c.lr));
      sum += loss.value().item();
      ++batches;
      ++step;
    }
    log.push_back({epoch, sum / batches});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

}  // namespace xbm::train
