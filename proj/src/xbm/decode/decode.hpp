#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xbm/nn/models.hpp"

namespace xbm::decode {

using ad::Tape;
using ad::Tensor;
using ad::Var;

struct BeamOptions {
  int width = 3;
  int max_len = 36;
  /// End-of-sequence id; negative disables EOS so every hypothesis has
  /// exactly max_len tokens.
  int eos = 2;
};

struct Hypothesis {
  std::vector<int> tokens;  // EOS included when it was generated
  double log_prob = 0.0;    // sum of chosen per-step log-softmax values
  /// log_prob / tokens.size()
  double score() const { return tokens.empty() ? 0.0 : log_prob / static_cast<double>(tokens.size()); }
};

/// Beam search per example over `memory` rows ([B, Tm, d]; ignored by a
/// decoder without cross-attention, in which case `batch` gives B).
/// Hypotheses are ranked by length-normalised log-probability; ties go to the
/// lexicographically lower token sequence, so an earlier finish wins over its
/// own continuation. An example stops once it holds `width` finished
/// hypotheses; at the last position only EOS may be chosen.
std::vector<Hypothesis> beam_search(nn::ExplanationDecoder& decoder, Tape& tape, Var memory, std::int64_t batch,
                                    const BeamOptions& options);

/// Argmax decoding (lowest id on ties), stopping at EOS, EOS forced at the
/// last position.
std::vector<Hypothesis> greedy(nn::ExplanationDecoder& decoder, Tape& tape, Var memory, std::int64_t batch,
                               const BeamOptions& options);

/// Sum of per-position log-probabilities of given sequences under teacher
/// forcing (the log-probability invariant of a hypothesis).
std::vector<double> sequence_log_prob(nn::ExplanationDecoder& decoder, Tape& tape, Var memory,
                                      std::span<const std::vector<int>> seqs);

/// Exponential temperature annealing with a floor.
struct GumbelSchedule {
  double tau0 = 10.0;
  double rate = 1e-4;
  double tau_min = 0.1;
  bool anneal = true;

  /// max(tau_min, tau0 * exp(-rate * step)); tau0 when annealing is off.
  double tau(std::int64_t step) const;
};

/// Relaxed sample softmax((log_softmax(logits) + noise) / tau) along the last
/// axis. Throws invalid_argument if tau <= 0.
Var gumbel_softmax(Var logits, Var noise, double tau);

/// Gumbel(0,1) noise for `len` positions, one [B, V] tensor per position.
/// Row b of position l comes from an independent substream of
/// (keys[b], l), so draws do not depend on batch composition.
std::vector<Tensor> gumbel_noise(std::span<const std::uint64_t> keys, int len, int vocab);

/// Free-running relaxed generation: each position's soft token is fed back
/// as an embedding mixture. Always produces exactly `len` rows; returns
/// [B, len, V]. `noise` holds one [B, V] tensor per position (empty means
/// zero noise).
Var gumbel_sample(nn::ExplanationDecoder& decoder, Tape& tape, Var memory, std::int64_t batch, int len, double tau,
                  std::span<const Tensor> noise);

/// Trims a generated sequence for downstream use: stops after the first EOS.
std::vector<int> trim_at_eos(std::span<const int> tokens);

}  // namespace xbm::decode
