#pragma once

#include <span>
#include <vector>

#include "xbm/nn/models.hpp"

namespace xbm::train {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Batch mean of -log softmax(logits)[y]. logits: [B, K].
Var classification_loss(Var logits, std::span<const int> labels);

/// Teacher-forced negative log-likelihood of `refs` under the decoder, as a
/// per-token mean over each sequence's own tokens (EOS included, PAD
/// excluded), then a mean over the batch.
Var distillation_loss(nn::ExplanationDecoder& decoder, Tape& tape, Var memory, std::span<const std::vector<int>> refs);

/// Exact sequence-level KL(q || p) between a teacher q and a student p over
/// all |V|^len token sequences of length `len` (no EOS semantics), for one
/// image per memory row, averaged over rows. Test-scale only: throws if
/// |V|^len exceeds 100000.
double kl_exact(nn::ExplanationDecoder& student, const ad::Tensor& student_memory, nn::ExplanationDecoder& teacher,
                const ad::Tensor& teacher_memory, int len);

/// sum over parameters of ||p - p_ref||^2, differentiable in `params`.
/// Throws if the trees differ in names or shapes.
Var l2sp(Tape& tape, std::span<Parameter* const> params, std::span<Parameter* const> reference);

}  // namespace xbm::train
