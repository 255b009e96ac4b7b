#include "xbm/train/losses.hpp"

#include <cmath>

#include "xbm/util/error.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::train {

Var classification_loss(Var logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size()))
    fail(ErrorKind::shape, "classification_loss: logits " + ad::shape_str(logits.shape()) + " for " +
                               std::to_string(labels.size()) + " labels");
  return ad::cross_entropy(logits, labels);
}

Var distillation_loss(nn::ExplanationDecoder& decoder, Tape& t, Var memory, std::span<const std::vector<int>> refs) {
  const auto batch = static_cast<std::int64_t>(refs.size());
  std::int64_t len = 1;
  for (const auto& r : refs) {
    if (r.empty()) fail(ErrorKind::invalid_argument, "distillation_loss: empty reference");
    len = std::max<std::int64_t>(len, static_cast<std::int64_t>(r.size()));
  }
  std::vector<int> ids(static_cast<std::size_t>(batch * len), Vocabulary::kPad);
  std::vector<double> weights(ids.size(), 0.0);
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& r = refs[static_cast<std::size_t>(b)];
    for (std::size_t l = 0; l < r.size(); ++l) {
      ids[static_cast<std::size_t>(b * len) + l] = r[l];
      weights[static_cast<std::size_t>(b * len) + l] = 1.0 / static_cast<double>(r.size());
    }
  }
  Var logits = decoder.teacher_forced_logits(t, ids, batch, len, memory);
  const int v = decoder.config().vocab_size;
  return ad::cross_entropy(ad::reshape(logits, {batch * len, v}), ids, weights);
}

double kl_exact(nn::ExplanationDecoder& student, const ad::Tensor& student_memory, nn::ExplanationDecoder& teacher,
                const ad::Tensor& teacher_memory, int len) {
  const int v = student.config().vocab_size;
  if (teacher.config().vocab_size != v) fail(ErrorKind::invalid_argument, "kl_exact: vocabularies differ");
  double count = 1.0;
  for (int l = 0; l < len; ++l) count *= v;
  if (count > 1e5) fail(ErrorKind::invalid_argument, "kl_exact: |V|^L exceeds 100000");
  const auto n = static_cast<std::int64_t>(count);
  std::vector<int> ids(static_cast<std::size_t>(n * len));
  for (std::int64_t s = 0; s < n; ++s) {
    std::int64_t r = s;
    for (int l = len - 1; l >= 0; --l) {
      ids[static_cast<std::size_t>(s * len + l)] = static_cast<int>(r % v);
      r /= v;
    }
  }
  const std::int64_t rows = student_memory.dim(0);
  double total = 0.0;
  for (std::int64_t row = 0; row < rows; ++row) {
    auto seq_lp = [&](nn::ExplanationDecoder& dec, const ad::Tensor& mem) {
      Tape t(false);
      Var m = ad::slice(t.constant(mem), 0, row, 1);
      std::vector<std::int64_t> rep(static_cast<std::size_t>(n), 0);
      const ad::Tensor lp = ad::log_softmax(dec.teacher_forced_logits(t, ids, n, len, ad::take(m, rep))).value();
      std::vector<double> out(static_cast<std::size_t>(n), 0.0);
      for (std::int64_t s = 0; s < n; ++s)
        for (int l = 0; l < len; ++l)
          out[static_cast<std::size_t>(s)] += lp[(s * len + l) * v + ids[static_cast<std::size_t>(s * len + l)]];
      return out;
    };
    const auto lq = seq_lp(teacher, teacher_memory);
    const auto lp = seq_lp(student, student_memory);
    double kl = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const double q = std::exp(lq[static_cast<std::size_t>(s)]);
      if (q > 0.0) kl += q * (lq[static_cast<std::size_t>(s)] - lp[static_cast<std::size_t>(s)]);
    }
    total += kl;
  }
  return total / static_cast<double>(rows);
}

Var l2sp(Tape& t, std::span<Parameter* const> params, std::span<Parameter* const> reference) {
  if (params.size() != reference.size()) fail(ErrorKind::invalid_argument, "l2sp: parameter trees differ in size");
  Var total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != reference[i]->name || params[i]->value.shape() != reference[i]->value.shape())
      fail(ErrorKind::invalid_argument, "l2sp: parameter trees differ at " + params[i]->name);
    Var d = ad::sub(t.param(*params[i]), t.constant(reference[i]->value));
    Var s = ad::sum(ad::mul(d, d));
    total = total.valid() ? ad::add(total, s) : s;
  }
  if (!total.valid()) total = t.constant(ad::Tensor::scalar(0.0));
  return total;
}

}  // namespace xbm::train
