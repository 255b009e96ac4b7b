#include "xbm/decode/decode.hpp"

#include <algorithm>
#include <cmath>

#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::decode {

namespace {

struct Row {
  std::int64_t example = 0;
  std::vector<int> tokens;
  double log_prob = 0.0;
};

struct Candidate {
  std::size_t parent = 0;
  int token = 0;
  double log_prob = 0.0;
};

void check_options(const nn::ExplanationDecoder& dec, const BeamOptions& o) {
  if (o.width < 1) fail(ErrorKind::invalid_argument, "beam width must be at least 1");
  if (o.max_len < 1 || o.max_len > dec.config().max_len)
    fail(ErrorKind::invalid_argument, "max_len must lie in [1, " + std::to_string(dec.config().max_len) + "]");
  if (o.eos >= dec.config().vocab_size) fail(ErrorKind::invalid_argument, "eos id outside vocabulary");
}

bool allowed(const nn::ExplanationDecoder& dec, const BeamOptions& o, int token, bool last) {
  if (dec.blocks_special() && nn::ExplanationDecoder::is_blocked(token)) return false;
  if (last && o.eos >= 0) return token == o.eos;
  return true;
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  return a.tokens < b.tokens;
}

// Log-softmax of a [rows, V] logits block, computed through the tape so the
// values are the ones the invariant recomputes.
Tensor step_log_probs(nn::ExplanationDecoder& dec, Tape& t, nn::DecoderCache& cache, const std::vector<Row>& rows,
                      std::int64_t pos) {
  std::vector<int> last;
  last.reserve(rows.size());
  for (const auto& r : rows) last.push_back(r.tokens.empty() ? Vocabulary::kBos : r.tokens.back());
  const auto n = static_cast<std::int64_t>(rows.size());
  return ad::log_softmax(dec.step(t, cache, dec.embed_hard(t, last, n, 1, pos))).value();
}


}  // namespace

std::vector<Hypothesis> beam_search(nn::ExplanationDecoder& dec, Tape& t, Var memory, std::int64_t batch,
                                    const BeamOptions& o) {
  check_options(dec, o);
  const int vocab = dec.config().vocab_size;
  const auto width = static_cast<std::size_t>(o.width);
  nn::DecoderCache cache = dec.begin(t, memory, batch);
  std::vector<Row> rows(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)].example = b;
  std::vector<std::vector<Hypothesis>> finished(static_cast<std::size_t>(batch));

  for (int pos = 0; pos < o.max_len && !rows.empty(); ++pos) {
    const bool last = pos + 1 == o.max_len;
    const Tensor lp = step_log_probs(dec, t, cache, rows, pos);
    std::vector<Row> next;
    std::vector<std::int64_t> parents;
    std::size_t begin = 0;
    while (begin < rows.size()) {
      std::size_t end = begin;
      while (end < rows.size() && rows[end].example == rows[begin].example) ++end;
      const std::int64_t ex = rows[begin].example;
      std::vector<Candidate> cands;
      for (std::size_t r = begin; r < end; ++r)
        for (int k = 0; k < vocab; ++k)
          if (allowed(dec, o, k, last))
            cands.push_back({r, k, rows[r].log_prob + lp[static_cast<std::int64_t>(r) * vocab + k]});
      std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        if (a.parent != b.parent) return rows[a.parent].tokens < rows[b.parent].tokens;
        return a.token < b.token;
      });
      auto& fin = finished[static_cast<std::size_t>(ex)];
      std::size_t kept = 0;
      for (std::size_t rank = 0; rank < cands.size() && (rank < width || kept < width); ++rank) {
        const Candidate& c = cands[rank];
        const bool ends = last || c.token == o.eos;
        if (ends) {
          if (rank < width) {
            Hypothesis h{rows[c.parent].tokens, c.log_prob};
            h.tokens.push_back(c.token);
            fin.push_back(std::move(h));
          }
        } else if (kept < width) {
          Row r{ex, rows[c.parent].tokens, c.log_prob};
          r.tokens.push_back(c.token);
          next.push_back(std::move(r));
          parents.push_back(static_cast<std::int64_t>(c.parent));
          ++kept;
        }
      }
      if (fin.size() >= width) {
        while (!next.empty() && next.back().example == ex) {
          next.pop_back();
          parents.pop_back();
        }
      }
      begin = end;
    }
    rows = std::move(next);
    if (!rows.empty()) nn::ExplanationDecoder::reorder(cache, parents);
  }

  std::vector<Hypothesis> out;
  for (auto& fin : finished) {
    if (fin.empty()) fail(ErrorKind::state, "beam search finished without a hypothesis");
    out.push_back(*std::min_element(fin.begin(), fin.end(), better));
  }
  return out;
}

std::vector<Hypothesis> greedy(nn::ExplanationDecoder& dec, Tape& t, Var memory, std::int64_t batch,
                               const BeamOptions& o) {
  check_options(dec, o);
  const int vocab = dec.config().vocab_size;
  nn::DecoderCache cache = dec.begin(t, memory, batch);
  std::vector<Row> rows(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)].example = b;
  std::vector<Hypothesis> out(static_cast<std::size_t>(batch));
  std::vector<bool> done(static_cast<std::size_t>(batch), false);
  // Finished rows keep being fed (their outputs are ignored) so the batch
  // shape stays fixed.
  for (int pos = 0; pos < o.max_len; ++pos) {
    const bool last = pos + 1 == o.max_len;
    const Tensor lp = step_log_probs(dec, t, cache, rows, pos);
    bool all_done = true;
    for (std::int64_t b = 0; b < batch; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (done[bi]) {
        rows[bi].tokens.push_back(Vocabulary::kPad);
        continue;
      }
      int best = -1;
      for (int k = 0; k < vocab; ++k)
        if (allowed(dec, o, k, last) && (best < 0 || lp[b * vocab + k] > lp[b * vocab + best])) best = k;
      rows[bi].tokens.push_back(best);
      out[bi].tokens.push_back(best);
      out[bi].log_prob += lp[b * vocab + best];
      if (best == o.eos || last) done[bi] = true;
      all_done = all_done && done[bi];
    }
    if (all_done) break;
  }
  return out;
}

std::vector<double> sequence_log_prob(nn::ExplanationDecoder& dec, Tape& t, Var memory,
                                      std::span<const std::vector<int>> seqs) {
  const auto batch = static_cast<std::int64_t>(seqs.size());
  std::int64_t len = 1;
  for (const auto& s : seqs) len = std::max<std::int64_t>(len, static_cast<std::int64_t>(s.size()));
  std::vector<int> ids(static_cast<std::size_t>(batch * len), Vocabulary::kPad);
  for (std::int64_t b = 0; b < batch; ++b)
    std::copy(seqs[static_cast<std::size_t>(b)].begin(), seqs[static_cast<std::size_t>(b)].end(),
              ids.begin() + b * len);
  const Tensor lp = ad::log_softmax(dec.teacher_forced_logits(t, ids, batch, len, memory)).value();
  const int vocab = dec.config().vocab_size;
  std::vector<double> out;
  for (std::int64_t b = 0; b < batch; ++b) {
    double s = 0.0;
    const auto& seq = seqs[static_cast<std::size_t>(b)];
    for (std::size_t l = 0; l < seq.size(); ++l) s += lp[(b * len + static_cast<std::int64_t>(l)) * vocab + seq[l]];
    out.push_back(s);
  }
  return out;
}

double GumbelSchedule::tau(std::int64_t step) const {
  if (!anneal) return tau0;
  return std::max(tau_min, tau0 * std::exp(-rate * static_cast<double>(step)));
}

Var gumbel_softmax(Var logits, Var noise, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::invalid_argument, "Gumbel-softmax temperature must be positive");
  Var z = ad::log_softmax(logits);
  if (noise.valid()) z = ad::add(z, noise);
  return ad::softmax(ad::scale(z, 1.0 / tau));
}

std::vector<Tensor> gumbel_noise(std::span<const std::uint64_t> keys, int len, int vocab) {
  std::vector<Tensor> out;
  const auto b = static_cast<std::int64_t>(keys.size());
  for (int l = 0; l < len; ++l) {
    Tensor g(ad::Shape{b, vocab});
    for (std::int64_t i = 0; i < b; ++i) {
      CounterRng rng = CounterRng(keys[static_cast<std::size_t>(i)], hash_name("gumbel")).substream(
          static_cast<std::uint64_t>(l));
      for (int k = 0; k < vocab; ++k) g[i * vocab + k] = rng.gumbel();
    }
    out.push_back(std::move(g));
  }
  return out;
}

Var gumbel_sample(nn::ExplanationDecoder& dec, Tape& t, Var memory, std::int64_t batch, int len, double tau,
                  std::span<const Tensor> noise) {
  if (!(tau > 0.0)) fail(ErrorKind::invalid_argument, "Gumbel-softmax temperature must be positive");
  if (len < 1 || len > dec.config().max_len) fail(ErrorKind::invalid_argument, "sample length outside [1, max_len]");
  if (!noise.empty() && static_cast<int>(noise.size()) < len)
    fail(ErrorKind::invalid_argument, "Gumbel noise shorter than the sample");
  const int vocab = dec.config().vocab_size;
  nn::DecoderCache cache = dec.begin(t, memory, batch);
  const std::vector<int> bos(static_cast<std::size_t>(batch), Vocabulary::kBos);
  Var input = dec.embed_hard(t, bos, batch, 1, 0);
  std::vector<Var> rows;
  for (int l = 0; l < len; ++l) {
    Var logits = dec.step(t, cache, input);
    Var g = noise.empty() ? Var{} : t.constant(noise[static_cast<std::size_t>(l)]);
    Var y = ad::reshape(gumbel_softmax(logits, g, tau), {batch, 1, vocab});
    rows.push_back(y);
    if (l + 1 < len) input = dec.embed_soft(t, y, l + 1);
  }
  return ad::concat(rows, 1);
}

std::vector<int> trim_at_eos(std::span<const int> tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    out.push_back(t);
    if (t == Vocabulary::kEos) break;
  }
  return out;
}

}  // namespace xbm::decode
