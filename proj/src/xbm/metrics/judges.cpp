#include "xbm/metrics/judges.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "xbm/ad/optim.hpp"
#include "xbm/interpret/interpret.hpp"
#include "xbm/train/losses.hpp"
#include "xbm/util/checksum.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::metrics {

DualEncoder::DualEncoder(const nn::ModelConfig& cfg, std::uint64_t seed)
    : image_("judge.image", cfg, mix64(seed ^ hash_name("judge.image"))),
      proj_("judge.image.proj", cfg.d_model, cfg.d_model, mix64(seed ^ hash_name("judge.image.proj"))),
      text_("judge.text", cfg, nn::ClassifierMode::text, cfg.d_model, mix64(seed ^ hash_name("judge.text"))) {}

Var DualEncoder::image_embed(Tape& t, Var images) {
  return ad::l2_normalize(proj_(t, ad::mean_axis(image_(t, images), 1)));
}

Var DualEncoder::text_embed(Tape& t, Var probs) {
  return ad::l2_normalize(text_(t, Var{}, probs, nn::presence(probs)).logits);
}

void DualEncoder::collect(std::vector<ad::Parameter*>& out) {
  image_.collect(out);
  proj_.collect(out);
  text_.collect(out);
}

Judges::Judges(const nn::ModelConfig& c, std::uint64_t seed)
    : cfg(c), dual(c, seed), lm("judge.lm", c, mix64(seed ^ hash_name("judge.lm")), false, false) {}

std::vector<ad::Parameter*> Judges::dual_params() {
  std::vector<ad::Parameter*> out;
  dual.collect(out);
  return out;
}

std::vector<ad::Parameter*> Judges::lm_params() {
  std::vector<ad::Parameter*> out;
  lm.collect(out);
  return out;
}

nn::Checkpoint Judges::to_checkpoint() {
  nn::Checkpoint c;
  c.config_text = cfg.to_text();
  c.add("dual/", dual_params());
  c.add("lm/", lm_params());
  return c;
}

Judges Judges::from_checkpoint(const nn::Checkpoint& ckpt) {
  Judges j(nn::ModelConfig::from_text(ckpt.config_text), 0);
  ckpt.load("dual/", j.dual_params());
  ckpt.load("lm/", j.lm_params());
  return j;
}

std::string Judges::checksum() { return to_checkpoint().checksum(); }

Var contrastive_loss(Var image_emb, Var text_emb, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_argument, "contrastive temperature must be positive");
  Var sim = ad::scale(ad::matmul(image_emb, ad::transpose(text_emb)), 1.0 / temperature);
  std::vector<int> diag(static_cast<std::size_t>(sim.dim(0)));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return ad::scale(ad::add(ad::cross_entropy(sim, diag), ad::cross_entropy(ad::transpose(sim), diag)), 0.5);
}

Judges train_judges(std::span<const Example> corpus, const nn::ModelConfig& cfg, const JudgeConfig& c,
                    std::uint64_t seed, const std::function<void(const JudgeEpoch&)>& on_epoch) {
  if (corpus.empty()) fail(ErrorKind::data, "judge corpus is empty");
  for (const auto& ex : corpus)
    if (!ex.has_caption) fail(ErrorKind::data, "judge corpus lacks captions");
  if (c.batch_size < 2) fail(ErrorKind::config, "judge batch size must be >= 2 (contrastive pairs)");
  if (c.epochs < 0 || !(c.lr >= 0.0)) fail(ErrorKind::config, "judge epochs and lr must be non-negative");
  Judges j(cfg, seed);
  auto dp = j.dual_params();
  auto lp = j.lm_params();
  ad::AdamW dual_opt(dp, {0.9, 0.999, 1e-8, c.weight_decay});
  ad::AdamW lm_opt(lp, {0.9, 0.999, 1e-8, c.weight_decay});
  const std::size_t n = corpus.size();
  const auto bs = static_cast<std::size_t>(c.batch_size);
  std::int64_t horizon = static_cast<std::int64_t>((n + bs - 1) / bs) * c.epochs;
  if (c.max_steps > 0) horizon = std::min(horizon, c.max_steps);
  std::int64_t step = 0;
  const std::uint64_t shuffle_seed = mix64(seed ^ hash_name("judges"));
  for (int epoch = 0; epoch < c.epochs && step < horizon; ++epoch) {
    const auto order = train::epoch_order(n, shuffle_seed, static_cast<std::uint64_t>(epoch));
    JudgeEpoch log{epoch, 0.0, 0.0};
    int batches = 0;
    for (std::size_t start = 0; start < n && step < horizon; start += bs) {
      std::vector<const Example*> batch;
      std::vector<std::vector<int>> caps;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
        batch.push_back(&corpus[order[i]]);
        caps.push_back(corpus[order[i]].caption);
      }
      const double lr = ad::cosine_lr(step, horizon, c.lr);
      if (batch.size() >= 2) {
        ad::Tape t;
        Var img = j.dual.image_embed(t, t.constant(train::image_tensor(batch)));
        Var txt = j.dual.text_embed(t, nn::one_hot(t, caps, cfg.max_len, cfg.vocab_size));
        Var loss = contrastive_loss(img, txt, c.temperature);
        t.backward(loss);
        ad::clip_grad_norm(dp, 5.0);
        dual_opt.step(lr);
        log.contrastive += loss.value().item();
      }
      {
        ad::Tape t;
        Var loss = train::distillation_loss(j.lm, t, Var{}, caps);
        t.backward(loss);
        ad::clip_grad_norm(lp, 5.0);
        lm_opt.step(lr);
        log.lm_nll += loss.value().item();
      }
      ++batches;
      ++step;
    }
    log.contrastive /= batches;
    log.lm_nll /= batches;
    if (on_epoch) on_epoch(log);
  }
  return j;
}

bool is_empty_explanation(std::span<const int> tokens) {
  for (int id : tokens) {
    if (id == Vocabulary::kEos) return true;
    if (id != Vocabulary::kPad) return false;
  }
  return true;
}

std::vector<double> alignment_scores(Judges& judges, std::span<const Example* const> batch,
                                     std::span<const std::vector<int>> texts) {
  if (batch.size() != texts.size()) fail(ErrorKind::invalid_argument, "alignment_scores: batch/text count differ");
  ad::Tape t(false);
  const ad::Tensor img = judges.dual.image_embed(t, t.constant(train::image_tensor(batch))).value();
  const ad::Tensor txt =
      judges.dual.text_embed(t, nn::one_hot(t, texts, judges.cfg.max_len, judges.cfg.vocab_size)).value();
  const std::int64_t d = img.dim(1);
  std::vector<double> out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (is_empty_explanation(texts[b])) {
      out.push_back(0.0);
      continue;
    }
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k)
      s += img[static_cast<std::int64_t>(b) * d + k] * txt[static_cast<std::int64_t>(b) * d + k];
    out.push_back(std::clamp(s, -1.0, 1.0));
  }
  return out;
}

namespace {

std::vector<int> scored_tokens(std::span<const int> text) {
  std::vector<int> out;
  for (int id : text) {
    if (id == Vocabulary::kPad) break;
    out.push_back(id);
    if (id == Vocabulary::kEos) break;
  }
  return out;
}

}  // namespace

std::vector<double> perplexities(ReferenceLM& lm, std::span<const std::vector<int>> texts) {
  std::vector<std::vector<int>> seqs;
  std::int64_t len = 1;
  for (const auto& text : texts) {
    if (is_empty_explanation(text)) fail(ErrorKind::invalid_argument, "perplexity: empty text");
    seqs.push_back(scored_tokens(text));
    len = std::max<std::int64_t>(len, static_cast<std::int64_t>(seqs.back().size()));
  }
  if (seqs.empty()) return {};
  if (len > lm.config().max_len) fail(ErrorKind::invalid_argument, "perplexity: text longer than max_len");
  const auto b = static_cast<std::int64_t>(seqs.size());
  std::vector<int> ids(static_cast<std::size_t>(b * len), Vocabulary::kPad);
  for (std::int64_t i = 0; i < b; ++i)
    std::copy(seqs[static_cast<std::size_t>(i)].begin(), seqs[static_cast<std::size_t>(i)].end(),
              ids.begin() + i * len);
  ad::Tape t(false);
  const ad::Tensor lp = ad::log_softmax(lm.teacher_forced_logits(t, ids, b, len, Var{})).value();
  const int v = lm.config().vocab_size;
  std::vector<double> out;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    double nll = 0.0;
    for (std::size_t l = 0; l < s.size(); ++l) nll -= lp[(i * len + static_cast<std::int64_t>(l)) * v + s[l]];
    out.push_back(std::exp(nll / static_cast<double>(s.size())));
  }
  return out;
}

double perplexity(ReferenceLM& lm, std::span<const int> text) {
  const std::vector<std::vector<int>> one{std::vector<int>(text.begin(), text.end())};
  return perplexities(lm, one)[0];
}

double unique_token_ratio(std::span<const std::vector<int>> explanations) {
  if (explanations.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : explanations) {
    std::set<int> distinct;
    int words = 0;
    for (int id : e) {
      if (id == Vocabulary::kEos) break;
      if (id <= Vocabulary::kCls) continue;
      distinct.insert(id);
      ++words;
    }
    total += words > 0 ? static_cast<double>(distinct.size()) / words : 0.0;
  }
  return total / static_cast<double>(explanations.size());
}

DegenerationCheck degeneration(double unique_ratio, double ppl, double reference_ppl) {
  DegenerationCheck d{unique_ratio, ppl, reference_ppl, false};
  d.fired = unique_ratio < 0.2 || (reference_ppl > 0.0 && ppl > 3.0 * reference_ppl);
  return d;
}

EvalRow evaluate(train::XbmModel& model, std::span<const Example> split, Judges& judges, const std::string& label,
                 const EvalOptions& o) {
  EvalRow row;
  row.label = label;
  row.judge_checksum = judges.checksum();
  const bool seg = o.segmentation && model.classifier.mode() == nn::ClassifierMode::multimodal;
  std::vector<std::vector<int>> all_expl;
  std::vector<interpret::Heatmap> heatmaps;
  std::vector<Mask> masks;
  double correct = 0.0, align = 0.0, ppl = 0.0;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(o.chunk)) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(split.size(), start + static_cast<std::size_t>(o.chunk)); ++i)
      batch.push_back(&split[i]);
    const auto expl = model.explain(batch, o.beam_width);
    const auto pred = model.classify(batch, expl);
    for (std::size_t i = 0; i < batch.size(); ++i) correct += pred.labels[i] == batch[i]->label;
    for (double a : alignment_scores(judges, batch, expl)) align += a;
    std::vector<std::vector<int>> nonempty;
    for (const auto& e : expl) {
      if (is_empty_explanation(e))
        ++row.empty_explanations;
      else
        nonempty.push_back(e);
    }
    for (double p : perplexities(judges.lm, nonempty)) ppl += p;
    row.perplexity_count += static_cast<int>(nonempty.size());
    if (seg) {
      const int layer = interpret::middle_layer(model.student.cfg.depth);
      const auto& w = pred.cross_weights[static_cast<std::size_t>(layer)];
      const std::int64_t per = w.size() / w.dim(0);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        ad::Tensor slice(ad::Shape{w.dim(1), w.dim(2), w.dim(3)});
        for (std::int64_t k = 0; k < per; ++k) slice[k] = w[static_cast<std::int64_t>(i) * per + k];
        const auto heat = interpret::token_heat(slice, interpret::explanation_positions(expl[i]));
        heatmaps.push_back(interpret::upsample(heat, model.student.cfg.patches_per_side(), model.student.cfg.patch));
        masks.push_back(batch[i]->target_mask());
      }
    }
    all_expl.insert(all_expl.end(), expl.begin(), expl.end());
  }
  row.examples = static_cast<int>(split.size());
  if (row.examples > 0) {
    row.test_acc = correct / row.examples;
    row.alignment = align / row.examples;
  }
  if (row.perplexity_count > 0) row.perplexity = ppl / row.perplexity_count;
  if (seg) {
    const auto s = interpret::segmentation_eval(heatmaps, masks);
    row.pixel_acc = s.pixel_acc;
    row.miou = s.miou;
    row.map = s.map;
    row.segmentation_count = s.evaluated;
    row.segmentation_skipped = s.skipped_empty;
  }
  row.unique_ratio = unique_token_ratio(all_expl);
  row.degenerate = row.unique_ratio < 0.2;
  return row;
}

std::string report_header() {
  return "row_label\ttest_acc\talignment\tperplexity\tpixel_acc\tmiou\tmap\tjudge_checksum\texamples\t"
         "empty_explanations\tperplexity_count\tsegmentation_count\tsegmentation_skipped\tunique_ratio\tdegenerate\n";
}

std::string report_line(const EvalRow& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << r.label << '\t' << r.test_acc << '\t' << r.alignment << '\t' << r.perplexity << '\t'
     << r.pixel_acc << '\t' << r.miou << '\t' << r.map << '\t' << r.judge_checksum << '\t' << r.examples << '\t'
     << r.empty_explanations << '\t' << r.perplexity_count << '\t' << r.segmentation_count << '\t'
     << r.segmentation_skipped << '\t' << r.unique_ratio << '\t' << (r.degenerate ? "yes" : "no") << '\n';
  return os.str();
}

std::string report_tsv(std::span<const EvalRow> rows) {
  std::string out = report_header();
  for (const auto& r : rows) out += report_line(r);
  return out;
}

}  // namespace xbm::metrics
