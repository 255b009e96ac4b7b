#include "xbm/interpret/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"

namespace xbm::interpret {

namespace {

int eos_cut(std::span<const int> tokens) {
  const auto it = std::find(tokens.begin(), tokens.end(), Vocabulary::kEos);
  return static_cast<int>(it - tokens.begin());
}

std::string span_text(std::span<const int> tokens, int start, int end, const Vocabulary& vocab) {
  std::string out;
  for (int i = start; i < end; ++i) {
    if (!out.empty()) out += ' ';
    out += vocab.token(tokens[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

std::vector<ConceptPhrase> extract_concept_phrases(std::span<const int> tokens, const Vocabulary& vocab) {
  const int n = eos_cut(tokens);
  std::vector<WordClass> cls(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int id = tokens[static_cast<std::size_t>(i)];
    cls[static_cast<std::size_t>(i)] = vocab.contains_id(id) ? vocab.word_class(id) : WordClass::special;
  }
  const auto at = [&](int i) { return cls[static_cast<std::size_t>(i)]; };
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<ConceptPhrase> out;

  for (int k = 0; k < n; ++k) {
    if (at(k) != WordClass::shape) continue;
    int s = k;
    if (s > 0 && !used[s - 1] && at(s - 1) == WordClass::color) --s;
    if (s > 0 && !used[s - 1] && at(s - 1) == WordClass::size) --s;
    if (s > 0 && !used[s - 1] && at(s - 1) == WordClass::determiner) --s;
    for (int i = s; i <= k; ++i) used[static_cast<std::size_t>(i)] = true;
    out.push_back({s, k + 1, PhraseKind::object, {}, 0.0});
  }
  for (int k = 0; k < n;) {
    if (at(k) != WordClass::position || used[static_cast<std::size_t>(k)]) {
      ++k;
      continue;
    }
    int e = k;
    while (e < n && at(e) == WordClass::position && !used[static_cast<std::size_t>(e)]) ++e;
    int s = k;
    if (s > 0 && !used[s - 1] && at(s - 1) == WordClass::determiner) --s;
    for (int i = s; i < e; ++i) used[static_cast<std::size_t>(i)] = true;
    out.push_back({s, e, PhraseKind::position, {}, 0.0});
    k = e;
  }
  std::sort(out.begin(), out.end(), [](const ConceptPhrase& a, const ConceptPhrase& b) { return a.start < b.start; });
  for (auto& p : out) p.text = span_text(tokens, p.start, p.end, vocab);
  return out;
}

int middle_layer(int depth) {
  if (depth < 1) fail(ErrorKind::invalid_argument, "middle_layer: depth must be >= 1");
  return (depth + 1) / 2 - 1;
}

const char* aggregation_name(HeadAggregation a) { return a == HeadAggregation::mean ? "mean" : "max"; }

HeadAggregation parse_aggregation(const std::string& name) {
  if (name == "mean") return HeadAggregation::mean;
  if (name == "max") return HeadAggregation::max;
  fail(ErrorKind::config, "unknown head aggregation: " + name);
}

namespace {

// Head-aggregated row `q` of a [H, Tq, Tk] tensor.
std::vector<double> aggregated_row(const ad::Tensor& w, std::int64_t q, HeadAggregation agg) {
  if (w.rank() != 3) fail(ErrorKind::shape, "attention weights must be [H, Tq, Tk]");
  const std::int64_t h = w.dim(0), tq = w.dim(1), tk = w.dim(2);
  if (q < 0 || q >= tq) fail(ErrorKind::invalid_argument, "attention row out of range");
  std::vector<double> out(static_cast<std::size_t>(tk), agg == HeadAggregation::mean ? 0.0 : -INFINITY);
  for (std::int64_t hh = 0; hh < h; ++hh)
    for (std::int64_t k = 0; k < tk; ++k) {
      const double v = w[(hh * tq + q) * tk + k];
      auto& o = out[static_cast<std::size_t>(k)];
      o = agg == HeadAggregation::mean ? o + v / static_cast<double>(h) : std::max(o, v);
    }
  return out;
}

}  // namespace

std::vector<ConceptPhrase> phrase_scores(const ad::Tensor& self_weights, std::vector<ConceptPhrase> phrases,
                                         HeadAggregation agg) {
  if (phrases.empty()) return phrases;
  const auto row = aggregated_row(self_weights, 0, agg);
  double total = 0.0;
  for (auto& p : phrases) {
    p.score = 0.0;
    for (int i = p.start; i < p.end; ++i) {
      const auto k = static_cast<std::size_t>(i + 1);
      if (k >= row.size()) fail(ErrorKind::invalid_argument, "phrase span outside the attention window");
      p.score += row[k];
    }
    total += p.score;
  }
  for (auto& p : phrases) p.score = total > 0.0 ? p.score / total : 1.0 / static_cast<double>(phrases.size());
  return phrases;
}

std::vector<double> token_heat(const ad::Tensor& cross_weights, std::span<const int> positions, HeadAggregation agg) {
  if (cross_weights.rank() != 3) fail(ErrorKind::shape, "cross-attention weights must be [H, 1+L, Tm]");
  std::vector<double> heat(static_cast<std::size_t>(cross_weights.dim(2)), 0.0);
  if (positions.empty()) return heat;
  for (int p : positions) {
    const auto row = aggregated_row(cross_weights, p + 1, agg);
    for (std::size_t k = 0; k < heat.size(); ++k) heat[k] += row[k];
  }
  for (auto& v : heat) v /= static_cast<double>(positions.size());
  return heat;
}

Heatmap upsample(std::span<const double> heat, int grid, int patch) {
  if (grid <= 0 || patch <= 0 || heat.size() != static_cast<std::size_t>(grid * grid))
    fail(ErrorKind::shape, "upsample: heat does not match the patch grid");
  Heatmap h;
  h.height = h.width = grid * patch;
  h.values.resize(static_cast<std::size_t>(h.height * h.width));
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      h.values[static_cast<std::size_t>(y * h.width + x)] = heat[static_cast<std::size_t>((y / patch) * grid + x / patch)];
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  const double a = *lo, b = *hi;
  for (auto& v : h.values) v = b > a ? (v - a) / (b - a) : 0.0;
  return h;
}

std::vector<int> explanation_positions(std::span<const int> tokens) {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kPad) break;
    out.push_back(static_cast<int>(i));
    if (tokens[i] == Vocabulary::kEos) break;
  }
  return out;
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::shape, "average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double positives = 0.0;
  for (auto l : labels) positives += l != 0;
  if (positives == 0.0) return 0.0;
  double ap = 0.0, tp = 0.0, seen = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_tp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_tp += labels[order[j]] != 0;
      ++j;
    }
    tp += group_tp;
    seen += static_cast<double>(j - i);
    ap += (group_tp / positives) * (tp / seen);
    i = j;
  }
  return ap;
}

SegmentationScores segmentation_eval(std::span<const Heatmap> heatmaps, std::span<const Mask> masks) {
  if (heatmaps.size() != masks.size()) fail(ErrorKind::shape, "segmentation_eval: heatmap and mask counts differ");
  SegmentationScores s;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    const Heatmap& h = heatmaps[i];
    const Mask& m = masks[i];
    if (h.height != m.height || h.width != m.width) fail(ErrorKind::shape, "segmentation_eval: shape mismatch");
    if (m.count() == 0) {
      ++s.skipped_empty;
      continue;
    }
    const double mean = std::accumulate(h.values.begin(), h.values.end(), 0.0) / static_cast<double>(h.values.size());
    double agree = 0.0, inter = 0.0, uni = 0.0;
    for (std::size_t k = 0; k < h.values.size(); ++k) {
      const bool p = h.values[k] > mean;
      const bool t = m.bits[k] != 0;
      agree += p == t;
      inter += p && t;
      uni += p || t;
    }
    s.pixel_acc += agree / static_cast<double>(h.values.size());
    s.miou += uni > 0.0 ? inter / uni : 0.0;
    s.map += average_precision(h.values, m.bits);
    ++s.evaluated;
  }
  if (s.evaluated > 0) {
    s.pixel_acc /= s.evaluated;
    s.miou /= s.evaluated;
    s.map /= s.evaluated;
  }
  return s;
}

double mask_density_ratio(const Heatmap& h, const Mask& m) {
  if (h.height != m.height || h.width != m.width) fail(ErrorKind::shape, "mask_density_ratio: shape mismatch");
  double in = 0.0, out = 0.0;
  std::int64_t n_in = 0;
  for (std::size_t k = 0; k < h.values.size(); ++k) {
    if (m.bits[k]) {
      in += h.values[k];
      ++n_in;
    } else {
      out += h.values[k];
    }
  }
  const auto n_out = static_cast<std::int64_t>(h.values.size()) - n_in;
  if (n_in == 0 || n_out == 0) fail(ErrorKind::invalid_argument, "mask_density_ratio: mask is empty or full");
  in /= static_cast<double>(n_in);
  out /= static_cast<double>(n_out);
  if (out == 0.0) return in == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return in / out;
}

bool concentrated_in_mask(const Heatmap& h, const Mask& m) { return mask_density_ratio(h, m) > 1.0; }

const char* intervention_name(InterventionKind k) {
  switch (k) {
    case InterventionKind::randomized: return "randomized";
    case InterventionKind::ground_truth: return "ground_truth";
    case InterventionKind::custom: return "custom";
  }
  return "?";
}

InterventionKind parse_intervention(const std::string& name) {
  if (name == "randomized") return InterventionKind::randomized;
  if (name == "ground_truth") return InterventionKind::ground_truth;
  if (name == "custom") return InterventionKind::custom;
  fail(ErrorKind::config, "unknown intervention kind: " + name);
}

std::vector<int> randomized_explanation(std::span<const int> original, std::uint64_t seed, std::uint64_t example_seed,
                                        int vocab_size) {
  const int words = vocab_size - (Vocabulary::kCls + 1);
  if (words <= 0) fail(ErrorKind::invalid_argument, "randomized_explanation: no word tokens");
  const int n = eos_cut(original);
  CounterRng rng(mix64(seed ^ hash_name("intervention")), example_seed);
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    out.push_back(Vocabulary::kCls + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(words))));
  out.push_back(Vocabulary::kEos);
  return out;
}

InterventionResult intervene(train::XbmModel& model, std::span<const Example* const> batch,
                             const InterventionSpec& spec, int beam_width) {
  const int len = model.student.cfg.max_len;
  const int vocab = model.student.cfg.vocab_size;
  InterventionResult r;
  r.original = model.explain(batch, beam_width);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    switch (spec.kind) {
      case InterventionKind::randomized:
        r.replaced.push_back(randomized_explanation(r.original[i], spec.seed, batch[i]->seed, vocab));
        break;
      case InterventionKind::ground_truth:
        if (!batch[i]->has_caption)
          fail(ErrorKind::data, "ground-truth intervention needs captioned examples (intervention split)");
        r.replaced.push_back(batch[i]->caption);
        break;
      case InterventionKind::custom:
        if (static_cast<int>(spec.replacement.size()) > len)
          fail(ErrorKind::invalid_argument, "custom replacement longer than max_len");
        for (int id : spec.replacement)
          if (id < 0 || id >= vocab) fail(ErrorKind::invalid_argument, "custom replacement has unknown token id");
        r.replaced.push_back(spec.replacement);
        break;
    }
  }
  r.before = model.classify(batch, r.original);
  r.after = model.classify(batch, r.replaced);
  return r;
}

InterventionAccuracy intervention_accuracy(train::XbmModel& model, std::span<const Example> split,
                                           const InterventionSpec& spec, int beam_width, int chunk) {
  InterventionAccuracy acc;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(split.size(), start + static_cast<std::size_t>(chunk)); ++i)
      batch.push_back(&split[i]);
    const auto r = intervene(model, batch, spec, beam_width);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      acc.normal += r.before.labels[i] == batch[i]->label;
      acc.replaced += r.after.labels[i] == batch[i]->label;
    }
    acc.count += static_cast<int>(batch.size());
  }
  if (acc.count > 0) {
    acc.normal /= acc.count;
    acc.replaced /= acc.count;
  }
  return acc;
}

namespace {

ad::Tensor example_slice(const ad::Tensor& w, std::int64_t b) {
  const std::int64_t per = w.size() / w.dim(0);
  ad::Tensor out(ad::Shape{w.dim(1), w.dim(2), w.dim(3)});
  for (std::int64_t i = 0; i < per; ++i) out[i] = w[b * per + i];
  return out;
}

}  // namespace

std::vector<Heatmap> explanation_heatmaps(train::XbmModel& model, std::span<const Example* const> batch,
                                          int beam_width, HeadAggregation agg) {
  if (model.classifier.mode() != nn::ClassifierMode::multimodal)
    fail(ErrorKind::config, "heatmaps need a multimodal classifier (text mode has no cross-attention)");
  const auto expl = model.explain(batch, beam_width);
  const auto pred = model.classify(batch, expl);
  const int layer = middle_layer(model.student.cfg.depth);
  std::vector<Heatmap> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto w = example_slice(pred.cross_weights[static_cast<std::size_t>(layer)], static_cast<std::int64_t>(i));
    const auto heat = token_heat(w, explanation_positions(expl[i]), agg);
    out.push_back(upsample(heat, model.student.cfg.patches_per_side(), model.student.cfg.patch));
  }
  return out;
}

ExplanationReport explain_example(train::XbmModel& model, const Example& example, int beam_width,
                                  HeadAggregation agg) {
  const Example* batch[] = {&example};
  const auto expl = model.explain(batch, beam_width);
  const auto pred = model.classify(batch, expl);
  ExplanationReport r;
  r.example_seed = example.seed;
  r.label = example.label;
  r.predicted = pred.labels[0];
  r.tokens = expl[0];
  r.text = Vocabulary::standard().render(expl[0]);
  r.layer = middle_layer(model.student.cfg.depth);
  r.aggregation = agg;
  r.phrases = phrase_scores(example_slice(pred.self_weights[static_cast<std::size_t>(r.layer)], 0),
                            extract_concept_phrases(expl[0]), agg);
  std::stable_sort(r.phrases.begin(), r.phrases.end(),
                   [](const ConceptPhrase& a, const ConceptPhrase& b) { return a.score > b.score; });
  if (model.classifier.mode() == nn::ClassifierMode::multimodal) {
    const auto w = example_slice(pred.cross_weights[static_cast<std::size_t>(r.layer)], 0);
    r.heatmap = upsample(token_heat(w, explanation_positions(expl[0]), agg), model.student.cfg.patches_per_side(),
                         model.student.cfg.patch);
    r.has_heatmap = true;
  }
  return r;
}

std::string ExplanationReport::to_text() const {
  std::ostringstream os;
  os << "[explanation]\n"
     << "example_seed " << example_seed << "\nlabel " << label << "\npredicted " << predicted << "\ntext " << text
     << "\n\n[concept phrases]\n"
     << "layer " << layer << " heads " << aggregation_name(aggregation) << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& p : phrases) os << p.score << "\t" << p.text << "\n";
  os << "\n[heatmap]\n";
  if (!has_heatmap) {
    os << "none (text classifier)\n";
  } else {
    os << heatmap.height << "x" << heatmap.width << "\n";
    for (int y = 0; y < heatmap.height; ++y) {
      for (int x = 0; x < heatmap.width; ++x) {
        static const char ramp[] = " .:-=+*#%@";
        const double v = heatmap.values[static_cast<std::size_t>(y * heatmap.width + x)];
        os << ramp[std::min(9, static_cast<int>(v * 10.0))];
      }
      os << "\n";
    }
  }
  return os.str();
}

std::string ExplanationReport::to_json() const {
  nlohmann::ordered_json j;
  j["example_seed"] = example_seed;
  j["label"] = label;
  j["predicted"] = predicted;
  j["explanation"] = {{"text", text}, {"tokens", tokens}};
  nlohmann::ordered_json ph = nlohmann::ordered_json::array();
  for (const auto& p : phrases)
    ph.push_back({{"text", p.text},
                  {"start", p.start},
                  {"end", p.end},
                  {"kind", p.kind == PhraseKind::object ? "object" : "position"},
                  {"score", p.score}});
  j["concept_phrases"] = {{"layer", layer}, {"heads", aggregation_name(aggregation)}, {"phrases", ph}};
  if (has_heatmap)
    j["heatmap"] = {{"height", heatmap.height}, {"width", heatmap.width}, {"values", heatmap.values}};
  else
    j["heatmap"] = nullptr;
  return j.dump(2) + "\n";
}

namespace {

std::uint8_t byte_of(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& px) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << header;
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) fail(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Heatmap& heatmap) {
  std::vector<std::uint8_t> px;
  for (double v : heatmap.values) px.push_back(byte_of(v));
  write_bytes(path, "P5\n" + std::to_string(heatmap.width) + " " + std::to_string(heatmap.height) + "\n255\n", px);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> px;
  for (float v : image.rgb) px.push_back(byte_of(v));
  write_bytes(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n", px);
}

}  // namespace xbm::interpret
