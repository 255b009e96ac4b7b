#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xbm/train/xbm.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::interpret {

enum class PhraseKind { object, position };

struct ConceptPhrase {
  int start = 0;  // token positions, [start, end)
  int end = 0;
  PhraseKind kind = PhraseKind::object;
  std::string text;
  double score = 0.0;
};

/// Deterministic chunker over the caption grammar. Object phrases are
/// `determiner? size? color? shape`, built leftwards from each shape noun;
/// position phrases are `determiner? position+`. Reads up to the first EOS.
std::vector<ConceptPhrase> extract_concept_phrases(std::span<const int> tokens,
                                                   const Vocabulary& vocab = Vocabulary::standard());

/// Classifier layer read by phrase scores and heatmaps: ceil(depth / 2),
/// counted from 1; returned as a zero-based index.
int middle_layer(int depth);

enum class HeadAggregation { mean, max };

const char* aggregation_name(HeadAggregation a);
HeadAggregation parse_aggregation(const std::string& name);

/// [CLS]-row self-attention mass on each phrase's tokens at the middle layer,
/// aggregated over heads and renormalised over phrases. `self_weights` is
/// one example's [H, 1+L, 1+L] slice (row/column 0 is [CLS]).
std::vector<ConceptPhrase> phrase_scores(const ad::Tensor& self_weights, std::vector<ConceptPhrase> phrases,
                                         HeadAggregation agg = HeadAggregation::mean);

/// Token-space cross-attention heat: mean over `positions` of the
/// head-aggregated attention rows onto image tokens. `cross_weights` is one
/// example's [H, 1+L, Tm] slice; positions index explanation tokens (0-based,
/// without the [CLS] offset).
std::vector<double> token_heat(const ad::Tensor& cross_weights, std::span<const int> positions,
                               HeadAggregation agg = HeadAggregation::mean);

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, min-max normalised to [0, 1]
};

/// Nearest-neighbour upsampling of a (grid x grid) token heat to
/// (grid*patch)^2 pixels, then min-max normalisation (constant -> zeros).
Heatmap upsample(std::span<const double> heat, int grid, int patch);

/// Positions of an explanation up to and including its first EOS.
std::vector<int> explanation_positions(std::span<const int> tokens);

struct SegmentationScores {
  double pixel_acc = 0.0;
  double miou = 0.0;
  double map = 0.0;
  int evaluated = 0;
  int skipped_empty = 0;
};

/// Binarises each heatmap at its own mean value (strictly above), and scores
/// it against the mask: pixel accuracy, foreground IoU, and average precision
/// of the raw scores (ties grouped). Means are over evaluated images; images
/// with empty masks are skipped and counted.
SegmentationScores segmentation_eval(std::span<const Heatmap> heatmaps, std::span<const Mask> masks);

/// Mean heat inside the mask divided by mean heat outside it; +inf when only
/// the outside is cold, 1 for a constant map. Throws on empty or full masks.
double mask_density_ratio(const Heatmap& heatmap, const Mask& mask);
/// ratio > 1: the map puts more than its area share of mass on the mask.
bool concentrated_in_mask(const Heatmap& heatmap, const Mask& mask);

/// Average precision of `scores` against binary `labels`, with tied scores
/// treated as one threshold.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

enum class InterventionKind { randomized, ground_truth, custom };

const char* intervention_name(InterventionKind k);
InterventionKind parse_intervention(const std::string& name);

struct InterventionSpec {
  InterventionKind kind = InterventionKind::randomized;
  std::vector<int> replacement;  // custom only
  std::uint64_t seed = 0;        // randomized only
};

/// Uniformly drawn word tokens (no special ids) of the original's length
/// excluding EOS, followed by EOS. Keyed by (seed, example seed).
std::vector<int> randomized_explanation(std::span<const int> original, std::uint64_t seed,
                                        std::uint64_t example_seed, int vocab_size);

struct InterventionResult {
  std::vector<std::vector<int>> original;
  std::vector<std::vector<int>> replaced;
  train::XbmModel::Prediction before;
  train::XbmModel::Prediction after;
};

/// Classifies a batch with generated explanations and with the replacement
/// given by `spec`. Errors: ground_truth on examples without captions (data),
/// custom replacement with unknown ids or longer than L (invalid_argument).
InterventionResult intervene(train::XbmModel& model, std::span<const Example* const> batch,
                             const InterventionSpec& spec, int beam_width);

struct InterventionAccuracy {
  double normal = 0.0;
  double replaced = 0.0;
  int count = 0;
};

InterventionAccuracy intervention_accuracy(train::XbmModel& model, std::span<const Example> split,
                                           const InterventionSpec& spec, int beam_width, int chunk = 32);

struct ExplanationReport {
  std::uint64_t example_seed = 0;
  int label = 0;
  int predicted = 0;
  std::vector<int> tokens;
  std::string text;
  std::vector<ConceptPhrase> phrases;  // sorted by descending score
  int layer = 0;
  HeadAggregation aggregation = HeadAggregation::mean;
  bool has_heatmap = false;
  Heatmap heatmap;

  /// Three sections: explanation, concept phrases, heatmap.
  std::string to_text() const;
  std::string to_json() const;
};

/// Explains one example with the student's beam search and the classifier's
/// attention (heatmap only in multimodal mode).
ExplanationReport explain_example(train::XbmModel& model, const Example& example, int beam_width,
                                  HeadAggregation agg = HeadAggregation::mean);

/// Whole-explanation heatmaps for a batch (multimodal classifier only).
std::vector<Heatmap> explanation_heatmaps(train::XbmModel& model, std::span<const Example* const> batch,
                                          int beam_width, HeadAggregation agg = HeadAggregation::mean);

/// Binary PGM (P5) of a heatmap, 8-bit.
void write_pgm(const std::filesystem::path& path, const Heatmap& heatmap);
/// Binary PPM (P6) of an RGB image, 8-bit.
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace xbm::interpret
