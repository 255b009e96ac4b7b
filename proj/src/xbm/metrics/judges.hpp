#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xbm/nn/checkpoint.hpp"
#include "xbm/train/xbm.hpp"

namespace xbm::metrics {

using ad::Tape;
using ad::Var;

/// Contrastively trained image/text towers with unit-norm outputs. The image
/// tower is a vision encoder with mean pooling and a projection; the text
/// tower is a text-only classifier whose head emits the embedding.
class DualEncoder {
 public:
  DualEncoder() = default;
  DualEncoder(const nn::ModelConfig& cfg, std::uint64_t seed);

  /// images: [B, H, W, 3] -> [B, d] unit rows.
  Var image_embed(Tape& t, Var images);
  /// probs: [B, L, V] -> [B, d] unit rows.
  Var text_embed(Tape& t, Var probs);
  void collect(std::vector<ad::Parameter*>& out);

 private:
  nn::VisionEncoder image_;
  nn::Linear proj_;
  nn::Classifier text_;
};

/// Autoregressive model over the caption vocabulary (no image input, no
/// blocked tokens).
using ReferenceLM = nn::ExplanationDecoder;

struct JudgeConfig {
  int epochs = 8;
  double lr = 3e-3;
  int batch_size = 32;
  double temperature = 0.07;
  double weight_decay = 0.01;
  /// Caps optimizer steps per judge; 0 means no cap.
  std::int64_t max_steps = 0;
};

struct Judges {
  Judges() = default;
  Judges(const nn::ModelConfig& cfg, std::uint64_t seed);

  std::vector<ad::Parameter*> dual_params();
  std::vector<ad::Parameter*> lm_params();
  nn::Checkpoint to_checkpoint();
  static Judges from_checkpoint(const nn::Checkpoint& ckpt);
  /// SHA-256 of the serialized judge checkpoint.
  std::string checksum();

  nn::ModelConfig cfg;
  DualEncoder dual;
  ReferenceLM lm;
};

struct JudgeEpoch {
  int epoch = 0;
  double contrastive = 0.0;
  double lm_nll = 0.0;
};

/// Symmetric contrastive training of the dual encoder and maximum-likelihood
/// training of the reference LM on a captioned corpus.
Judges train_judges(std::span<const Example> corpus, const nn::ModelConfig& cfg, const JudgeConfig& config,
                    std::uint64_t seed, const std::function<void(const JudgeEpoch&)>& on_epoch = {});

/// Symmetric InfoNCE over a batch of matched (image, text) embeddings.
Var contrastive_loss(Var image_emb, Var text_emb, double temperature);

/// True when an explanation has no tokens before its first EOS.
bool is_empty_explanation(std::span<const int> tokens);

/// Cosine similarity of image and text embeddings, one per example. Empty
/// explanations get 0 (zero text embedding).
std::vector<double> alignment_scores(Judges& judges, std::span<const Example* const> batch,
                                     std::span<const std::vector<int>> texts);

/// exp of the mean next-token NLL over the text's positions up to and
/// including its first EOS (all positions when there is none), conditioned
/// on BOS. Throws invalid_argument on empty text.
double perplexity(ReferenceLM& lm, std::span<const int> text);
std::vector<double> perplexities(ReferenceLM& lm, std::span<const std::vector<int>> texts);

/// Mean over explanations of distinct word tokens / word tokens (0 for an
/// explanation without words).
double unique_token_ratio(std::span<const std::vector<int>> explanations);

struct DegenerationCheck {
  double unique_ratio = 0.0;
  double perplexity = 0.0;
  double reference_perplexity = 0.0;
  bool fired = false;
};

/// Fires when the unique-token ratio is below 0.2 or the perplexity exceeds
/// three times the reference run's.
DegenerationCheck degeneration(double unique_ratio, double perplexity, double reference_perplexity);

struct EvalRow {
  std::string label;
  double test_acc = 0.0;
  double alignment = 0.0;
  double perplexity = 0.0;
  double pixel_acc = 0.0;
  double miou = 0.0;
  double map = 0.0;
  std::string judge_checksum;
  int examples = 0;
  int empty_explanations = 0;
  int perplexity_count = 0;
  int segmentation_count = 0;
  int segmentation_skipped = 0;
  double unique_ratio = 0.0;
  bool degenerate = false;
};

struct EvalOptions {
  int beam_width = 3;
  int chunk = 32;
  /// Skip heatmap segmentation (text-mode classifiers always skip).
  bool segmentation = true;
};

/// Accuracy, mean alignment, mean perplexity (non-empty explanations only),
/// segmentation of whole-explanation heatmaps against target masks, and the
/// unique-token ratio, for beam-search explanations of `split`.
EvalRow evaluate(train::XbmModel& model, std::span<const Example> split, Judges& judges, const std::string& label,
                 const EvalOptions& options = {});

std::string report_header();
std::string report_line(const EvalRow& row);
std::string report_tsv(std::span<const EvalRow> rows);

}  // namespace xbm::metrics
