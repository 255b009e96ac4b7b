#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xbm/nn/layers.hpp"
#include "xbm/world/scene.hpp"

namespace xbm::nn {

enum class ClassifierMode { text, multimodal };

const char* mode_name(ClassifierMode mode);
ClassifierMode parse_mode(const std::string& name);

struct ModelConfig {
  int image_size = 32;
  int patch = 8;
  int d_model = 32;
  int depth = 2;
  int heads = 4;
  int mlp_hidden = 64;
  int vocab_size = 34;
  int max_len = 36;  // explanation length L, EOS included
  int num_classes = 8;
  ClassifierMode classifier_mode = ClassifierMode::multimodal;

  int patches_per_side() const { return image_size / patch; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  /// Throws a config error on inconsistent sizes.
  void validate() const;
  std::string to_text() const;
  /// Parses to_text() output; every key is required.
  static ModelConfig from_text(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

/// Batch of images as a [B, H, W, 3] tensor.
Tensor image_batch(std::span<const Image* const> images);

struct EncoderBlock {
  EncoderBlock() = default;
  EncoderBlock(const std::string& name, const ModelConfig& c, std::uint64_t seed);
  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);

  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Mlp mlp;
};

/// h_psi: patchify, linear patch embedding, learned positions, pre-norm
/// transformer blocks, final layer norm.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const std::string& name, const ModelConfig& c, std::uint64_t seed);

  /// images: [B, H, W, 3] -> [B, num_patches, d_model]
  Var operator()(Tape& t, Var images);
  void collect(std::vector<Parameter*>& out);

 private:
  ModelConfig cfg_;
  std::vector<std::int64_t> patch_index_;  // flat gather index for one image
  Linear patch_embed_;
  Parameter pos_;
  std::vector<EncoderBlock> blocks_;
  LayerNorm ln_;
};

struct DecoderBlock {
  DecoderBlock() = default;
  DecoderBlock(const std::string& name, const ModelConfig& c, bool cross, std::uint64_t seed);
  void collect(std::vector<Parameter*>& out);

  bool has_cross = true;
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Mlp mlp;
};

/// Incremental decoding state: projected keys/values of every position fed
/// so far, per layer, plus the projected image memory for cross-attention.
struct DecoderCache {
  std::int64_t batch = 0;
  std::int64_t length = 0;
  std::vector<Var> self_k, self_v;    // per layer, [B, length, d]
  std::vector<Var> cross_k, cross_v;  // per layer, [B, Tm, d]
};

/// g_phi: autoregressive transformer over explanation tokens. With
/// cross-attention disabled it is a plain language model.
class ExplanationDecoder {
 public:
  ExplanationDecoder() = default;
  ExplanationDecoder(const std::string& name, const ModelConfig& c, std::uint64_t seed, bool cross_attention = true,
                     bool block_special = true);

  /// Token + position embedding of hard ids ([B*T], row-major) at positions
  /// pos0..pos0+T-1.
  Var embed_hard(Tape& t, std::span<const int> ids, std::int64_t batch, std::int64_t len, std::int64_t pos0 = 0);
  /// Convex combination of token embedding rows; probs: [B, T, V].
  Var embed_soft(Tape& t, Var probs, std::int64_t pos0 = 0);

  /// Teacher-forced logits [B, T, V] for input embeddings [B, T, d] with a
  /// causal mask. `memory` is ignored without cross-attention.
  Var logits(Tape& t, Var inputs, Var memory);

  DecoderCache begin(Tape& t, Var memory, std::int64_t batch);
  /// Feeds one position ([B, 1, d]) and returns next-token logits [B, V].
  Var step(Tape& t, DecoderCache& cache, Var input);
  /// Selects cache rows (beam reordering).
  static void reorder(DecoderCache& cache, std::span<const std::int64_t> rows);

  /// Convenience: teacher-forced logits for BOS + ids[:, :T-1] so output
  /// position l predicts ids[:, l].
  Var teacher_forced_logits(Tape& t, std::span<const int> ids, std::int64_t batch, std::int64_t len, Var memory);

  const ModelConfig& config() const { return cfg_; }
  bool cross_attention() const { return cross_; }
  bool blocks_special() const { return block_special_; }
  void collect(std::vector<Parameter*>& out);

  /// Token ids the decoder never emits when special tokens are blocked.
  static bool is_blocked(int id);

 private:
  Var head(Tape& t, Var x);

  ModelConfig cfg_;
  bool cross_ = true;
  bool block_special_ = true;
  Parameter tok_;
  Parameter pos_;
  std::vector<DecoderBlock> blocks_;
  LayerNorm ln_;
  Linear out_;
};

struct ClassifierBlock {
  ClassifierBlock() = default;
  ClassifierBlock(const std::string& name, const ModelConfig& c, bool cross, std::uint64_t seed);
  void collect(std::vector<Parameter*>& out);

  bool has_cross = true;
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Mlp mlp;
};

struct ClassifierOutput {
  Var logits;                        // [B, out_dim]
  std::vector<Tensor> self_weights;  // per layer [B, H, 1+L, 1+L]
  std::vector<Tensor> cross_weights; // per layer [B, H, 1+L, Tm]; empty in text mode
};

/// f_theta: [CLS] + explanation tokens (soft or hard, as embedding mixtures)
/// through self-attention blocks, optionally cross-attending to image
/// embeddings; linear head on the [CLS] output.
class Classifier {
 public:
  Classifier() = default;
  Classifier(const std::string& name, const ModelConfig& c, ClassifierMode mode, int out_dim, std::uint64_t seed);

  /// probs: [B, L, V] rows on the simplex; presence: [B, L] key weights (see
  /// presence()). memory is ignored in text mode.
  ClassifierOutput operator()(Tape& t, Var memory, Var probs, Var presence);

  ClassifierMode mode() const { return mode_; }
  int out_dim() const { return out_dim_; }
  void collect(std::vector<Parameter*>& out);

 private:
  ModelConfig cfg_;
  ClassifierMode mode_ = ClassifierMode::multimodal;
  int out_dim_ = 0;
  Parameter tok_;
  Parameter pos_;
  std::vector<ClassifierBlock> blocks_;
  LayerNorm ln_;
  Linear head_;
};

/// One-hot [B, L, V] constant for hard ids (PAD beyond each sequence's end).
Var one_hot(Tape& t, std::span<const std::vector<int>> seqs, std::int64_t len, std::int64_t vocab);
/// Soft presence of each position: prod_{j<l}(1 - P(EOS at j)) * (1 - P(PAD at l)).
/// On one-hot input this is exactly 1 up to and including the first EOS and
/// 0 afterwards.
Var presence(Var probs);

std::int64_t parameter_count(std::span<Parameter* const> params);

}  // namespace xbm::nn
