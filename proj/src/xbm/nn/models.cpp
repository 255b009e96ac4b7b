#include "xbm/nn/models.hpp"

#include <cmath>
#include <sstream>

#include "xbm/util/config.hpp"
#include "xbm/util/error.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::nn {

const char* mode_name(ClassifierMode mode) { return mode == ClassifierMode::text ? "text" : "multimodal"; }

ClassifierMode parse_mode(const std::string& name) {
  if (name == "text") return ClassifierMode::text;
  if (name == "multimodal") return ClassifierMode::multimodal;
  fail(ErrorKind::config, "unknown classifier mode: " + name);
}

void ModelConfig::validate() const {
  const auto bad = [](const std::string& m) { fail(ErrorKind::config, "model config: " + m); };
  if (patch <= 0 || image_size % patch != 0) bad("image_size must be a multiple of patch");
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0) bad("d_model must be divisible by heads");
  if (depth <= 0 || mlp_hidden <= 0) bad("depth and mlp_hidden must be positive");
  if (vocab_size <= Vocabulary::kBos) bad("vocabulary too small");
  if (max_len <= 0 || num_classes <= 0) bad("max_len and num_classes must be positive");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "image_size = " << image_size << "\npatch = " << patch << "\nd_model = " << d_model << "\ndepth = " << depth
     << "\nheads = " << heads << "\nmlp_hidden = " << mlp_hidden << "\nvocab_size = " << vocab_size
     << "\nmax_len = " << max_len << "\nnum_classes = " << num_classes
     << "\nclassifier_mode = " << mode_name(classifier_mode) << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const std::vector<std::string> keys{"image_size", "patch", "d_model", "depth",     "heads",
                                      "mlp_hidden", "vocab_size", "max_len", "num_classes", "classifier_mode"};
  const auto kv = KeyValueConfig::parse(text, std::set<std::string>(keys.begin(), keys.end()));
  kv.require(keys);
  ModelConfig c;
  c.image_size = static_cast<int>(kv.get_int("image_size", 0));
  c.patch = static_cast<int>(kv.get_int("patch", 0));
  c.d_model = static_cast<int>(kv.get_int("d_model", 0));
  c.depth = static_cast<int>(kv.get_int("depth", 0));
  c.heads = static_cast<int>(kv.get_int("heads", 0));
  c.mlp_hidden = static_cast<int>(kv.get_int("mlp_hidden", 0));
  c.vocab_size = static_cast<int>(kv.get_int("vocab_size", 0));
  c.max_len = static_cast<int>(kv.get_int("max_len", 0));
  c.num_classes = static_cast<int>(kv.get_int("num_classes", 0));
  c.classifier_mode = parse_mode(kv.get_string("classifier_mode", ""));
  c.validate();
  return c;
}

Tensor image_batch(std::span<const Image* const> images) {
  if (images.empty()) fail(ErrorKind::invalid_argument, "image_batch: no images");
  const int h = images[0]->height, w = images[0]->width;
  Tensor out(Shape{static_cast<std::int64_t>(images.size()), h, w, 3});
  std::size_t k = 0;
  for (const Image* im : images) {
    if (im->height != h || im->width != w) fail(ErrorKind::shape, "image_batch: mixed image sizes");
    for (float v : im->rgb) out[static_cast<std::int64_t>(k++)] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------

EncoderBlock::EncoderBlock(const std::string& name, const ModelConfig& c, std::uint64_t seed)
    : ln1(name + ".ln1", c.d_model),
      ln2(name + ".ln2", c.d_model),
      attn(name + ".attn", c.d_model, c.heads, seed),
      mlp(name + ".mlp", c.d_model, c.mlp_hidden, seed) {}

Var EncoderBlock::operator()(Tape& t, Var x) {
  Var h = ln1(t, x);
  x = ad::add(x, attn(t, h, h, false).out);
  return ad::add(x, mlp(t, ln2(t, x)));
}

void EncoderBlock::collect(std::vector<Parameter*>& out) {
  ln1.collect(out);
  attn.collect(out);
  ln2.collect(out);
  mlp.collect(out);
}

VisionEncoder::VisionEncoder(const std::string& name, const ModelConfig& c, std::uint64_t seed)
    : cfg_(c),
      patch_embed_(name + ".patch_embed", c.patch * c.patch * 3, c.d_model, seed),
      pos_(normal_param(name + ".pos", {c.num_patches(), c.d_model}, 0.1, seed)),
      ln_(name + ".ln", c.d_model) {
  c.validate();
  const int s = c.patches_per_side(), p = c.patch, w = c.image_size;
  for (int py = 0; py < s; ++py)
    for (int px = 0; px < s; ++px)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            patch_index_.push_back((static_cast<std::int64_t>(py * p + dy) * w + px * p + dx) * 3 + ch);
  for (int l = 0; l < c.depth; ++l) blocks_.emplace_back(name + ".block" + std::to_string(l), c, seed);
}

Var VisionEncoder::operator()(Tape& t, Var images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg_.image_size || s[2] != cfg_.image_size || s[3] != 3)
    fail(ErrorKind::shape, "encoder: expected images [B," + std::to_string(cfg_.image_size) + "," +
                               std::to_string(cfg_.image_size) + ",3], got " + ad::shape_str(s));
  const std::int64_t b = s[0];
  const std::int64_t per_image = static_cast<std::int64_t>(cfg_.image_size) * cfg_.image_size * 3;
  std::vector<std::int64_t> index;
  index.reserve(patch_index_.size() * static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i)
    for (auto k : patch_index_) index.push_back(i * per_image + k);
  const std::int64_t tokens = cfg_.num_patches();
  Var patches = ad::gather(images, std::move(index), {b, tokens, 3LL * cfg_.patch * cfg_.patch});
  Var x = ad::add(patch_embed_(t, patches), t.param(pos_));
  for (auto& blk : blocks_) x = blk(t, x);
  return ln_(t, x);
}

void VisionEncoder::collect(std::vector<Parameter*>& out) {
  patch_embed_.collect(out);
  out.push_back(&pos_);
  for (auto& b : blocks_) b.collect(out);
  ln_.collect(out);
}

// ---------------------------------------------------------------------------

DecoderBlock::DecoderBlock(const std::string& name, const ModelConfig& c, bool cross, std::uint64_t seed)
    : has_cross(cross),
      ln1(name + ".ln1", c.d_model),
      ln2(name + ".ln2", c.d_model),
      ln3(name + ".ln3", c.d_model),
      self_attn(name + ".self_attn", c.d_model, c.heads, seed),
      mlp(name + ".mlp", c.d_model, c.mlp_hidden, seed) {
  if (cross) cross_attn = MultiHeadAttention(name + ".cross_attn", c.d_model, c.heads, seed);
}

void DecoderBlock::collect(std::vector<Parameter*>& out) {
  ln1.collect(out);
  self_attn.collect(out);
  if (has_cross) {
    ln2.collect(out);
    cross_attn.collect(out);
  }
  ln3.collect(out);
  mlp.collect(out);
}

ExplanationDecoder::ExplanationDecoder(const std::string& name, const ModelConfig& c, std::uint64_t seed,
                                       bool cross_attention, bool block_special)
    : cfg_(c),
      cross_(cross_attention),
      block_special_(block_special),
      tok_(normal_param(name + ".tok", {c.vocab_size, c.d_model}, 0.3, seed)),
      pos_(normal_param(name + ".pos", {c.max_len, c.d_model}, 0.1, seed)),
      ln_(name + ".ln", c.d_model),
      out_(name + ".out", c.d_model, c.vocab_size, seed) {
  c.validate();
  if (block_special && c.vocab_size <= Vocabulary::kCls)
    fail(ErrorKind::config, "model config: vocabulary too small for special-token blocking");
  for (int l = 0; l < c.depth; ++l)
    blocks_.emplace_back(name + ".block" + std::to_string(l), c, cross_attention, seed);
}

bool ExplanationDecoder::is_blocked(int id) {
  return id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kCls;
}

Var ExplanationDecoder::embed_hard(Tape& t, std::span<const int> ids, std::int64_t batch, std::int64_t len,
                                   std::int64_t pos0) {
  if (pos0 + len > cfg_.max_len)
    fail(ErrorKind::invalid_argument, "decoder: prefix reaches position " + std::to_string(pos0 + len) +
                                          " beyond max_len " + std::to_string(cfg_.max_len));
  Var e = ad::embedding(t.param(tok_), ids, {batch, len});
  return ad::add(e, ad::slice(t.param(pos_), 0, pos0, len));
}

Var ExplanationDecoder::embed_soft(Tape& t, Var probs, std::int64_t pos0) {
  const std::int64_t len = probs.dim(1);
  if (probs.shape().size() != 3 || probs.dim(2) != cfg_.vocab_size)
    fail(ErrorKind::shape, "decoder: soft tokens must be [B,T," + std::to_string(cfg_.vocab_size) + "], got " +
                               ad::shape_str(probs.shape()));
  if (pos0 + len > cfg_.max_len)
    fail(ErrorKind::invalid_argument, "decoder: prefix reaches position " + std::to_string(pos0 + len) +
                                          " beyond max_len " + std::to_string(cfg_.max_len));
  return ad::add(ad::matmul(probs, t.param(tok_)), ad::slice(t.param(pos_), 0, pos0, len));
}

Var ExplanationDecoder::head(Tape& t, Var x) {
  Var z = out_(t, ln_(t, x));
  if (!block_special_) return z;
  Tensor mask(Shape{cfg_.vocab_size}, 0.0);
  for (int id = 0; id < cfg_.vocab_size; ++id)
    if (is_blocked(id)) mask[id] = -1e9;
  return ad::add(z, t.constant(std::move(mask)));
}

Var ExplanationDecoder::logits(Tape& t, Var inputs, Var memory) {
  Var x = inputs;
  for (auto& blk : blocks_) {
    Var h = blk.ln1(t, x);
    x = ad::add(x, blk.self_attn(t, h, h, true).out);
    if (cross_) {
      if (!memory.valid()) fail(ErrorKind::invalid_argument, "decoder: image memory required");
      x = ad::add(x, blk.cross_attn(t, blk.ln2(t, x), memory, false).out);
    }
    x = ad::add(x, blk.mlp(t, blk.ln3(t, x)));
  }
  return head(t, x);
}

DecoderCache ExplanationDecoder::begin(Tape& t, Var memory, std::int64_t batch) {
  DecoderCache c;
  c.batch = batch;
  c.self_k.resize(blocks_.size());
  c.self_v.resize(blocks_.size());
  if (cross_) {
    if (!memory.valid() || memory.dim(0) != batch)
      fail(ErrorKind::invalid_argument, "decoder: image memory with batch " + std::to_string(batch) + " required");
    for (auto& blk : blocks_) {
      c.cross_k.push_back(blk.cross_attn.k(t, memory));
      c.cross_v.push_back(blk.cross_attn.v(t, memory));
    }
  }
  return c;
}

Var ExplanationDecoder::step(Tape& t, DecoderCache& c, Var input) {
  if (c.length >= cfg_.max_len) fail(ErrorKind::invalid_argument, "decoder: prefix length reached max_len");
  Var x = input;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& blk = blocks_[l];
    Var h = blk.ln1(t, x);
    Var k = blk.self_attn.k(t, h);
    Var v = blk.self_attn.v(t, h);
    if (c.length == 0) {
      c.self_k[l] = k;
      c.self_v[l] = v;
    } else {
      const Var kk[2] = {c.self_k[l], k};
      const Var vv[2] = {c.self_v[l], v};
      c.self_k[l] = ad::concat(kk, 1);
      c.self_v[l] = ad::concat(vv, 1);
    }
    x = ad::add(x, blk.self_attn.attend(t, h, c.self_k[l], c.self_v[l], false, 0).out);
    if (cross_) x = ad::add(x, blk.cross_attn.attend(t, blk.ln2(t, x), c.cross_k[l], c.cross_v[l], false, 0).out);
    x = ad::add(x, blk.mlp(t, blk.ln3(t, x)));
  }
  ++c.length;
  return ad::reshape(head(t, x), {c.batch, cfg_.vocab_size});
}

void ExplanationDecoder::reorder(DecoderCache& c, std::span<const std::int64_t> rows) {
  for (auto* group : {&c.self_k, &c.self_v, &c.cross_k, &c.cross_v})
    for (auto& v : *group)
      if (v.valid()) v = ad::take(v, rows);
  c.batch = static_cast<std::int64_t>(rows.size());
}

Var ExplanationDecoder::teacher_forced_logits(Tape& t, std::span<const int> ids, std::int64_t batch, std::int64_t len,
                                              Var memory) {
  if (static_cast<std::int64_t>(ids.size()) != batch * len) fail(ErrorKind::shape, "decoder: ids size mismatch");
  std::vector<int> in(ids.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    in[static_cast<std::size_t>(b * len)] = Vocabulary::kBos;
    for (std::int64_t l = 1; l < len; ++l)
      in[static_cast<std::size_t>(b * len + l)] = ids[static_cast<std::size_t>(b * len + l - 1)];
  }
  return logits(t, embed_hard(t, in, batch, len), memory);
}

void ExplanationDecoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&tok_);
  out.push_back(&pos_);
  for (auto& b : blocks_) b.collect(out);
  ln_.collect(out);
  out_.collect(out);
}

// ---------------------------------------------------------------------------

ClassifierBlock::ClassifierBlock(const std::string& name, const ModelConfig& c, bool cross, std::uint64_t seed)
    : has_cross(cross),
      ln1(name + ".ln1", c.d_model),
      ln2(name + ".ln2", c.d_model),
      ln3(name + ".ln3", c.d_model),
      self_attn(name + ".self_attn", c.d_model, c.heads, seed),
      mlp(name + ".mlp", c.d_model, c.mlp_hidden, seed) {
  if (cross) cross_attn = MultiHeadAttention(name + ".cross_attn", c.d_model, c.heads, seed);
}

void ClassifierBlock::collect(std::vector<Parameter*>& out) {
  ln1.collect(out);
  self_attn.collect(out);
  if (has_cross) {
    ln2.collect(out);
    cross_attn.collect(out);
  }
  ln3.collect(out);
  mlp.collect(out);
}

Classifier::Classifier(const std::string& name, const ModelConfig& c, ClassifierMode mode, int out_dim,
                       std::uint64_t seed)
    : cfg_(c),
      mode_(mode),
      out_dim_(out_dim),
      tok_(normal_param(name + ".tok", {c.vocab_size, c.d_model}, 0.3, seed)),
      pos_(normal_param(name + ".pos", {c.max_len + 1, c.d_model}, 0.1, seed)),
      ln_(name + ".ln", c.d_model),
      head_(name + ".head", c.d_model, out_dim, seed) {
  c.validate();
  if (c.vocab_size <= Vocabulary::kCls) fail(ErrorKind::config, "model config: classifier needs a CLS token");
  for (int l = 0; l < c.depth; ++l)
    blocks_.emplace_back(name + ".block" + std::to_string(l), c, mode == ClassifierMode::multimodal, seed);
}

ClassifierOutput Classifier::operator()(Tape& t, Var memory, Var probs, Var presence_w) {
  const Shape& s = probs.shape();
  if (s.size() != 3 || s[2] != cfg_.vocab_size || s[1] > cfg_.max_len)
    fail(ErrorKind::shape, "classifier: explanation must be [B,L<=" + std::to_string(cfg_.max_len) + "," +
                               std::to_string(cfg_.vocab_size) + "], got " + ad::shape_str(s));
  const std::int64_t b = s[0], len = s[1];
  if (presence_w.shape() != Shape{b, len}) fail(ErrorKind::shape, "classifier: presence must be [B,L]");
  const bool mm = mode_ == ClassifierMode::multimodal;
  if (mm && (!memory.valid() || memory.dim(0) != b))
    fail(ErrorKind::invalid_argument, "classifier: multimodal mode needs image memory for every example");

  Var table = t.param(tok_);
  const std::vector<int> cls_ids(static_cast<std::size_t>(b), Vocabulary::kCls);
  const Var parts[2] = {ad::embedding(table, cls_ids, {b, 1}), ad::matmul(probs, table)};
  Var x = ad::add(ad::concat(parts, 1), ad::slice(t.param(pos_), 0, 0, len + 1));
  const Var kw_parts[2] = {t.constant(Tensor(Shape{b, 1}, 1.0)), presence_w};
  Var kw = ad::concat(kw_parts, 1);

  ClassifierOutput out;
  for (auto& blk : blocks_) {
    Var h = blk.ln1(t, x);
    auto r = blk.self_attn(t, h, h, false, kw);
    out.self_weights.push_back(std::move(r.weights));
    x = ad::add(x, r.out);
    if (mm) {
      auto c = blk.cross_attn(t, blk.ln2(t, x), memory, false);
      out.cross_weights.push_back(std::move(c.weights));
      x = ad::add(x, c.out);
    }
    x = ad::add(x, blk.mlp(t, blk.ln3(t, x)));
  }
  Var cls = ad::reshape(ad::slice(ln_(t, x), 1, 0, 1), {b, cfg_.d_model});
  out.logits = head_(t, cls);
  return out;
}

void Classifier::collect(std::vector<Parameter*>& out) {
  out.push_back(&tok_);
  out.push_back(&pos_);
  for (auto& b : blocks_) b.collect(out);
  ln_.collect(out);
  head_.collect(out);
}

// ---------------------------------------------------------------------------

Var one_hot(Tape& t, std::span<const std::vector<int>> seqs, std::int64_t len, std::int64_t vocab) {
  const auto b = static_cast<std::int64_t>(seqs.size());
  Tensor oh(Shape{b, len, vocab}, 0.0);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    if (static_cast<std::int64_t>(s.size()) > len)
      fail(ErrorKind::invalid_argument, "explanation of " + std::to_string(s.size()) + " tokens exceeds length " +
                                            std::to_string(len));
    for (std::int64_t l = 0; l < len; ++l) {
      const int id = l < static_cast<std::int64_t>(s.size()) ? s[static_cast<std::size_t>(l)] : Vocabulary::kPad;
      if (id < 0 || id >= vocab) fail(ErrorKind::invalid_argument, "unknown token id " + std::to_string(id));
      oh[(i * len + l) * vocab + id] = 1.0;
    }
  }
  return t.constant(std::move(oh));
}

Var presence(Var probs) {
  const std::int64_t b = probs.dim(0), len = probs.dim(1), v = probs.dim(2);
  std::vector<std::int64_t> eos, pad;
  for (std::int64_t i = 0; i < b * len; ++i) {
    eos.push_back(i * v + Vocabulary::kEos);
    pad.push_back(i * v + Vocabulary::kPad);
  }
  Var alive = ad::cumprod_exclusive(ad::complement(ad::gather(probs, std::move(eos), {b, len})));
  return ad::mul(alive, ad::complement(ad::gather(probs, std::move(pad), {b, len})));
}

std::int64_t parameter_count(std::span<Parameter* const> params) {
  std::int64_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace xbm::nn
