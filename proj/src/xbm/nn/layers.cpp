#include "xbm/nn/layers.hpp"

#include <cmath>

#include "xbm/util/rng.hpp"

namespace xbm::nn {

Parameter normal_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
  CounterRng rng(seed, hash_name(name));
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = stddev * rng.normal();
  return Parameter(name, std::move(t));
}

Parameter const_param(const std::string& name, Shape shape, double value) {
  return Parameter(name, Tensor(std::move(shape), value));
}

Linear::Linear(const std::string& name, int in, int out, std::uint64_t seed, bool bias)
    : weight(normal_param(name + ".weight", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), seed)),
      bias(const_param(name + ".bias", {out}, 0.0)),
      has_bias(bias) {}

Var Linear::operator()(Tape& t, Var x) { return ad::linear(x, t.param(weight), has_bias ? t.param(bias) : Var{}); }

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma(const_param(name + ".gamma", {dim}, 1.0)), beta(const_param(name + ".beta", {dim}, 0.0)) {}

Var LayerNorm::operator()(Tape& t, Var x) { return ad::layer_norm(x, t.param(gamma), t.param(beta)); }

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Mlp::Mlp(const std::string& name, int dim, int hidden, std::uint64_t seed)
    : fc1(name + ".fc1", dim, hidden, seed), fc2(name + ".fc2", hidden, dim, seed) {}

Var Mlp::operator()(Tape& t, Var x) { return fc2(t, ad::gelu(fc1(t, x))); }

void Mlp::collect(std::vector<Parameter*>& out) {
  fc1.collect(out);
  fc2.collect(out);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, int dim, int heads_, std::uint64_t seed)
    : heads(heads_),
      q(name + ".q", dim, dim, seed),
      k(name + ".k", dim, dim, seed),
      v(name + ".v", dim, dim, seed),
      o(name + ".o", dim, dim, seed) {}

ad::AttentionResult MultiHeadAttention::operator()(Tape& t, Var xq, Var xkv, bool causal, Var key_weights) {
  return attend(t, xq, k(t, xkv), v(t, xkv), causal, 0, key_weights);
}

ad::AttentionResult MultiHeadAttention::attend(Tape& t, Var xq, Var kk, Var vv, bool causal, std::int64_t query_offset,
                                               Var key_weights) {
  ad::AttentionOptions opt;
  opt.heads = heads;
  opt.causal = causal;
  opt.query_offset = query_offset;
  opt.key_weights = key_weights;
  auto r = ad::attention(q(t, xq), kk, vv, opt);
  r.out = o(t, r.out);
  return r;
}

void MultiHeadAttention::collect(std::vector<Parameter*>& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

}  // namespace xbm::nn
