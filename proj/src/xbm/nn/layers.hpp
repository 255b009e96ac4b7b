#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xbm/ad/ops.hpp"

namespace xbm::nn {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// Parameter initialisation keyed by (seed, parameter name), so values do not
/// depend on construction order.
Parameter normal_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed);
Parameter const_param(const std::string& name, Shape shape, double value);

struct Linear {
  Linear() = default;
  Linear(const std::string& name, int in, int out, std::uint64_t seed, bool bias = true);

  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;
  bool has_bias = true;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);

  Parameter gamma;
  Parameter beta;
};

struct Mlp {
  Mlp() = default;
  Mlp(const std::string& name, int dim, int hidden, std::uint64_t seed);

  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);

  Linear fc1;
  Linear fc2;
};

/// Projections around the composite attention operator.
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int heads, std::uint64_t seed);

  /// Full attention of queries `xq` over keys/values computed from `xkv`.
  ad::AttentionResult operator()(Tape& t, Var xq, Var xkv, bool causal, Var key_weights = {});
  /// Attention over keys and values that were already projected.
  ad::AttentionResult attend(Tape& t, Var xq, Var k, Var v, bool causal, std::int64_t query_offset,
                             Var key_weights = {});
  void collect(std::vector<Parameter*>& out);

  int heads = 1;
  Linear q, k, v, o;
};

}  // namespace xbm::nn
