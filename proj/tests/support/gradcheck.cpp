#include "gradcheck.hpp"

namespace xbm::testing {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Shape random_shape(CounterRng& rng, int max_rank = 3, std::int64_t max_dim = 4) {
  const int rank = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_rank)));
  Shape s;
  for (int i = 0; i < rank; ++i) s.push_back(rdim(rng, 1, max_dim));
  return s;
}

// Shape with a random suffix used as the broadcast operand.
Shape suffix_of(CounterRng& rng, const Shape& s) {
  const std::size_t keep = 1 + rng.below(s.size());
  return Shape(s.end() - static_cast<std::ptrdiff_t>(keep), s.end());
}

GradCase unary(CounterRng& rng, std::function<Var(Var)> f, double lo = -1.0, double hi = 1.0) {
  return {{random_tensor(rng, random_shape(rng), lo, hi)},
          [f](Tape&, const std::vector<Var>& v) { return f(v[0]); }};
}

GradCase binary(CounterRng& rng, std::function<Var(Var, Var)> f) {
  const Shape s = random_shape(rng);
  const Shape t = rng.below(2) ? s : suffix_of(rng, s);
  return {{random_tensor(rng, s), random_tensor(rng, t)},
          [f](Tape&, const std::vector<Var>& v) { return f(v[0], v[1]); }};
}

}  // namespace

std::vector<OpGenerator> operator_generators() {
  std::vector<OpGenerator> g;
  g.push_back({"add", [](CounterRng& r) { return binary(r, ad::add); }});
  g.push_back({"sub", [](CounterRng& r) { return binary(r, ad::sub); }});
  g.push_back({"mul", [](CounterRng& r) { return binary(r, ad::mul); }});
  g.push_back({"scale", [](CounterRng& r) {
                 const double f = r.uniform() * 4.0 - 2.0;
                 return unary(r, [f](Var x) { return ad::scale(x, f); });
               }});
  g.push_back({"add_scalar", [](CounterRng& r) { return unary(r, [](Var x) { return ad::add_scalar(x, 0.3); }); }});
  g.push_back({"complement", [](CounterRng& r) { return unary(r, ad::complement); }});
  g.push_back({"exp", [](CounterRng& r) { return unary(r, ad::exp); }});
  g.push_back({"log", [](CounterRng& r) { return unary(r, ad::log, 0.2, 2.0); }});
  g.push_back({"matmul", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 const std::int64_t n = rdim(r, 1, 5);
                 return GradCase{{random_tensor(r, a), random_tensor(r, {a.back(), n})},
                                 [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }};
               }});
  g.push_back({"linear", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 const std::int64_t n = rdim(r, 1, 5);
                 return GradCase{{random_tensor(r, a), random_tensor(r, {a.back(), n}), random_tensor(r, {n})},
                                 [](Tape&, const std::vector<Var>& v) { return ad::linear(v[0], v[1], v[2]); }};
               }});
  g.push_back({"transpose", [](CounterRng& r) {
                 return GradCase{{random_tensor(r, {rdim(r), rdim(r)})},
                                 [](Tape&, const std::vector<Var>& v) { return ad::transpose(v[0]); }};
               }});
  g.push_back({"embedding", [](CounterRng& r) {
                 const std::int64_t vocab = rdim(r, 2, 8);
                 const std::int64_t n = rdim(r, 1, 6);
                 std::vector<int> ids;
                 for (std::int64_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(r.below(static_cast<std::uint64_t>(vocab))));
                 return GradCase{{random_tensor(r, {vocab, rdim(r, 1, 5)})},
                                 [ids, n](Tape&, const std::vector<Var>& v) { return ad::embedding(v[0], ids, {n}); }};
               }});
  g.push_back({"softmax", [](CounterRng& r) { return unary(r, ad::softmax, -3.0, 3.0); }});
  g.push_back({"log_softmax", [](CounterRng& r) { return unary(r, ad::log_softmax, -3.0, 3.0); }});
  g.push_back({"layer_norm", [](CounterRng& r) {
                 Shape s = random_shape(r, 3);
                 s.back() = rdim(r, 2, 8);
                 const std::int64_t d = s.back();
                 return GradCase{{random_tensor(r, s, -2.0, 2.0), random_tensor(r, {d}), random_tensor(r, {d})},
                                 [](Tape&, const std::vector<Var>& v) { return ad::layer_norm(v[0], v[1], v[2]); }};
               }});
  g.push_back({"gelu", [](CounterRng& r) { return unary(r, ad::gelu, -3.0, 3.0); }});
  g.push_back({"concat", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 const int axis = static_cast<int>(r.below(a.size()));
                 Shape b = a;
                 b[static_cast<std::size_t>(axis)] = rdim(r, 1, 4);
                 return GradCase{{random_tensor(r, a), random_tensor(r, b)},
                                 [axis](Tape&, const std::vector<Var>& v) { return ad::concat(v, axis); }};
               }});
  g.push_back({"slice", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 const int axis = static_cast<int>(r.below(a.size()));
                 const std::int64_t n = a[static_cast<std::size_t>(axis)];
                 const std::int64_t start = static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(n)));
                 const std::int64_t len = 1 + static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(n - start)));
                 return GradCase{{random_tensor(r, a)}, [axis, start, len](Tape&, const std::vector<Var>& v) {
                                   return ad::slice(v[0], axis, start, len);
                                 }};
               }});
  g.push_back({"reshape", [](CounterRng& r) {
                 const std::int64_t a = rdim(r, 1, 4), b = rdim(r, 1, 4);
                 return GradCase{{random_tensor(r, {a, b})},
                                 [a, b](Tape&, const std::vector<Var>& v) { return ad::reshape(v[0], {b, a}); }};
               }});
  g.push_back({"take", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 std::vector<std::int64_t> rows;
                 const auto n = rdim(r, 1, 6);
                 for (std::int64_t i = 0; i < n; ++i) rows.push_back(static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(a[0]))));
                 return GradCase{{random_tensor(r, a)}, [rows](Tape&, const std::vector<Var>& v) { return ad::take(v[0], rows); }};
               }});
  g.push_back({"gather", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 const auto total = static_cast<std::uint64_t>(ad::numel(a));
                 const std::int64_t n = rdim(r, 1, 8);
                 std::vector<std::int64_t> idx;
                 for (std::int64_t i = 0; i < n; ++i) idx.push_back(static_cast<std::int64_t>(r.below(total)));
                 return GradCase{{random_tensor(r, a)},
                                 [idx, n](Tape&, const std::vector<Var>& v) { return ad::gather(v[0], idx, {n}); }};
               }});
  g.push_back({"sum", [](CounterRng& r) { return unary(r, ad::sum); }});
  g.push_back({"mean", [](CounterRng& r) { return unary(r, ad::mean); }});
  g.push_back({"mean_axis", [](CounterRng& r) {
                 Shape a = random_shape(r, 3);
                 if (a.size() == 1) a.push_back(rdim(r, 1, 4));
                 const int axis = static_cast<int>(r.below(a.size()));
                 return GradCase{{random_tensor(r, a)},
                                 [axis](Tape&, const std::vector<Var>& v) { return ad::mean_axis(v[0], axis); }};
               }});
  g.push_back({"cross_entropy", [](CounterRng& r) {
                 const std::int64_t n = rdim(r, 1, 6), k = rdim(r, 2, 8);
                 std::vector<int> y;
                 std::vector<double> w;
                 for (std::int64_t i = 0; i < n; ++i) {
                   y.push_back(static_cast<int>(r.below(static_cast<std::uint64_t>(k))));
                   w.push_back(i == 0 ? 1.0 : r.uniform());
                 }
                 return GradCase{{random_tensor(r, {n, k}, -3.0, 3.0)},
                                 [y, w](Tape&, const std::vector<Var>& v) { return ad::cross_entropy(v[0], y, w); }};
               }});
  g.push_back({"cumprod_exclusive", [](CounterRng& r) { return unary(r, ad::cumprod_exclusive, -1.5, 1.5); }});
  g.push_back({"l2_normalize", [](CounterRng& r) { return unary(r, [](Var x) { return ad::l2_normalize(x); }, 0.1, 1.0); }});
  g.push_back({"attention", [](CounterRng& r) {
                 const std::int64_t b = rdim(r, 1, 2), tq = rdim(r, 1, 4), tk = rdim(r, 1, 4);
                 const int heads = 1 + static_cast<int>(r.below(2));
                 const std::int64_t d = heads * rdim(r, 1, 3);
                 const bool causal = r.below(2) == 1;
                 const bool weighted = r.below(2) == 1;
                 std::vector<Tensor> in{random_tensor(r, {b, tq, d}), random_tensor(r, {b, tk, d}), random_tensor(r, {b, tk, d})};
                 if (weighted) in.push_back(random_tensor(r, {b, tk}, 0.1, 1.0));
                 // Causal queries must see at least one key.
                 const std::int64_t offset = causal ? std::max<std::int64_t>(0, tk - tq) : 0;
                 return GradCase{in, [heads, causal, offset, weighted](Tape&, const std::vector<Var>& v) {
                                   ad::AttentionOptions o;
                                   o.heads = heads;
                                   o.causal = causal;
                                   o.query_offset = offset;
                                   if (weighted) o.key_weights = v[3];
                                   return ad::attention(v[0], v[1], v[2], o).out;
                                 }};
               }});
  return g;
}

}  // namespace xbm::testing
