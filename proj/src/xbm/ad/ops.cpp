#include "xbm/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "xbm/util/error.hpp"

namespace xbm::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  fail(ErrorKind::shape, std::string(op) + ": " + detail);
}

Tape& tape_of(const char* op, Var a) {
  if (!a.valid()) fail(ErrorKind::state, std::string(op) + ": unbound operand");
  return *a.tape();
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) shape_error(op, "axis out of range for rank " + std::to_string(rank));
  return axis;
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t len = 1;
  std::int64_t inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[static_cast<std::size_t>(i)];
  a.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& t = tape_of("add", a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (!is_suffix(sa, sb)) shape_error("add", "cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  Tensor out = a.value();
  const auto bd = b.value().data();
  const std::int64_t inner = static_cast<std::int64_t>(bd.size());
  auto od = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) od[static_cast<std::size_t>(i)] += bd[static_cast<std::size_t>(i % inner)];
  const int ia = a.id(), ib = b.id();
  return t.record("add", std::move(out), {a, b}, [ia, ib, inner](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    if (tp.requires_grad(ia)) {
      auto ga = tp.accum(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.accum(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % static_cast<std::size_t>(inner)] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of("sub", a);
  if (!is_suffix(a.shape(), b.shape()))
    shape_error("sub", "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  Tensor out = a.value();
  const auto bd = b.value().data();
  const std::size_t inner = bd.size();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i % inner];
  const int ia = a.id(), ib = b.id();
  return t.record("sub", std::move(out), {a, b}, [ia, ib, inner](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    if (tp.requires_grad(ia)) {
      auto ga = tp.accum(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.accum(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of("mul", a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (!is_suffix(sa, sb)) shape_error("mul", "cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  Tensor out = a.value();
  const auto bd = b.value().data();
  const std::size_t inner = bd.size();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i % inner];
  const int ia = a.id(), ib = b.id();
  return t.record("mul", std::move(out), {a, b}, [ia, ib, inner](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    const auto av = tp.value(ia).data();
    const auto bv = tp.value(ib).data();
    if (tp.requires_grad(ia)) {
      auto ga = tp.accum(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % inner];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.accum(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of("scale", a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  const int ia = a.id();
  return t.record("scale", std::move(out), {a}, [ia, factor](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    auto ga = tp.accum(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_scalar(Var a, double offset) {
  Tape& t = tape_of("add_scalar", a);
  Tensor out = a.value();
  for (auto& v : out.data()) v += offset;
  const int ia = a.id();
  return t.record("add_scalar", std::move(out), {a}, [ia](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    auto ga = tp.accum(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var complement(Var a) {
  Tape& t = tape_of("complement", a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 - v;
  const int ia = a.id();
  return t.record("complement", std::move(out), {a}, [ia](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    auto ga = tp.accum(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

Var exp(Var a) {
  Tape& t = tape_of("exp", a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  const int ia = a.id();
  return t.record("exp", std::move(out), {a}, [ia](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    const auto y = tp.value(self).data();
    auto ga = tp.accum(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Tape& t = tape_of("log", a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::log(v);
  const int ia = a.id();
  return t.record("log", std::move(out), {a}, [ia](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    const auto x = tp.value(ia).data();
    auto ga = tp.accum(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// c[m, n] += a[m, k] * b[k, n]
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// ga[m, k] += g[m, n] * b[k, n]^T
void gemm_nt(const double* g, const double* b, double* ga, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* gai = ga + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::int64_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      gai[p] += s;
    }
  }
}

// gb[k, n] += a[m, k]^T * g[m, n]
void gemm_tn(const double* a, const double* g, double* gb, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* gbp = gb + p * n;
      for (std::int64_t j = 0; j < n; ++j) gbp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of("matmul", a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() != 2 || sa.back() != sb[0])
    shape_error("matmul", "incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  const std::int64_t k = sb[0], n = sb[1];
  const std::int64_t m = a.value().size() / k;
  Shape out_shape = sa;
  out_shape.back() = n;
  Tensor out(out_shape);
  gemm_nn(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
  const int ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    if (tp.requires_grad(ia)) gemm_nt(g, tp.value(ib).ptr(), tp.accum(ia).ptr(), m, k, n);
    if (tp.requires_grad(ib)) gemm_tn(tp.value(ia).ptr(), g, tp.accum(ib).ptr(), m, k, n);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = tape_of("linear", x);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.back() != sw[0])
    shape_error("linear", "incompatible shapes " + shape_str(sx) + " x " + shape_str(sw));
  const std::int64_t k = sw[0], n = sw[1];
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != n))
    shape_error("linear", "bias shape " + shape_str(bias.shape()) + " does not match output width " + std::to_string(n));
  const std::int64_t m = x.value().size() / k;
  Shape out_shape = sx;
  out_shape.back() = n;
  Tensor out(out_shape);
  if (bias.valid()) {
    const double* bd = bias.value().ptr();
    double* od = out.ptr();
    for (std::int64_t i = 0; i < m; ++i) std::copy(bd, bd + n, od + i * n);
  }
  gemm_nn(x.value().ptr(), weight.value().ptr(), out.ptr(), m, k, n);
  const int ix = x.id(), iw = weight.id();
  const int ib = bias.valid() ? bias.id() : -1;
  std::vector<Var> parents{x, weight};
  if (bias.valid()) parents.push_back(bias);
  return t.record("linear", std::move(out), parents, [ix, iw, ib, m, k, n](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    if (tp.requires_grad(ix)) gemm_nt(g, tp.value(iw).ptr(), tp.accum(ix).ptr(), m, k, n);
    if (tp.requires_grad(iw)) gemm_tn(tp.value(ix).ptr(), g, tp.accum(iw).ptr(), m, k, n);
    if (ib >= 0 && tp.requires_grad(ib)) {
      double* gb = tp.accum(ib).ptr();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of("transpose", a);
  const Shape& s = a.shape();
  if (s.size() != 2) shape_error("transpose", "expects rank 2, got " + shape_str(s));
  const std::int64_t r = s[0], c = s[1];
  Tensor out(Shape{c, r});
  const double* ad = a.value().ptr();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  const int ia = a.id();
  return t.record("transpose", std::move(out), {a}, [ia, r, c](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* ga = tp.accum(ia).ptr();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var embedding(Var table, std::span<const int> ids, Shape prefix) {
  Tape& t = tape_of("embedding", table);
  const Shape& st = table.shape();
  if (st.size() != 2) shape_error("embedding", "table must be rank 2, got " + shape_str(st));
  if (numel(prefix) != static_cast<std::int64_t>(ids.size()))
    shape_error("embedding", "prefix " + shape_str(prefix) + " does not match " + std::to_string(ids.size()) + " ids");
  const std::int64_t vocab = st[0], d = st[1];
  for (int id : ids)
    if (id < 0 || id >= vocab)
      fail(ErrorKind::invalid_argument, "embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                                            std::to_string(vocab));
  Shape out_shape = prefix;
  out_shape.push_back(d);
  Tensor out(out_shape);
  const double* td = table.value().ptr();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(td + ids[i] * d, td + (ids[i] + 1) * d, out.ptr() + static_cast<std::int64_t>(i) * d);
  const int it = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return t.record("embedding", std::move(out), {table}, [it, d, saved = std::move(saved)](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* gt = tp.accum(it).ptr();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* row = gt + saved[i] * d;
      const double* gi = g + static_cast<std::int64_t>(i) * d;
      for (std::int64_t j = 0; j < d; ++j) row[j] += gi[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and nonlinearities

Var softmax(Var x) {
  Tape& t = tape_of("softmax", x);
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.value().size() / n;
  Tensor out = x.value();
  double* o = out.ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = o + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::int64_t j = 0; j < n; ++j) row[j] /= s;
  }
  const int ix = x.id();
  return t.record("softmax", std::move(out), {x}, [ix, n, rows](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    const double* y = tp.value(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * n;
      const double* yr = y + r * n;
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var log_softmax(Var x) {
  Tape& t = tape_of("log_softmax", x);
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.value().size() / n;
  Tensor out = x.value();
  double* o = out.ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = o + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t j = 0; j < n; ++j) row[j] -= lse;
  }
  const int ix = x.id();
  return t.record("log_softmax", std::move(out), {x}, [ix, n, rows](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    const double* y = tp.value(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::int64_t j = 0; j < n; ++j) gs += g[r * n + j];
      for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of("layer_norm", x);
  const std::int64_t n = x.shape().back();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    shape_error("layer_norm", "gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                  " do not match feature width of " + shape_str(x.shape()));
  const std::int64_t rows = x.value().size() / n;
  Tensor out(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(x.value().size()));
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  const double* xd = x.value().ptr();
  const double* gd = gamma.value().ptr();
  const double* bd = beta.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * n;
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * rs;
      xhat[static_cast<std::size_t>(r * n + j)] = h;
      out[r * n + j] = h * gd[j] + bd[j];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record("layer_norm", std::move(out), {x, gamma, beta},
                  [ix, ig, ib, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, int self) {
                    const double* g = tp.out_grad(self).ptr();
                    const double* gm = tp.value(ig).ptr();
                    if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                      double* gg = tp.requires_grad(ig) ? tp.accum(ig).ptr() : nullptr;
                      double* gb = tp.requires_grad(ib) ? tp.accum(ib).ptr() : nullptr;
                      for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < n; ++j) {
                          const auto idx = static_cast<std::size_t>(r * n + j);
                          if (gg) gg[j] += g[idx] * xhat[idx];
                          if (gb) gb[j] += g[idx];
                        }
                    }
                    if (!tp.requires_grad(ix)) return;
                    double* gx = tp.accum(ix).ptr();
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto idx = static_cast<std::size_t>(r * n + j);
                        const double dh = g[idx] * gm[j];
                        m1 += dh;
                        m2 += dh * xhat[idx];
                      }
                      m1 *= inv_n;
                      m2 *= inv_n;
                      const double rs = rstd[static_cast<std::size_t>(r)];
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto idx = static_cast<std::size_t>(r * n + j);
                        const double dh = g[idx] * gm[j];
                        gx[idx] += rs * (dh - m1 - xhat[idx] * m2);
                      }
                    }
                  });
}

Var gelu(Var x) {
  Tape& t = tape_of("gelu", x);
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  const int ix = x.id();
  return t.record("gelu", std::move(out), {x}, [ix](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    const auto xv = tp.value(ix).data();
    auto gx = tp.accum(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double u = kC * (v + kA * v * v * v);
      const double th = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) fail(ErrorKind::shape, "concat: no operands");
  Tape& t = tape_of("concat", parts[0]);
  const Shape& s0 = parts[0].shape();
  axis = normalize_axis("concat", axis, static_cast<int>(s0.size()));
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> lens;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", "rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        shape_error("concat", "shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    lens.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const double* src = parts[pi].value().ptr();
    const std::int64_t chunk = lens[pi] * os.inner;
    for (std::int64_t o = 0; o < os.outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.ptr() + o * os.len * os.inner + offset * os.inner);
    offset += lens[pi];
  }
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record("concat", std::move(out), parts, [ids, lens, os](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    std::int64_t offset = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::int64_t chunk = lens[pi] * os.inner;
      if (tp.requires_grad(ids[pi])) {
        double* gp = tp.accum(ids[pi]).ptr();
        for (std::int64_t o = 0; o < os.outer; ++o) {
          const double* src = g + o * os.len * os.inner + offset * os.inner;
          for (std::int64_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
        }
      }
      offset += lens[pi];
    }
  });
}

Var slice(Var x, int axis, std::int64_t start, std::int64_t length) {
  Tape& t = tape_of("slice", x);
  const Shape& s = x.shape();
  axis = normalize_axis("slice", axis, static_cast<int>(s.size()));
  const AxisSplit is = split_axis(s, axis);
  if (start < 0 || length <= 0 || start + length > is.len)
    shape_error("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside axis of size " + std::to_string(is.len) + " in " + shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out(out_shape);
  const double* src = x.value().ptr();
  const std::int64_t chunk = length * is.inner;
  for (std::int64_t o = 0; o < is.outer; ++o)
    std::copy(src + o * is.len * is.inner + start * is.inner, src + o * is.len * is.inner + start * is.inner + chunk,
              out.ptr() + o * chunk);
  const int ix = x.id();
  return t.record("slice", std::move(out), {x}, [ix, is, start, chunk](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t o = 0; o < is.outer; ++o) {
      double* dst = gx + o * is.len * is.inner + start * is.inner;
      for (std::int64_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of("reshape", x);
  if (numel(shape) != x.value().size())
    shape_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out = x.value().reshaped(std::move(shape));
  const int ix = x.id();
  return t.record("reshape", std::move(out), {x}, [ix](Tape& tp, int self) {
    const auto g = tp.out_grad(self).data();
    auto gx = tp.accum(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var take(Var x, std::span<const std::int64_t> rows) {
  Tape& t = tape_of("take", x);
  const Shape& s = x.shape();
  if (rows.empty()) shape_error("take", "empty row selection");
  const std::int64_t n = s[0];
  const std::int64_t inner = x.value().size() / n;
  for (auto r : rows)
    if (r < 0 || r >= n) shape_error("take", "row " + std::to_string(r) + " outside " + shape_str(s));
  Shape out_shape = s;
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out(out_shape);
  const double* src = x.value().ptr();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(src + rows[i] * inner, src + (rows[i] + 1) * inner, out.ptr() + static_cast<std::int64_t>(i) * inner);
  const int ix = x.id();
  std::vector<std::int64_t> saved(rows.begin(), rows.end());
  return t.record("take", std::move(out), {x}, [ix, inner, saved = std::move(saved)](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::int64_t j = 0; j < inner; ++j) gx[saved[i] * inner + j] += g[static_cast<std::int64_t>(i) * inner + j];
  });
}

Var gather(Var x, std::vector<std::int64_t> index, Shape out_shape) {
  Tape& t = tape_of("gather", x);
  if (numel(out_shape) != static_cast<std::int64_t>(index.size()))
    shape_error("gather", "index length " + std::to_string(index.size()) + " does not match " + shape_str(out_shape));
  const std::int64_t n = x.value().size();
  Tensor out(out_shape);
  const double* src = x.value().ptr();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) shape_error("gather", "index outside " + shape_str(x.shape()));
    out[static_cast<std::int64_t>(i)] = src[index[i]];
  }
  const int ix = x.id();
  return t.record("gather", std::move(out), {x}, [ix, index = std::move(index)](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

Var sum(Var x) {
  Tape& t = tape_of("sum", x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int ix = x.id();
  return t.record("sum", Tensor::scalar(s), {x}, [ix](Tape& tp, int self) {
    const double g = tp.out_grad(self)[0];
    for (auto& v : tp.accum(ix).data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_axis(Var x, int axis) {
  Tape& t = tape_of("mean_axis", x);
  const Shape& s = x.shape();
  axis = normalize_axis("mean_axis", axis, static_cast<int>(s.size()));
  const AxisSplit is = split_axis(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const double* src = x.value().ptr();
  const double inv = 1.0 / static_cast<double>(is.len);
  for (std::int64_t o = 0; o < is.outer; ++o)
    for (std::int64_t l = 0; l < is.len; ++l)
      for (std::int64_t i = 0; i < is.inner; ++i) out[o * is.inner + i] += src[(o * is.len + l) * is.inner + i] * inv;
  const int ix = x.id();
  return t.record("mean_axis", std::move(out), {x}, [ix, is, inv](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t o = 0; o < is.outer; ++o)
      for (std::int64_t l = 0; l < is.len; ++l)
        for (std::int64_t i = 0; i < is.inner; ++i) gx[(o * is.len + l) * is.inner + i] += g[o * is.inner + i] * inv;
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  Tape& t = tape_of("cross_entropy", logits);
  const Shape& s = logits.shape();
  if (s.size() != 2) shape_error("cross_entropy", "logits must be [N, K], got " + shape_str(s));
  const std::int64_t rows = s[0], k = s[1];
  if (static_cast<std::int64_t>(targets.size()) != rows)
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for logits " + shape_str(s));
  if (!weights.empty() && static_cast<std::int64_t>(weights.size()) != rows)
    shape_error("cross_entropy", std::to_string(weights.size()) + " weights for logits " + shape_str(s));
  std::vector<double> w(static_cast<std::size_t>(rows), 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  double wsum = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (w[static_cast<std::size_t>(r)] < 0.0) fail(ErrorKind::invalid_argument, "cross_entropy: negative weight");
    if (w[static_cast<std::size_t>(r)] == 0.0) continue;
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k)
      fail(ErrorKind::invalid_argument, "cross_entropy: target " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    wsum += w[static_cast<std::size_t>(r)];
  }
  if (wsum <= 0.0) fail(ErrorKind::invalid_argument, "cross_entropy: all rows have zero weight");
  const double* x = logits.value().ptr();
  std::vector<double> probs(static_cast<std::size_t>(rows * k), 0.0);
  double loss = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (w[static_cast<std::size_t>(r)] == 0.0) continue;
    const double* xr = x + r * k;
    const double mx = *std::max_element(xr, xr + k);
    double se = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double e = std::exp(xr[j] - mx);
      probs[static_cast<std::size_t>(r * k + j)] = e;
      se += e;
    }
    for (std::int64_t j = 0; j < k; ++j) probs[static_cast<std::size_t>(r * k + j)] /= se;
    const double lse = mx + std::log(se);
    loss += w[static_cast<std::size_t>(r)] * (lse - xr[targets[static_cast<std::size_t>(r)]]);
  }
  loss /= wsum;
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record("cross_entropy", Tensor::scalar(loss), {logits},
                  [il, rows, k, wsum, w = std::move(w), tg = std::move(tg), probs = std::move(probs)](Tape& tp, int self) {
                    const double g = tp.out_grad(self)[0];
                    double* gx = tp.accum(il).ptr();
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const double wr = w[static_cast<std::size_t>(r)];
                      if (wr == 0.0) continue;
                      const double c = g * wr / wsum;
                      for (std::int64_t j = 0; j < k; ++j) gx[r * k + j] += c * probs[static_cast<std::size_t>(r * k + j)];
                      gx[r * k + tg[static_cast<std::size_t>(r)]] -= c;
                    }
                  });
}

Var cumprod_exclusive(Var x) {
  Tape& t = tape_of("cumprod_exclusive", x);
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.value().size() / n;
  Tensor out(x.shape());
  const double* xd = x.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    double p = 1.0;
    for (std::int64_t l = 0; l < n; ++l) {
      out[r * n + l] = p;
      p *= xd[r * n + l];
    }
  }
  const int ix = x.id();
  return t.record("cumprod_exclusive", std::move(out), {x}, [ix, n, rows](Tape& tp, int self) {
    // d y_l / d x_k = prod_{j < l, j != k} x_j for k < l; computed directly so
    // zero entries need no division.
    const double* g = tp.out_grad(self).ptr();
    const double* xd = tp.value(ix).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = xd + r * n;
      for (std::int64_t k = 0; k < n; ++k) {
        double acc = 0.0;
        double prefix = 1.0;  // product of x_j for j < k
        for (std::int64_t j = 0; j < k; ++j) prefix *= xr[j];
        double running = prefix;  // product over j < l excluding k
        for (std::int64_t l = k + 1; l < n; ++l) {
          acc += g[r * n + l] * running;
          running *= xr[l];
        }
        gx[r * n + k] += acc;
      }
    }
  });
}

Var l2_normalize(Var x, double eps) {
  Tape& t = tape_of("l2_normalize", x);
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.value().size() / n;
  Tensor out = x.value();
  std::vector<double> norms(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) s += out[r * n + j] * out[r * n + j];
    const double nr = std::sqrt(s + eps);
    norms[static_cast<std::size_t>(r)] = nr;
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] /= nr;
  }
  const int ix = x.id();
  return t.record("l2_normalize", std::move(out), {x}, [ix, n, rows, norms = std::move(norms)](Tape& tp, int self) {
    const double* g = tp.out_grad(self).ptr();
    const double* y = tp.value(self).ptr();
    double* gx = tp.accum(ix).ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      const double nr = norms[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / nr;
    }
  });
}

// ---------------------------------------------------------------------------
// Attention

AttentionResult attention(Var q, Var k, Var v, const AttentionOptions& opt) {
  Tape& t = tape_of("attention", q);
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  const Shape& sv = v.shape();
  if (sq.size() != 3 || sk.size() != 3 || sv != sk || sq[0] != sk[0] || sq[2] != sk[2])
    shape_error("attention", "incompatible q/k/v shapes " + shape_str(sq) + " " + shape_str(sk) + " " + shape_str(sv));
  const std::int64_t B = sq[0], Tq = sq[1], Tk = sk[1], D = sq[2];
  const int H = opt.heads;
  if (H <= 0 || D % H != 0) shape_error("attention", "width " + std::to_string(D) + " not divisible by heads");
  const std::int64_t dh = D / H;
  const bool weighted = opt.key_weights.valid();
  if (weighted && opt.key_weights.shape() != Shape{B, Tk})
    shape_error("attention", "key weights " + shape_str(opt.key_weights.shape()) + " expected [" + std::to_string(B) +
                                 "," + std::to_string(Tk) + "]");
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qd = q.value().ptr();
  const double* kd = k.value().ptr();
  const double* vd = v.value().ptr();
  const double* ad = weighted ? opt.key_weights.value().ptr() : nullptr;
  for (std::int64_t i = 0; ad && i < B * Tk; ++i)
    if (ad[i] < 0.0) fail(ErrorKind::invalid_argument, "attention: negative key weight");

  // u = exp(s - m) / Z (unweighted share), w = a * u.
  Tensor weights(Shape{B, H, Tq, Tk});
  std::vector<double> unweighted(static_cast<std::size_t>(B * H * Tq * Tk), 0.0);
  Tensor out(Shape{B, Tq, D});
  std::vector<double> scores(static_cast<std::size_t>(Tk));
  for (std::int64_t b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (std::int64_t i = 0; i < Tq; ++i) {
        const std::int64_t allowed = opt.causal ? std::min<std::int64_t>(Tk, opt.query_offset + i + 1) : Tk;
        const double* qi = qd + (b * Tq + i) * D + h * dh;
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < allowed; ++j) {
          const double* kj = kd + (b * Tk + j) * D + h * dh;
          double s = 0.0;
          for (std::int64_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scl;
          scores[static_cast<std::size_t>(j)] = s;
          const double aj = ad ? ad[b * Tk + j] : 1.0;
          if (aj > 0.0) m = std::max(m, s + std::log(aj));
        }
        if (!std::isfinite(m)) fail(ErrorKind::numeric, "attention: a query has no visible key");
        double z = 0.0;
        const std::int64_t base = ((b * H + h) * Tq + i) * Tk;
        for (std::int64_t j = 0; j < allowed; ++j) {
          const double e = std::exp(scores[static_cast<std::size_t>(j)] - m);
          unweighted[static_cast<std::size_t>(base + j)] = e;
          z += (ad ? ad[b * Tk + j] : 1.0) * e;
        }
        double* oi = out.ptr() + (b * Tq + i) * D + h * dh;
        for (std::int64_t j = 0; j < allowed; ++j) {
          auto& u = unweighted[static_cast<std::size_t>(base + j)];
          u /= z;
          const double w = (ad ? ad[b * Tk + j] : 1.0) * u;
          weights[base + j] = w;
          if (w == 0.0) continue;
          const double* vj = vd + (b * Tk + j) * D + h * dh;
          for (std::int64_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
        }
      }

  const int iq = q.id(), ik = k.id(), iv = v.id();
  const int ia = weighted ? opt.key_weights.id() : -1;
  std::vector<Var> parents{q, k, v};
  if (weighted) parents.push_back(opt.key_weights);
  Tensor saved_w = weights;
  Var result = t.record(
      "attention", std::move(out), parents,
      [iq, ik, iv, ia, B, Tq, Tk, D, H, dh, scl, w = std::move(saved_w), u = std::move(unweighted)](Tape& tp, int self) {
        const double* g = tp.out_grad(self).ptr();
        const double* qd = tp.value(iq).ptr();
        const double* kd = tp.value(ik).ptr();
        const double* vd = tp.value(iv).ptr();
        double* gq = tp.requires_grad(iq) ? tp.accum(iq).ptr() : nullptr;
        double* gk = tp.requires_grad(ik) ? tp.accum(ik).ptr() : nullptr;
        double* gv = tp.requires_grad(iv) ? tp.accum(iv).ptr() : nullptr;
        double* ga = (ia >= 0 && tp.requires_grad(ia)) ? tp.accum(ia).ptr() : nullptr;
        std::vector<double> gw(static_cast<std::size_t>(Tk));
        for (std::int64_t b = 0; b < B; ++b)
          for (int h = 0; h < H; ++h)
            for (std::int64_t i = 0; i < Tq; ++i) {
              const std::int64_t base = ((b * H + h) * Tq + i) * Tk;
              const double* gi = g + (b * Tq + i) * D + h * dh;
              double dot = 0.0;
              for (std::int64_t j = 0; j < Tk; ++j) {
                const double* vj = vd + (b * Tk + j) * D + h * dh;
                double s = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                gw[static_cast<std::size_t>(j)] = s;
                const double wij = w[base + j];
                dot += s * wij;
                if (gv && wij != 0.0) {
                  double* gvj = gv + (b * Tk + j) * D + h * dh;
                  for (std::int64_t c = 0; c < dh; ++c) gvj[c] += wij * gi[c];
                }
              }
              const double* qi = qd + (b * Tq + i) * D + h * dh;
              for (std::int64_t j = 0; j < Tk; ++j) {
                const double diff = gw[static_cast<std::size_t>(j)] - dot;
                if (ga) ga[b * Tk + j] += u[static_cast<std::size_t>(base + j)] * diff;
                const double gs = w[base + j] * diff * scl;
                if (gs == 0.0) continue;
                const double* kj = kd + (b * Tk + j) * D + h * dh;
                if (gq) {
                  double* gqi = gq + (b * Tq + i) * D + h * dh;
                  for (std::int64_t c = 0; c < dh; ++c) gqi[c] += gs * kj[c];
                }
                if (gk) {
                  double* gkj = gk + (b * Tk + j) * D + h * dh;
                  for (std::int64_t c = 0; c < dh; ++c) gkj[c] += gs * qi[c];
                }
              }
            }
      });
  return AttentionResult{result, std::move(weights)};
}

}  // namespace xbm::ad
