#include "cali/numkit/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cali/errors.hpp"

namespace cali::nk {

namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ContractError("unbound variable");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return graph_of(a);
}

// Elementwise binary op with single-element broadcasting on either side.
// `fwd(x, y)` gives the value; `dfa`/`dfb` give partial derivatives.
template <class Fwd, class Da, class Db>
Var binary(Var a, Var b, const char* name, Fwd fwd, Da dfa, Db dfb) {
  Graph& g = graph_of(a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  const bool a_scalar = ta.size() == 1 && tb.size() != 1;
  const bool b_scalar = tb.size() == 1 && ta.size() != 1;
  if (!a_scalar && !b_scalar && ta.shape() != tb.shape())
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_string(ta.shape()) + " vs " +
                     shape_string(tb.shape()));
  const Tensor& big = a_scalar ? tb : ta;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = fwd(ta[a_scalar ? 0 : i], tb[b_scalar ? 0 : i]);
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [=](Graph& gr, std::size_t self) {
                    const Tensor& va = gr.value(ia);
                    const Tensor& vb = gr.value(ib);
                    const auto& gy = gr.grad_buffer(self);
                    if (gr.requires_grad(ia)) {
                      auto& ga = gr.grad_buffer(ia);
                      for (std::size_t i = 0; i < n; ++i) {
                        const double x = va[a_scalar ? 0 : i], y = vb[b_scalar ? 0 : i];
                        ga[a_scalar ? 0 : i] += gy[i] * dfa(x, y);
                      }
                    }
                    if (gr.requires_grad(ib)) {
                      auto& gb = gr.grad_buffer(ib);
                      for (std::size_t i = 0; i < n; ++i) {
                        const double x = va[a_scalar ? 0 : i], y = vb[b_scalar ? 0 : i];
                        gb[b_scalar ? 0 : i] += gy[i] * dfb(x, y);
                      }
                    }
                  });
}

// Elementwise unary op; `df(x, y)` is the derivative given input x and output y.
template <class Fwd, class Df>
Var unary(Var a, Fwd fwd, Df df) {
  Graph& g = graph_of(a);
  const Tensor& ta = a.value();
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = fwd(ta[i]);
  const std::size_t ia = a.id;
  return g.record(std::move(out), {ia}, [=](Graph& gr, std::size_t self) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * df(x[i], y[i]);
  });
}

struct ConvGeom {
  long C, H, W, O, KH, KW, OH, OW, s, p;

  // Output columns ox for which the input column ox*s + v - p lies inside [0, W).
  std::pair<long, long> col_range(long v) const {
    long lo = 0;
    if (p - v > 0) lo = (p - v + s - 1) / s;
    const long last = W - 1 + p - v;
    long hi = last < 0 ? -1 : std::min(OW - 1, last / s);
    return {lo, hi};
  }
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, Conv2dOptions opts) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be C x H x W, got " + shape_string(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: kernel must be O x C x kh x kw, got " + shape_string(w.shape()));
  if (w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: channel mismatch, input " + shape_string(x.shape()) + " kernel " +
                     shape_string(w.shape()));
  if (opts.stride == 0) throw ContractError("conv2d: stride must be positive");
  ConvGeom g{};
  g.C = static_cast<long>(x.dim(0));
  g.H = static_cast<long>(x.dim(1));
  g.W = static_cast<long>(x.dim(2));
  g.O = static_cast<long>(w.dim(0));
  g.KH = static_cast<long>(w.dim(2));
  g.KW = static_cast<long>(w.dim(3));
  g.s = static_cast<long>(opts.stride);
  g.p = static_cast<long>(opts.padding);
  const long eh = g.H + 2 * g.p - g.KH, ew = g.W + 2 * g.p - g.KW;
  if (eh < 0 || ew < 0) throw ShapeError("conv2d: kernel larger than padded input");
  g.OH = eh / g.s + 1;
  g.OW = ew / g.s + 1;
  return g;
}

// Column matrix [C*kh*kw x OH*OW]; out-of-image taps are zero.
void im2col(const ConvGeom& g, const double* x, double* col) {
  const long P = g.OH * g.OW;
  for (long c = 0; c < g.C; ++c) {
    const double* xc = x + c * g.H * g.W;
    for (long u = 0; u < g.KH; ++u) {
      for (long v = 0; v < g.KW; ++v) {
        double* row = col + ((c * g.KH + u) * g.KW + v) * P;
        const auto [lo, hi] = g.col_range(v);
        for (long oy = 0; oy < g.OH; ++oy) {
          double* dst = row + oy * g.OW;
          const long iy = oy * g.s + u - g.p;
          if (iy < 0 || iy >= g.H) {
            std::fill(dst, dst + g.OW, 0.0);
            continue;
          }
          const double* src = xc + iy * g.W + (v - g.p);
          for (long ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
          if (g.s == 1) {
            for (long ox = lo; ox <= hi; ++ox) dst[ox] = src[ox];
          } else {
            for (long ox = lo; ox <= hi; ++ox) dst[ox] = src[ox * g.s];
          }
          for (long ox = std::max(lo, hi + 1); ox < g.OW; ++ox) dst[ox] = 0.0;
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* gx) {
  const long P = g.OH * g.OW;
  for (long c = 0; c < g.C; ++c) {
    double* gxc = gx + c * g.H * g.W;
    for (long u = 0; u < g.KH; ++u) {
      for (long v = 0; v < g.KW; ++v) {
        const double* row = col + ((c * g.KH + u) * g.KW + v) * P;
        const auto [lo, hi] = g.col_range(v);
        for (long oy = 0; oy < g.OH; ++oy) {
          const long iy = oy * g.s + u - g.p;
          if (iy < 0 || iy >= g.H) continue;
          const double* src = row + oy * g.OW;
          double* dst = gxc + iy * g.W + (v - g.p);
          if (g.s == 1) {
            for (long ox = lo; ox <= hi; ++ox) dst[ox] += src[ox];
          } else {
            for (long ox = lo; ox <= hi; ++ox) dst[ox * g.s] += src[ox];
          }
        }
      }
    }
  }
}

void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y) {
  const long P = g.OH * g.OW, K = g.C * g.KH * g.KW;
  std::vector<double> col(static_cast<std::size_t>(K * P));
  im2col(g, x, col.data());
  for (long o = 0; o < g.O; ++o) {
    double* yo = y + o * P;
    std::fill(yo, yo + P, b ? b[o] : 0.0);
    const double* wo = w + o * K;
    for (long k = 0; k < K; ++k) {
      const double wv = wo[k];
      const double* ck = col.data() + k * P;
      for (long p = 0; p < P; ++p) yo[p] += wv * ck[p];
    }
  }
}

void conv_backward(const ConvGeom& g, const double* x, const double* w, const double* gy, double* gx,
                   double* gw, double* gb) {
  const long P = g.OH * g.OW, K = g.C * g.KH * g.KW;
  if (gb) {
    for (long o = 0; o < g.O; ++o) {
      double acc = 0.0;
      for (long p = 0; p < P; ++p) acc += gy[o * P + p];
      gb[o] += acc;
    }
  }
  if (gw) {
    std::vector<double> col(static_cast<std::size_t>(K * P));
    im2col(g, x, col.data());
    for (long o = 0; o < g.O; ++o) {
      const double* go = gy + o * P;
      for (long k = 0; k < K; ++k) {
        const double* ck = col.data() + k * P;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        long p = 0;
        for (; p + 4 <= P; p += 4) {
          a0 += go[p] * ck[p];
          a1 += go[p + 1] * ck[p + 1];
          a2 += go[p + 2] * ck[p + 2];
          a3 += go[p + 3] * ck[p + 3];
        }
        for (; p < P; ++p) a0 += go[p] * ck[p];
        gw[o * K + k] += (a0 + a1) + (a2 + a3);
      }
    }
  }
  if (gx) {
    std::vector<double> dcol(static_cast<std::size_t>(K * P), 0.0);
    for (long o = 0; o < g.O; ++o) {
      const double* go = gy + o * P;
      const double* wo = w + o * K;
      for (long k = 0; k < K; ++k) {
        const double wv = wo[k];
        double* dk = dcol.data() + k * P;
        for (long p = 0; p < P; ++p) dk[p] += wv * go[p];
      }
    }
    col2im_add(g, dcol.data(), gx);
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return out;
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::size_t self) {
    const Tensor& va = gr.value(ia);
    const Tensor& vb = gr.value(ib);
    const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    const auto& gy = gr.grad_buffer(self);
    if (gr.requires_grad(ia)) {
      auto& ga = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gy[i * n + j] * vb[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (gr.requires_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = va[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * gy[i * n + j];
        }
    }
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id;
  return g.record(Tensor::scalar(acc), {ia}, [ia](Graph& gr, std::size_t self) {
    const double gy = gr.grad_buffer(self)[0];
    for (double& v : gr.grad_buffer(ia)) v += gy;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  static constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
  return unary(
      a,
      [](double x) {
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return std::clamp(s, lo, hi);
      },
      [](double x, double) {
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return s * (1.0 - s);
      });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, Conv2dOptions opts) {
  const ConvGeom geo = conv_geom(x, w, opts);
  if (b && b->size() != static_cast<std::size_t>(geo.O))
    throw ShapeError("conv2d: bias length must equal output channels");
  Tensor y({static_cast<std::size_t>(geo.O), static_cast<std::size_t>(geo.OH),
            static_cast<std::size_t>(geo.OW)});
  conv_forward(geo, x.data(), w.data(), b ? b->data() : nullptr, y.data());
  return y;
}

namespace {
Var conv2d_impl(Var x, Var w, const Var* b, Conv2dOptions opts) {
  Graph& g = graph_of(x, w);
  if (b && b->graph != &g) throw ContractError("operands belong to different graphs");
  Tensor y = conv2d(x.value(), w.value(), b ? &b->value() : nullptr, opts);
  const ConvGeom geo = conv_geom(x.value(), w.value(), opts);
  const std::size_t ix = x.id, iw = w.id;
  const bool has_b = b != nullptr;
  const std::size_t ib = has_b ? b->id : 0;
  std::vector<std::size_t> parents{ix, iw};
  if (has_b) parents.push_back(ib);
  return g.record(std::move(y), std::move(parents), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.grad_buffer(self);
    double* gx = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
    double* gw = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
    double* gb = has_b && gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
    conv_backward(geo, gr.value(ix).data(), gr.value(iw).data(), gy.data(), gx, gw, gb);
  });
}
}  // namespace

Var conv2d(Var x, Var w, Conv2dOptions opts) { return conv2d_impl(x, w, nullptr, opts); }
Var conv2d(Var x, Var w, Var b, Conv2dOptions opts) { return conv2d_impl(x, w, &b, opts); }

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("softmax_channels: expected K x H x W, got " + shape_string(logits.shape()));
  const std::size_t k = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < hw; ++i) {
    double mx = logits[i];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits[c * hw + i]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e = std::exp(logits[c * hw + i] - mx);
      out[c * hw + i] = e;
      z += e;
    }
    for (std::size_t c = 0; c < k; ++c) out[c * hw + i] /= z;
  }
  return out;
}

Var softmax_channels(Var logits) {
  Graph& g = graph_of(logits);
  Tensor out = softmax_channels(logits.value());
  const std::size_t il = logits.id;
  return g.record(std::move(out), {il}, [il](Graph& gr, std::size_t self) {
    const Tensor& p = gr.value(self);
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(il);
    const std::size_t k = p.dim(0), hw = p.dim(1) * p.dim(2);
    for (std::size_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += gy[c * hw + i] * p[c * hw + i];
      for (std::size_t c = 0; c < k; ++c) gx[c * hw + i] += p[c * hw + i] * (gy[c * hw + i] - dot);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return g.record(std::move(out), {ia}, [ia](Graph& gr, std::size_t self) {
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: no operands");
  Graph& g = graph_of(parts.front());
  std::vector<double> vals;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.graph != &g) throw ContractError("operands belong to different graphs");
    const auto v = p.value().values();
    vals.insert(vals.end(), v.begin(), v.end());
    ids.push_back(p.id);
  }
  const std::size_t n = vals.size();
  return g.record(Tensor({n}, std::move(vals)), ids, [ids](Graph& gr, std::size_t self) {
    const auto& gy = gr.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t len = gr.value(id).size();
      if (gr.requires_grad(id)) {
        auto& gx = gr.grad_buffer(id);
        for (std::size_t i = 0; i < len; ++i) gx[i] += gy[off + i];
      }
      off += len;
    }
  });
}

}  // namespace cali::nk
