#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "lgd/autodiff.hpp"
#include "lgd/fft.hpp"
#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

// Seeded hash/sign tables for the tensor-sketch projection. Tables are fixed
// at creation and travel with checkpoints so inference is reproducible.
struct SketchConfig {
  Index input_dim = 0;
  Index sketch_dim = 0;
  std::vector<Index> h1, h2;        // [C] -> [d]
  std::vector<std::int8_t> s1, s2;  // [C] -> {-1,+1}
  std::uint64_t seed = 0;

  static SketchConfig create(Index input_dim, Index sketch_dim, std::uint64_t seed) {
    require(input_dim >= 1, "sketch input_dim must be >= 1");
    require(sketch_dim >= 2, "sketch_dim must be >= 2, got " + std::to_string(sketch_dim));
    require(is_pow2(sketch_dim),
            "sketch_dim must be a power of two (FFT restriction), got " + std::to_string(sketch_dim));
    SketchConfig cfg;
    cfg.input_dim = input_dim;
    cfg.sketch_dim = sketch_dim;
    cfg.seed = seed;
    Rng rng = Rng(seed).derive("sketch_tables");
    cfg.h1.resize(static_cast<std::size_t>(input_dim));
    cfg.h2.resize(static_cast<std::size_t>(input_dim));
    cfg.s1.resize(static_cast<std::size_t>(input_dim));
    cfg.s2.resize(static_cast<std::size_t>(input_dim));
    for (Index i = 0; i < input_dim; ++i) {
      cfg.h1[static_cast<std::size_t>(i)] = rng.uniform_int(sketch_dim);
      cfg.h2[static_cast<std::size_t>(i)] = rng.uniform_int(sketch_dim);
      cfg.s1[static_cast<std::size_t>(i)] = rng.coin() ? 1 : -1;
      cfg.s2[static_cast<std::size_t>(i)] = rng.coin() ? 1 : -1;
    }
    return cfg;
  }

  void validate() const {
    require(input_dim >= 1 && sketch_dim >= 2 && is_pow2(sketch_dim), "invalid sketch config");
    require(static_cast<Index>(h1.size()) == input_dim && static_cast<Index>(h2.size()) == input_dim &&
                static_cast<Index>(s1.size()) == input_dim && static_cast<Index>(s2.size()) == input_dim,
            "sketch table sizes do not match input_dim");
    for (Index i = 0; i < input_dim; ++i) {
      require(h1[static_cast<std::size_t>(i)] >= 0 && h1[static_cast<std::size_t>(i)] < sketch_dim &&
                  h2[static_cast<std::size_t>(i)] >= 0 && h2[static_cast<std::size_t>(i)] < sketch_dim,
              "sketch hash table entry out of range");
      require(s1[static_cast<std::size_t>(i)] == 1 || s1[static_cast<std::size_t>(i)] == -1, "bad sign table");
      require(s2[static_cast<std::size_t>(i)] == 1 || s2[static_cast<std::size_t>(i)] == -1, "bad sign table");
    }
  }

  bool operator==(const SketchConfig& o) const {
    return input_dim == o.input_dim && sketch_dim == o.sketch_dim && h1 == o.h1 && h2 == o.h2 &&
           s1 == o.s1 && s2 == o.s2 && seed == o.seed;
  }
};

// out[k] = sum_{i: h(i)=k} s(i) * x[i]
template <typename T>
std::vector<T> count_sketch(const std::vector<T>& x, const std::vector<Index>& h,
                            const std::vector<std::int8_t>& s, Index d) {
  require(h.size() == x.size() && s.size() == x.size(),
          "count_sketch table domain mismatch: x has " + std::to_string(x.size()) + " entries, tables " +
              std::to_string(h.size()));
  std::vector<T> out(static_cast<std::size_t>(d), T(0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(h[i] >= 0 && h[i] < d, "count_sketch hash entry out of range");
    out[static_cast<std::size_t>(h[i])] += static_cast<T>(s[i]) * x[i];
  }
  return out;
}

namespace detail {

// Scratch buffers shared across the per-location lanes of one op call.
template <typename T>
struct FftScratch {
  std::vector<std::complex<T>> a, b;
  void resize(Index d) {
    a.assign(static_cast<std::size_t>(d), std::complex<T>());
    b.assign(static_cast<std::size_t>(d), std::complex<T>());
  }
};

template <typename T>
void circ_conv_lane(const T* a, const T* b, T* out, Index d, T imag_tol, FftScratch<T>& s) {
  for (Index k = 0; k < d; ++k) {
    s.a[static_cast<std::size_t>(k)] = std::complex<T>(a[k], T(0));
    s.b[static_cast<std::size_t>(k)] = std::complex<T>(b[k], T(0));
  }
  fft_inplace(s.a, false);
  fft_inplace(s.b, false);
  for (Index k = 0; k < d; ++k) {
    const std::complex<T>&za = s.a[static_cast<std::size_t>(k)], &zb = s.b[static_cast<std::size_t>(k)];
    s.a[static_cast<std::size_t>(k)] = std::complex<T>(za.real() * zb.real() - za.imag() * zb.imag(),
                                                       za.real() * zb.imag() + za.imag() * zb.real());
  }
  fft_inplace(s.a, true);
  for (Index k = 0; k < d; ++k) {
    const std::complex<T>& z = s.a[static_cast<std::size_t>(k)];
    if (!(std::abs(z.imag()) <= imag_tol))
      throw std::runtime_error("tensor sketch: imaginary residue " + std::to_string(std::abs(z.imag())) +
                               " exceeds tolerance");
    if (!std::isfinite(z.real())) throw std::runtime_error("tensor sketch: non-finite value encountered");
    out[k] = z.real();
  }
}

// dL/da of c = a (*) b is the circular correlation of g with b.
template <typename T>
void circ_corr_lane(const T* g, const T* b, T* out, Index d, FftScratch<T>& s) {
  for (Index k = 0; k < d; ++k) {
    s.a[static_cast<std::size_t>(k)] = std::complex<T>(g[k], T(0));
    s.b[static_cast<std::size_t>(k)] = std::complex<T>(b[k], T(0));
  }
  fft_inplace(s.a, false);
  fft_inplace(s.b, false);
  for (Index k = 0; k < d; ++k) {
    const std::complex<T>&za = s.a[static_cast<std::size_t>(k)], &zb = s.b[static_cast<std::size_t>(k)];
    s.a[static_cast<std::size_t>(k)] = std::complex<T>(za.real() * zb.real() + za.imag() * zb.imag(),
                                                       za.imag() * zb.real() - za.real() * zb.imag());
  }
  fft_inplace(s.a, true);
  for (Index k = 0; k < d; ++k) out[k] = s.a[static_cast<std::size_t>(k)].real();
}

template <typename T>
constexpr T imag_tolerance() {
  return std::is_same_v<T, double> ? T(1e-9) : T(1e-3);
}

}  // namespace detail

// phi(x) = IFFT( FFT(cs1(x)) . FFT(cs2(x)) ), real part.
template <typename T>
std::vector<T> tensor_sketch(const std::vector<T>& x, const SketchConfig& cfg) {
  require(static_cast<Index>(x.size()) == cfg.input_dim, "tensor_sketch input dim mismatch");
  std::vector<T> c1 = count_sketch(x, cfg.h1, cfg.s1, cfg.sketch_dim);
  std::vector<T> c2 = count_sketch(x, cfg.h2, cfg.s2, cfg.sketch_dim);
  std::vector<T> out(static_cast<std::size_t>(cfg.sketch_dim));
  detail::FftScratch<T> scratch;
  scratch.resize(cfg.sketch_dim);
  detail::circ_conv_lane(c1.data(), c2.data(), out.data(), cfg.sketch_dim, detail::imag_tolerance<T>(),
                         scratch);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable sketch ops (hash/sign tables are constants).
// ---------------------------------------------------------------------------

// x [B,C] -> [B,d]
template <typename T>
Var op_count_sketch_vec(Tape<T>& tp, Var x, const std::vector<Index>& h, const std::vector<std::int8_t>& s,
                        Index d) {
  const Tensor<T>& xv = tp.val(x);
  require(xv.rank() == 2, "count_sketch_vec expects [B,C]");
  const Index B = xv.shape()[0], C = xv.shape()[1];
  require(static_cast<Index>(h.size()) == C && static_cast<Index>(s.size()) == C,
          "count_sketch_vec table domain mismatch");
  Tensor<T> y(Shape{B, d});
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < C; ++i)
      y.at2(b, h[static_cast<std::size_t>(i)]) +=
          static_cast<T>(s[static_cast<std::size_t>(i)]) * xv.at2(b, i);
  return tp.make(std::move(y), {x.id}, [x, h, s, B, C](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    Tensor<T>& dx = t.grad_buf(x.id);
    for (Index b = 0; b < B; ++b)
      for (Index i = 0; i < C; ++i)
        dx.at2(b, i) += static_cast<T>(s[static_cast<std::size_t>(i)]) *
                        g.at2(b, h[static_cast<std::size_t>(i)]);
  });
}

// x [B,C,T,H,W] -> [B,d,T,H,W], sketching the channel vector at every location
template <typename T>
Var op_count_sketch_map(Tape<T>& tp, Var x, const std::vector<Index>& h, const std::vector<std::int8_t>& s,
                        Index d) {
  const Tensor<T>& xv = tp.val(x);
  require(xv.rank() == 5, "count_sketch_map expects [B,C,T,H,W]");
  const Index B = xv.shape()[0], C = xv.shape()[1], N = xv.shape()[2] * xv.shape()[3] * xv.shape()[4];
  require(static_cast<Index>(h.size()) == C && static_cast<Index>(s.size()) == C,
          "count_sketch_map table domain mismatch");
  Tensor<T> y(Shape{B, d, xv.shape()[2], xv.shape()[3], xv.shape()[4]});
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < C; ++i) {
      const T* src = xv.data() + (b * C + i) * N;
      T* dst = y.data() + (b * d + h[static_cast<std::size_t>(i)]) * N;
      const T sg = static_cast<T>(s[static_cast<std::size_t>(i)]);
      for (Index l = 0; l < N; ++l) dst[l] += sg * src[l];
    }
  return tp.make(std::move(y), {x.id}, [x, h, s, B, C, N, d](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    Tensor<T>& dx = t.grad_buf(x.id);
    for (Index b = 0; b < B; ++b)
      for (Index i = 0; i < C; ++i) {
        T* dst = dx.data() + (b * C + i) * N;
        const T* src = g.data() + (b * d + h[static_cast<std::size_t>(i)]) * N;
        const T sg = static_cast<T>(s[static_cast<std::size_t>(i)]);
        for (Index l = 0; l < N; ++l) dst[l] += sg * src[l];
      }
  });
}

// Circular convolution along the channel axis; operands must both be [B,d] or
// both [B,d,T,H,W] (per-location lanes).
template <typename T>
Var op_circular_conv(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  require(av.same_shape(bv), "circular_conv operand shape mismatch");
  require(av.rank() == 2 || av.rank() == 5, "circular_conv expects rank-2 or rank-5 operands");
  const Index B = av.shape()[0], d = av.shape()[1];
  require(is_pow2(d), "circular_conv lane length must be a power of two");
  const Index N = av.rank() == 5 ? av.shape()[2] * av.shape()[3] * av.shape()[4] : 1;
  const T tol = detail::imag_tolerance<T>();

  Tensor<T> y(av.shape());
  std::vector<T> la(static_cast<std::size_t>(d)), lb(static_cast<std::size_t>(d)), lo(static_cast<std::size_t>(d));
  detail::FftScratch<T> scratch;
  scratch.resize(d);
  auto gather = [d, N](const Tensor<T>& src, Index base, Index l, T* out) {
    for (Index k = 0; k < d; ++k) out[k] = src[base + k * N + l];
  };
  auto scatter_add = [d, N](Tensor<T>& dst, Index base, Index l, const T* in) {
    for (Index k = 0; k < d; ++k) dst[base + k * N + l] += in[k];
  };
  for (Index bi = 0; bi < B; ++bi) {
    const Index base = bi * d * N;
    for (Index l = 0; l < N; ++l) {
      gather(av, base, l, la.data());
      gather(bv, base, l, lb.data());
      detail::circ_conv_lane(la.data(), lb.data(), lo.data(), d, tol, scratch);
      for (Index k = 0; k < d; ++k) y[base + k * N + l] = lo[static_cast<std::size_t>(k)];
    }
  }
  return tp.make(std::move(y), {a.id, b.id}, [a, b, B, d, N, gather, scatter_add](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& av_ = t.val(a);
    const Tensor<T>& bv_ = t.val(b);
    std::vector<T> lg(static_cast<std::size_t>(d)), lo(static_cast<std::size_t>(d)),
        lx(static_cast<std::size_t>(d));
    detail::FftScratch<T> scratch;
    scratch.resize(d);
    for (Index bi = 0; bi < B; ++bi) {
      const Index base = bi * d * N;
      for (Index l = 0; l < N; ++l) {
        gather(g, base, l, lg.data());
        if (t.wants_grad(a.id)) {
          gather(bv_, base, l, lx.data());
          detail::circ_corr_lane(lg.data(), lx.data(), lo.data(), d, scratch);
          scatter_add(t.grad_buf(a.id), base, l, lo.data());
        }
        if (t.wants_grad(b.id)) {
          gather(av_, base, l, lx.data());
          detail::circ_corr_lane(lg.data(), lx.data(), lo.data(), d, scratch);
          scatter_add(t.grad_buf(b.id), base, l, lo.data());
        }
      }
    }
  });
}

// phi applied to a [B,C] vector batch -> [B,d]
template <typename T>
Var op_tensor_sketch_vec(Tape<T>& tp, Var x, const SketchConfig& cfg) {
  Var c1 = op_count_sketch_vec(tp, x, cfg.h1, cfg.s1, cfg.sketch_dim);
  Var c2 = op_count_sketch_vec(tp, x, cfg.h2, cfg.s2, cfg.sketch_dim);
  return op_circular_conv(tp, c1, c2);
}

// phi applied at every location of a [B,C,T,H,W] map -> [B,d,T,H,W]
template <typename T>
Var op_tensor_sketch_map(Tape<T>& tp, Var x, const SketchConfig& cfg) {
  Var c1 = op_count_sketch_map(tp, x, cfg.h1, cfg.s1, cfg.sketch_dim);
  Var c2 = op_count_sketch_map(tp, x, cfg.h2, cfg.s2, cfg.sketch_dim);
  return op_circular_conv(tp, c1, c2);
}

// sign(x) * sqrt(|x|), optional post-processing for bilinear-style features
template <typename T>
Var op_signed_sqrt(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> y = xv;
  for (Index i = 0; i < y.size(); ++i) {
    const T a = std::sqrt(std::abs(y[i]));
    y[i] = y[i] < T(0) ? -a : a;
  }
  return tp.make(std::move(y), {x.id}, [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& xv_ = t.val(x);
    Tensor<T>& dx = t.grad_buf(x.id);
    for (Index i = 0; i < dx.size(); ++i)
      dx[i] += g[i] * T(0.5) / std::sqrt(std::max(std::abs(xv_[i]), T(1e-12)));
  });
}

// rows scaled to unit L2 norm (plus a small epsilon)
template <typename T>
Var op_l2_normalize_rows(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  require(xv.rank() == 2, "l2_normalize expects rank-2 input");
  const Index B = xv.shape()[0], K = xv.shape()[1];
  Tensor<T> y(xv.shape());
  std::vector<T> norms(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    T n2 = T(0);
    for (Index k = 0; k < K; ++k) n2 += xv.at2(b, k) * xv.at2(b, k);
    const T n = std::sqrt(n2 + T(1e-12));
    norms[static_cast<std::size_t>(b)] = n;
    for (Index k = 0; k < K; ++k) y.at2(b, k) = xv.at2(b, k) / n;
  }
  return tp.make(std::move(y), {x.id}, [x, norms, B, K](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& xv_ = t.val(x);
    Tensor<T>& dx = t.grad_buf(x.id);
    for (Index b = 0; b < B; ++b) {
      const T n = norms[static_cast<std::size_t>(b)];
      T gx = T(0);
      for (Index k = 0; k < K; ++k) gx += g.at2(b, k) * xv_.at2(b, k);
      for (Index k = 0; k < K; ++k)
        dx.at2(b, k) += g.at2(b, k) / n - xv_.at2(b, k) * gx / (n * n * n);
    }
  });
}

// [ mean over locations of phi(x^i), phi(g) ]  -> [B, 2d]
template <typename T>
Var op_combined_feature(Tape<T>& tp, Var x, Var g, const SketchConfig& cfg) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& gv = tp.val(g);
  require(xv.rank() == 5 && gv.rank() == 2, "combined_feature expects map [B,C,T,H,W] and vector [B,C]");
  require(xv.shape()[1] == cfg.input_dim && gv.shape()[1] == cfg.input_dim,
          "combined_feature channel count " + std::to_string(xv.shape()[1]) +
              " does not match sketch input_dim " + std::to_string(cfg.input_dim));
  Var local = op_global_avg_pool(tp, op_tensor_sketch_map(tp, x, cfg));
  Var global = op_tensor_sketch_vec(tp, g, cfg);
  return op_concat_cols(tp, local, global);
}

}  // namespace lgd
