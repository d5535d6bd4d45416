#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (plain nested loops, sequential sums) and share no code
// with the kernels they check.

#include <complex>
#include <vector>

#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace oracle {

using lgd::ConvSpec;
using lgd::Index;
using lgd::Rng;
using lgd::Shape;
using lgd::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor<double> conv_naive(const Tensor<double>& x, const Tensor<double>& w, const ConvSpec& spec) {
  const Index B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3], Wi = x.shape()[4];
  const Index Co = spec.out_channels;
  const Index To = (Ti + 2 * spec.pad[0] - spec.kernel[0]) / spec.stride[0] + 1;
  const Index Ho = (Hi + 2 * spec.pad[1] - spec.kernel[1]) / spec.stride[1] + 1;
  const Index Wo = (Wi + 2 * spec.pad[2] - spec.kernel[2]) / spec.stride[2] + 1;
  Tensor<double> y(Shape{B, Co, To, Ho, Wo});
  for (Index b = 0; b < B; ++b)
    for (Index co = 0; co < Co; ++co)
      for (Index to = 0; to < To; ++to)
        for (Index ho = 0; ho < Ho; ++ho)
          for (Index wo = 0; wo < Wo; ++wo) {
            double acc = 0;
            for (Index ci = 0; ci < Ci; ++ci)
              for (Index kt = 0; kt < spec.kernel[0]; ++kt)
                for (Index kh = 0; kh < spec.kernel[1]; ++kh)
                  for (Index kw = 0; kw < spec.kernel[2]; ++kw) {
                    const Index ti = to * spec.stride[0] - spec.pad[0] + kt;
                    const Index hi = ho * spec.stride[1] - spec.pad[1] + kh;
                    const Index wi = wo * spec.stride[2] - spec.pad[2] + kw;
                    if (ti < 0 || ti >= Ti || hi < 0 || hi >= Hi || wi < 0 || wi >= Wi) continue;
                    acc += x.at5(b, ci, ti, hi, wi) *
                           w[(((co * Ci + ci) * spec.kernel[0] + kt) * spec.kernel[1] + kh) * spec.kernel[2] + kw];
                  }
            y.at5(b, co, to, ho, wo) = acc;
          }
  return y;
}

inline Tensor<double> max_pool_naive(const Tensor<double>& x, std::array<Index, 3> e, std::array<Index, 3> s) {
  const Index B = x.shape()[0], C = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3], Wi = x.shape()[4];
  const Index To = (Ti - e[0]) / s[0] + 1, Ho = (Hi - e[1]) / s[1] + 1, Wo = (Wi - e[2]) / s[2] + 1;
  Tensor<double> y(Shape{B, C, To, Ho, Wo});
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index to = 0; to < To; ++to)
        for (Index ho = 0; ho < Ho; ++ho)
          for (Index wo = 0; wo < Wo; ++wo) {
            double best = -1e300;
            for (Index kt = 0; kt < e[0]; ++kt)
              for (Index kh = 0; kh < e[1]; ++kh)
                for (Index kw = 0; kw < e[2]; ++kw)
                  best = std::max(best, x.at5(b, c, to * s[0] + kt, ho * s[1] + kh, wo * s[2] + kw));
            y.at5(b, c, to, ho, wo) = best;
          }
  return y;
}

inline Tensor<double> gap_naive(const Tensor<double>& x) {
  const Index B = x.shape()[0], C = x.shape()[1];
  const Index N = x.shape()[2] * x.shape()[3] * x.shape()[4];
  Tensor<double> y(Shape{B, C});
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      double sum = 0;
      for (Index l = 0; l < N; ++l) sum += x[(b * C + c) * N + l];
      y.at2(b, c) = sum / static_cast<double>(N);
    }
  return y;
}

inline std::vector<std::complex<double>> dft_naive(const std::vector<std::complex<double>>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> y(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = sign * 2.0 * 3.14159265358979323846 * static_cast<double>(k * j) / static_cast<double>(n);
      acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    y[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return y;
}

// dense projection: y[b,r] = sum_s W[r,s] x[b,s], explicit matrix
inline Tensor<double> dense_apply(const Tensor<double>& w, const Tensor<double>& x) {
  const Index R = w.shape()[0], S = w.shape()[1], B = x.shape()[0];
  Tensor<double> y(Shape{B, R});
  for (Index b = 0; b < B; ++b)
    for (Index r = 0; r < R; ++r) {
      double acc = 0;
      for (Index s = 0; s < S; ++s) acc += w.at2(r, s) * x.at2(b, s);
      y.at2(b, r) = acc;
    }
  return y;
}

// W1 [R,r] * W2 [r,S] multiplied out into a dense [R,S] matrix
inline Tensor<double> compose_dense(const Tensor<double>& w1, const Tensor<double>& w2) {
  const Index R = w1.shape()[0], r = w1.shape()[1], S = w2.shape()[1];
  Tensor<double> w(Shape{R, S});
  for (Index i = 0; i < R; ++i)
    for (Index j = 0; j < S; ++j) {
      double acc = 0;
      for (Index k = 0; k < r; ++k) acc += w1.at2(i, k) * w2.at2(k, j);
      w.at2(i, j) = acc;
    }
  return w;
}

}  // namespace oracle
