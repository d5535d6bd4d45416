#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgd {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense N-dimensional array, row-major contiguous. Rank >= 1, extents >= 1.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (static_cast<Index>(data.size()) != numel(t.shape_))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.shape_));
    t.data_ = std::move(data);
    return t;
  }

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  Index extent(Index axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at2(Index a, Index b) { return data_[static_cast<std::size_t>(a * shape_[1] + b)]; }
  const T& at2(Index a, Index b) const { return data_[static_cast<std::size_t>(a * shape_[1] + b)]; }

  T& at5(Index b, Index c, Index t, Index h, Index w) {
    return data_[static_cast<std::size_t>((((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + h) * shape_[4] + w)];
  }
  const T& at5(Index b, Index c, Index t, Index h, Index w) const {
    return data_[static_cast<std::size_t>((((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + h) * shape_[4] + w)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>::from(shape_, std::move(d));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
    for (std::size_t i = 0; i < shape_.size(); ++i)
      if (shape_[i] < 1)
        throw ShapeError("tensor extent on axis " + std::to_string(i) + " must be >= 1, got " +
                         std::to_string(shape_[i]));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Fixed-association-order reduction: recursive halving. Bit-deterministic,
// and exact for power-of-two counts of identical values.
template <typename T>
T pairwise_sum(const T* p, Index n) {
  switch (n) {
    case 1: return p[0];
    case 2: return p[0] + p[1];
    case 3: return (p[0]) + (p[1] + p[2]);
    case 4: return (p[0] + p[1]) + (p[2] + p[3]);
    case 5: return (p[0] + p[1]) + ((p[2]) + (p[3] + p[4]));
    case 6: return ((p[0]) + (p[1] + p[2])) + ((p[3]) + (p[4] + p[5]));
    case 7: return ((p[0]) + (p[1] + p[2])) + ((p[3] + p[4]) + (p[5] + p[6]));
    case 8: return ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7]));
    default: break;
  }
  Index half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

template <typename T>
T pairwise_sum(const std::vector<T>& v) {
  return v.empty() ? T(0) : pairwise_sum(v.data(), static_cast<Index>(v.size()));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation convention, zero padding only).
// Data layout: x [B,C,T,H,W], weights [Cout,Cin,kT,kH,kW].
// ---------------------------------------------------------------------------

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  std::array<Index, 3> kernel{1, 1, 1};  // T,H,W
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{0, 0, 0};

  static constexpr const char* axis_name(int a) { return a == 0 ? "T" : (a == 1 ? "H" : "W"); }

  Index out_extent(Index in, int axis) const {
    Index k = kernel[static_cast<std::size_t>(axis)];
    Index s = stride[static_cast<std::size_t>(axis)];
    Index p = pad[static_cast<std::size_t>(axis)];
    require(k >= 1 && s >= 1 && p >= 0, std::string("conv spec invalid on axis ") + axis_name(axis));
    Index padded = in + 2 * p;
    require(padded >= k, "conv kernel exceeds padded input on axis " + std::string(axis_name(axis)) + ": " +
                             std::to_string(k) + " > " + std::to_string(padded));
    Index out = (padded - k) / s + 1;
    require(out >= 1, std::string("conv output extent < 1 on axis ") + axis_name(axis));
    return out;
  }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 5, "conv expects rank-5 input [B,C,T,H,W], got " + shape_str(in));
    require(in[1] == in_channels, "conv input channel mismatch: expected " + std::to_string(in_channels) +
                                      ", got " + std::to_string(in[1]));
    return Shape{in[0], out_channels, out_extent(in[2], 0), out_extent(in[3], 1), out_extent(in[4], 2)};
  }

  Shape weight_shape() const { return Shape{out_channels, in_channels, kernel[0], kernel[1], kernel[2]}; }
};

namespace convdetail {

// Valid output range along one axis for a fixed kernel tap: indices o with
// 0 <= o*s - p + k < in, clipped to [0, out).
struct TapRange {
  Index lo = 0, hi = -1;  // inclusive
  bool empty() const { return hi < lo; }
};

inline TapRange tap_range(Index in, Index out, Index stride, Index pad, Index k) {
  TapRange r;
  r.lo = (pad > k) ? (pad - k + stride - 1) / stride : 0;
  const Index top = in - 1 + pad - k;
  r.hi = top < 0 ? -1 : std::min(out - 1, top / stride);
  return r;
}

}  // namespace convdetail

// Direct convolution organized as per-tap row updates: for each kernel tap
// the inner loop runs over a contiguous output row (stride 1 in W), which
// keeps the hot path a plain fused multiply-add sweep.
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  Shape os = spec.out_shape(x.shape());
  require(w.shape() == spec.weight_shape(),
          "conv weight shape " + shape_str(w.shape()) + " does not match spec " + shape_str(spec.weight_shape()));
  const Index B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3], Wi = x.shape()[4];
  const Index Co = os[1], To = os[2], Ho = os[3], Wo = os[4];
  const Index kT = spec.kernel[0], kH = spec.kernel[1], kW = spec.kernel[2];
  const Index sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
  const Index pT = spec.pad[0], pH = spec.pad[1], pW = spec.pad[2];
  const Index x_cs = Ti * Hi * Wi, x_ts = Hi * Wi;
  const Index y_cs = To * Ho * Wo, y_ts = Ho * Wo;
  const Index w_os = Ci * kT * kH * kW;

  const bool pointwise = kT == 1 && kH == 1 && kW == 1 && sT == 1 && sH == 1 && sW == 1 && pT == 0 &&
                         pH == 0 && pW == 0;

  Tensor<T> y(os);
  if (pointwise) {
    // 1x1x1 stride-1 convolution: per-channel saxpy over whole planes
    for (Index b = 0; b < B; ++b) {
      const T* xb = x.data() + b * Ci * x_cs;
      T* yb = y.data() + b * Co * y_cs;
      for (Index co = 0; co < Co; ++co) {
        T* yc = yb + co * y_cs;
        const T* wc = w.data() + co * Ci;
        for (Index ci = 0; ci < Ci; ++ci) {
          const T wv = wc[ci];
          const T* xc = xb + ci * x_cs;
          for (Index l = 0; l < x_cs; ++l) yc[l] += wv * xc[l];
        }
      }
    }
    return y;
  }
  for (Index b = 0; b < B; ++b) {
    const T* xb = x.data() + b * Ci * x_cs;
    T* yb = y.data() + b * Co * y_cs;
    for (Index co = 0; co < Co; ++co) {
      T* yc = yb + co * y_cs;
      const T* wc = w.data() + co * w_os;
      for (Index ci = 0; ci < Ci; ++ci) {
        const T* xc = xb + ci * x_cs;
        for (Index kt = 0; kt < kT; ++kt) {
          const auto rt = convdetail::tap_range(Ti, To, sT, pT, kt);
          if (rt.empty()) continue;
          for (Index kh = 0; kh < kH; ++kh) {
            const auto rh = convdetail::tap_range(Hi, Ho, sH, pH, kh);
            if (rh.empty()) continue;
            for (Index kw = 0; kw < kW; ++kw) {
              const auto rw = convdetail::tap_range(Wi, Wo, sW, pW, kw);
              if (rw.empty()) continue;
              const T wv = wc[((ci * kT + kt) * kH + kh) * kW + kw];
              const Index n = rw.hi - rw.lo + 1;
              for (Index to = rt.lo; to <= rt.hi; ++to) {
                const Index ti = to * sT - pT + kt;
                for (Index ho = rh.lo; ho <= rh.hi; ++ho) {
                  const Index hi = ho * sH - pH + kh;
                  const T* xrow = xc + ti * x_ts + hi * Wi + (rw.lo * sW - pW + kw);
                  T* yrow = yc + to * y_ts + ho * Wo + rw.lo;
                  if (sW == 1) {
                    for (Index i = 0; i < n; ++i) yrow[i] += wv * xrow[i];
                  } else {
                    for (Index i = 0; i < n; ++i) yrow[i] += wv * xrow[i * sW];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

// Gradients of conv w.r.t. input and weights given upstream dy; same per-tap
// row structure as the forward pass.
template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec, const Tensor<T>& dy,
                   Tensor<T>* dx, Tensor<T>* dw) {
  const Shape os = spec.out_shape(x.shape());
  require(dy.shape() == os, "conv backward: dy shape mismatch");
  const Index B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2], Hi = x.shape()[3], Wi = x.shape()[4];
  const Index Co = os[1], To = os[2], Ho = os[3], Wo = os[4];
  const Index kT = spec.kernel[0], kH = spec.kernel[1], kW = spec.kernel[2];
  const Index sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
  const Index pT = spec.pad[0], pH = spec.pad[1], pW = spec.pad[2];
  const Index x_cs = Ti * Hi * Wi, x_ts = Hi * Wi;
  const Index y_cs = To * Ho * Wo, y_ts = Ho * Wo;
  const Index w_os = Ci * kT * kH * kW;

  const bool pointwise = kT == 1 && kH == 1 && kW == 1 && sT == 1 && sH == 1 && sW == 1 && pT == 0 &&
                         pH == 0 && pW == 0;
  if (pointwise) {
    for (Index b = 0; b < B; ++b) {
      const T* xb = x.data() + b * Ci * x_cs;
      T* dxb = dx ? dx->data() + b * Ci * x_cs : nullptr;
      for (Index co = 0; co < Co; ++co) {
        const T* gc = dy.data() + (b * Co + co) * y_cs;
        const T* wc = w.data() + co * Ci;
        T* dwc = dw ? dw->data() + co * Ci : nullptr;
        for (Index ci = 0; ci < Ci; ++ci) {
          if (dxb) {
            T* dxc = dxb + ci * x_cs;
            const T wv = wc[ci];
            for (Index l = 0; l < x_cs; ++l) dxc[l] += wv * gc[l];
          }
          if (dwc) {
            const T* xc = xb + ci * x_cs;
            T acc = T(0);
            for (Index l = 0; l < x_cs; ++l) acc += gc[l] * xc[l];
            dwc[ci] += acc;
          }
        }
      }
    }
    return;
  }

  for (Index b = 0; b < B; ++b) {
    const T* xb = x.data() + b * Ci * x_cs;
    T* dxb = dx ? dx->data() + b * Ci * x_cs : nullptr;
    for (Index co = 0; co < Co; ++co) {
      const T* gc = dy.data() + (b * Co + co) * y_cs;
      const T* wc = w.data() + co * w_os;
      T* dwc = dw ? dw->data() + co * w_os : nullptr;
      for (Index ci = 0; ci < Ci; ++ci) {
        const T* xc = xb + ci * x_cs;
        T* dxc = dxb ? dxb + ci * x_cs : nullptr;
        for (Index kt = 0; kt < kT; ++kt) {
          const auto rt = convdetail::tap_range(Ti, To, sT, pT, kt);
          if (rt.empty()) continue;
          for (Index kh = 0; kh < kH; ++kh) {
            const auto rh = convdetail::tap_range(Hi, Ho, sH, pH, kh);
            if (rh.empty()) continue;
            for (Index kw = 0; kw < kW; ++kw) {
              const auto rw = convdetail::tap_range(Wi, Wo, sW, pW, kw);
              if (rw.empty()) continue;
              const Index widx = ((ci * kT + kt) * kH + kh) * kW + kw;
              const T wv = wc[widx];
              const Index n = rw.hi - rw.lo + 1;
              T acc = T(0);
              for (Index to = rt.lo; to <= rt.hi; ++to) {
                const Index ti = to * sT - pT + kt;
                for (Index ho = rh.lo; ho <= rh.hi; ++ho) {
                  const Index hi = ho * sH - pH + kh;
                  const Index xoff = ti * x_ts + hi * Wi + (rw.lo * sW - pW + kw);
                  const T* grow = gc + to * y_ts + ho * Wo + rw.lo;
                  if (dxc) {
                    T* dxrow = dxc + xoff;
                    if (sW == 1) {
                      for (Index i = 0; i < n; ++i) dxrow[i] += wv * grow[i];
                    } else {
                      for (Index i = 0; i < n; ++i) dxrow[i * sW] += wv * grow[i];
                    }
                  }
                  if (dwc) {
                    const T* xrow = xc + xoff;
                    if (sW == 1) {
                      for (Index i = 0; i < n; ++i) acc += grow[i] * xrow[i];
                    } else {
                      for (Index i = 0; i < n; ++i) acc += grow[i] * xrow[i * sW];
                    }
                  }
                }
              }
              if (dwc) dwc[widx] += acc;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Max pooling over the T,H,W axes. No padding; trailing positions that do not
// fill a complete window are dropped (floor semantics).
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, const std::array<Index, 3>& extent, const std::array<Index, 3>& stride,
                   Tensor<Index>* argmax = nullptr) {
  require(x.rank() == 5, "max_pool expects rank-5 input, got " + shape_str(x.shape()));
  const Index B = x.shape()[0], C = x.shape()[1];
  std::array<Index, 3> in{x.shape()[2], x.shape()[3], x.shape()[4]};
  std::array<Index, 3> out{};
  for (int a = 0; a < 3; ++a) {
    require(extent[a] >= 1 && stride[a] >= 1, "max_pool extent/stride must be >= 1");
    require(extent[a] <= in[a], std::string("max_pool window exceeds input on axis ") + ConvSpec::axis_name(a) +
                                    ": " + std::to_string(extent[a]) + " > " + std::to_string(in[a]));
    out[a] = (in[a] - extent[a]) / stride[a] + 1;
  }
  Tensor<T> y(Shape{B, C, out[0], out[1], out[2]});
  if (argmax) *argmax = Tensor<Index>(y.shape());
  const Index x_ts = in[1] * in[2];
  Index oi = 0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const T* xc = x.data() + (b * C + c) * in[0] * x_ts;
      for (Index to = 0; to < out[0]; ++to)
        for (Index ho = 0; ho < out[1]; ++ho)
          for (Index wo = 0; wo < out[2]; ++wo, ++oi) {
            T best = T(0);
            Index best_idx = -1;
            for (Index kt = 0; kt < extent[0]; ++kt)
              for (Index kh = 0; kh < extent[1]; ++kh)
                for (Index kw = 0; kw < extent[2]; ++kw) {
                  Index ti = to * stride[0] + kt, hi = ho * stride[1] + kh, wi = wo * stride[2] + kw;
                  Index idx = ti * x_ts + hi * in[2] + wi;
                  if (best_idx < 0 || xc[idx] > best) {
                    best = xc[idx];
                    best_idx = idx;
                  }
                }
            y[oi] = best;
            if (argmax) (*argmax)[oi] = (b * C + c) * in[0] * x_ts + best_idx;
          }
    }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.rank() == 5, "global_avg_pool expects rank-5 input, got " + shape_str(x.shape()));
  const Index B = x.shape()[0], C = x.shape()[1];
  const Index N = x.shape()[2] * x.shape()[3] * x.shape()[4];
  Tensor<T> y(Shape{B, C});
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) y.at2(b, c) = pairwise_sum(x.data() + (b * C + c) * N, N) / static_cast<T>(N);
  return y;
}

template <typename T>
Tensor<T> broadcast_over_locations(const Tensor<T>& v, Index T_, Index H, Index W) {
  require(v.rank() == 2, "broadcast_over_locations expects rank-2 [B,C] input, got " + shape_str(v.shape()));
  const Index B = v.shape()[0], C = v.shape()[1];
  Tensor<T> y(Shape{B, C, T_, H, W});
  const Index N = T_ * H * W;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      T* p = y.data() + (b * C + c) * N;
      std::fill(p, p + N, v.at2(b, c));
    }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra and elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
  require(a.shape()[1] == b.shape()[0], "matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                                            shape_str(b.shape()));
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> y(Shape{m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      T acc = T(0);
      for (Index l = 0; l < k; ++l) acc += a.at2(i, l) * b.at2(l, j);
      y.at2(i, j) = acc;
    }
  return y;
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& m, const Tensor<T>& v) {
  require(m.rank() == 2 && v.rank() == 1, "matvec expects matrix and vector");
  require(m.shape()[1] == v.shape()[0], "matvec dimension mismatch");
  Tensor<T> y(Shape{m.shape()[0]});
  for (Index i = 0; i < m.shape()[0]; ++i) {
    T acc = T(0);
    for (Index j = 0; j < m.shape()[1]; ++j) acc += m.at2(i, j) * v[j];
    y[i] = acc;
  }
  return y;
}

// y[b,r] = sum_s x[b,s] * M[r,s]
template <typename T>
Tensor<T> rowbatch_matmul(const Tensor<T>& x, const Tensor<T>& m) {
  require(x.rank() == 2 && m.rank() == 2, "rowbatch_matmul expects rank-2 operands");
  require(x.shape()[1] == m.shape()[1], "rowbatch_matmul channel mismatch: input has " +
                                            std::to_string(x.shape()[1]) + " columns, matrix expects " +
                                            std::to_string(m.shape()[1]));
  const Index B = x.shape()[0], S = x.shape()[1], R = m.shape()[0];
  Tensor<T> y(Shape{B, R});
  for (Index b = 0; b < B; ++b)
    for (Index r = 0; r < R; ++r) {
      T acc = T(0);
      for (Index s = 0; s < S; ++s) acc += x.at2(b, s) * m.at2(r, s);
      y.at2(b, r) = acc;
    }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (Index i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (Index i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-y[i]));
  return y;
}

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "elementwise_add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a;
  for (Index i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "elementwise_mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a;
  for (Index i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "max_abs_diff shape mismatch");
  T m = T(0);
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace lgd
