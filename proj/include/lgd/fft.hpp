#pragma once

#include <complex>
#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

inline bool is_pow2(Index n) { return n >= 1 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey. Power-of-two lengths only; callers that
// need other lengths must pad or pick a supported size.
template <typename T>
void fft_inplace(std::vector<std::complex<T>>& a, bool inverse) {
  const Index n = static_cast<Index>(a.size());
  require(is_pow2(n), "fft length must be a power of two, got " + std::to_string(n));
  if (n == 1) return;

  for (Index i = 1, j = 0; i < n; ++i) {
    Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
  }

  const T sign = inverse ? T(1) : T(-1);
  for (Index len = 2; len <= n; len <<= 1) {
    const T ang = sign * T(2) * static_cast<T>(3.1415926535897932384626433832795L) / static_cast<T>(len);
    const T wsr = std::cos(ang), wsi = std::sin(ang);
    for (Index i = 0; i < n; i += len) {
      // manual complex arithmetic: keeps the butterfly free of the
      // NaN-handling __mulxc3 library calls
      T wr = T(1), wi = T(0);
      for (Index k = 0; k < len / 2; ++k) {
        std::complex<T>& u = a[static_cast<std::size_t>(i + k)];
        std::complex<T>& v = a[static_cast<std::size_t>(i + k + len / 2)];
        const T vr = v.real(), vi = v.imag();
        const T tr = vr * wr - vi * wi;
        const T ti = vr * wi + vi * wr;
        const T ur = u.real(), ui = u.imag();
        v = std::complex<T>(ur - tr, ui - ti);
        u = std::complex<T>(ur + tr, ui + ti);
        const T nwr = wr * wsr - wi * wsi;
        wi = wr * wsi + wi * wsr;
        wr = nwr;
      }
    }
  }
  if (inverse) {
    const T inv = T(1) / static_cast<T>(n);
    for (auto& z : a) z = std::complex<T>(z.real() * inv, z.imag() * inv);
  }
}

template <typename T>
std::vector<std::complex<T>> fft_1d(std::vector<std::complex<T>> x) {
  fft_inplace(x, false);
  return x;
}

template <typename T>
std::vector<std::complex<T>> ifft_1d(std::vector<std::complex<T>> x) {
  fft_inplace(x, true);
  return x;
}

}  // namespace lgd
