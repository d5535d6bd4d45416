#include <catch2/catch_amalgamated.hpp>

#include "lgd/fft.hpp"
#include "lgd/rng.hpp"
#include "oracles.hpp"

using namespace lgd;
using cd = std::complex<double>;

TEST_CASE("fft of unit impulse is all ones") {
  std::vector<cd> x{cd(1, 0), cd(0, 0), cd(0, 0), cd(0, 0)};
  auto y = fft_1d(x);
  for (const cd& v : y) {
    CHECK(v.real() == Catch::Approx(1.0).margin(1e-12));
    CHECK(v.imag() == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("ifft inverts fft on random length-16 input") {
  Rng rng(21);
  std::vector<cd> x(16);
  for (auto& v : x) v = cd(rng.uniform(-1, 1), rng.uniform(-1, 1));
  auto back = ifft_1d(fft_1d(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(back[i] - x[i]) < 1e-10);
  }
}

TEST_CASE("fft matches naive DFT on length 8") {
  Rng rng(33);
  std::vector<cd> x(8);
  for (auto& v : x) v = cd(rng.uniform(-2, 2), rng.uniform(-2, 2));
  auto fast = fft_1d(x);
  auto slow = oracle::dft_naive(x, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-10);

  auto ifast = ifft_1d(x);
  auto islow = oracle::dft_naive(x, true);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(ifast[i] - islow[i]) < 1e-10);
}

TEST_CASE("fft length restrictions") {
  std::vector<cd> bad(3);
  CHECK_THROWS_AS(fft_1d(bad), ShapeError);
  std::vector<cd> one{cd(4.2, -1.0)};
  auto y = fft_1d(one);
  CHECK(y[0] == one[0]);
  std::vector<cd> empty;
  CHECK_THROWS_AS(fft_1d(empty), ShapeError);
}
