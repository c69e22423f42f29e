#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle/oracle.hpp"
#include "support.hpp"

using namespace invflow;
using namespace invflow::test;

namespace {

// Single-channel k=2 kernel [[0.1, 0.2], [0.3, 1.0]] used across the frozen cases.
Kernel frozen_kernel() { return Kernel::from_data(1, 1, 2, {0.1, 0.2, 0.3, 1.0}); }

}  // namespace

TEST_CASE("raster_vec is pixel-major, channel-minor") {
  ImageTensor t(2, 2, 2);
  // channel 0 plane 1..4, channel 1 plane 5..8
  t.at(0, 0, 0) = 1;
  t.at(0, 0, 1) = 2;
  t.at(0, 1, 0) = 3;
  t.at(0, 1, 1) = 4;
  t.at(1, 0, 0) = 5;
  t.at(1, 0, 1) = 6;
  t.at(1, 1, 0) = 7;
  t.at(1, 1, 1) = 8;
  std::vector<double> want{1, 5, 2, 6, 3, 7, 4, 8};
  CHECK(raster_vec(t) == want);
  ImageTensor back = from_raster_vec(want, 2, 2, 2);
  CHECK(max_abs_diff(back, t) == 0.0);
}

TEST_CASE("dense operator of the frozen 2x2 case") {
  DenseOperator m = build_operator_matrix(frozen_kernel(), 1, 2, 2);
  REQUIRE(m.n == 4);
  std::vector<double> want{
      1.0, 0.0, 0.0, 0.0,  //
      0.3, 1.0, 0.0, 0.0,  //
      0.2, 0.0, 1.0, 0.0,  //
      0.1, 0.2, 0.3, 1.0,
  };
  CHECK(m.a == want);
}

TEST_CASE("masked kernels build unit lower triangular operators") {
  std::mt19937 rng(21);
  for (int it = 0; it < 30; ++it) {
    int c = 1 + static_cast<int>(rng() % 3);
    int h = 1 + static_cast<int>(rng() % 6);
    int w = 1 + static_cast<int>(rng() % 6);
    int k = 1 + static_cast<int>(rng() % 3);
    Kernel ker = random_masked_kernel(c, k, rng, 1.0);
    DenseOperator m = build_operator_matrix(ker, c, h, w);
    for (int r = 0; r < m.n; ++r) {
      CHECK(m.at(r, r) == 1.0);
      for (int col = r + 1; col < m.n; ++col) CHECK(m.at(r, col) == 0.0);
    }
    CHECK(dense_det(m) == 1.0);
  }
}

TEST_CASE("operator guard rejects oversized systems") {
  Kernel k = masked_identity_kernel(1, 2);
  CHECK_THROWS_AS(build_operator_matrix(k, 1, 65, 64), std::invalid_argument);
}

TEST_CASE("forward substitution solves the frozen system") {
  DenseOperator m = build_operator_matrix(frozen_kernel(), 1, 2, 2);
  std::vector<double> y{1.0, 2.3, 3.2, 5.4};
  auto x = solve_unit_lower(m, y);
  std::vector<double> want{1.0, 2.0, 3.0, 4.0};
  CHECK(max_abs_diff(x, want) < 1e-12);

  DenseOperator bad = m;
  bad.at(2, 2) = 1.0 + 1e-12;
  CHECK_THROWS_AS(solve_unit_lower(bad, y), std::invalid_argument);
}

TEST_CASE("gaussian elimination agrees with forward substitution") {
  std::mt19937 rng(5);
  for (int it = 0; it < 20; ++it) {
    int c = 1 + static_cast<int>(rng() % 2);
    int h = 2 + static_cast<int>(rng() % 6);
    int w = 2 + static_cast<int>(rng() % 6);
    Kernel ker = random_masked_kernel(c, 2 + static_cast<int>(rng() % 2), rng);
    DenseOperator m = build_operator_matrix(ker, c, h, w);
    std::vector<double> y(static_cast<size_t>(m.n));
    for (auto& v : y) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto a = solve_unit_lower(m, y);
    auto b = gaussian_elimination_solve(m, y);
    CHECK(max_abs_diff(a, b) < 1e-10);
  }
}

TEST_CASE("gaussian elimination pivots when the leading entry vanishes") {
  DenseOperator m;
  m.n = 2;
  m.a = {0.0, 1.0, 1.0, 0.0};
  std::vector<double> y{3.0, 4.0};
  auto x = gaussian_elimination_solve(m, y);
  CHECK(x[0] == 4.0);
  CHECK(x[1] == 3.0);
  CHECK(dense_det_lu(m) == -1.0);
}

TEST_CASE("gaussian elimination keeps residuals tiny on random systems") {
  std::mt19937 rng(9);
  for (int n : {3, 17, 64}) {
    DenseOperator m;
    m.n = n;
    m.a.resize(static_cast<size_t>(n) * n);
    for (auto& v : m.a) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    for (int i = 0; i < n; ++i) m.at(i, i) += 4.0;  // diagonally dominant
    std::vector<double> y(static_cast<size_t>(n));
    for (auto& v : y) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    auto x = gaussian_elimination_solve(m, y);
    for (int r = 0; r < n; ++r) {
      double acc = 0.0;
      for (int c = 0; c < n; ++c) acc += m.at(r, c) * x[static_cast<size_t>(c)];
      CHECK(std::abs(acc - y[static_cast<size_t>(r)]) < 1e-11);
    }
  }
  DenseOperator sing;
  sing.n = 2;
  sing.a = {1.0, 2.0, 2.0, 4.0};
  std::vector<double> y{1.0, 2.0};
  CHECK_THROWS_AS(gaussian_elimination_solve(sing, y), std::runtime_error);
}

TEST_CASE("dense inverse multiplies back to the identity") {
  std::mt19937 rng(13);
  Kernel ker = random_masked_kernel(2, 3, rng, 0.4);
  DenseOperator m = build_operator_matrix(ker, 2, 5, 5);
  DenseOperator inv = dense_inverse(m);
  for (int r = 0; r < m.n; ++r)
    for (int c = 0; c < m.n; ++c) {
      double acc = 0.0;
      for (int t = 0; t < m.n; ++t) acc += m.at(r, t) * inv.at(t, c);
      CHECK(std::abs(acc - (r == c ? 1.0 : 0.0)) < 1e-10);
    }

  DenseOperator big;
  big.n = 1025;
  big.a.assign(static_cast<size_t>(big.n) * big.n, 0.0);
  CHECK_THROWS_AS(dense_inverse(big), std::invalid_argument);
}

TEST_CASE("determinants: structural path exact, LU path tight") {
  std::mt19937 rng(17);
  Kernel ker = random_masked_kernel(2, 2, rng, 1.0);
  DenseOperator m = build_operator_matrix(ker, 2, 4, 4);
  CHECK(dense_det(m) == 1.0);
  CHECK(std::abs(dense_det_lu(m) - 1.0) <= 1e-12);

  DenseOperator g;
  g.n = 2;
  g.a = {2.0, 1.0, 1.0, 1.0};
  CHECK(dense_det(g) == doctest::Approx(1.0).epsilon(1e-12));
  DenseOperator sing;
  sing.n = 2;
  sing.a = {1.0, 1.0, 1.0, 1.0};
  CHECK(dense_det_lu(sing) == 0.0);
}

TEST_CASE("finite differences recover a quadratic gradient") {
  auto loss = [](std::span<const double> x) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += static_cast<double>(i + 1) * x[i] * x[i];
    return s;
  };
  std::vector<double> p{0.5, -1.25, 2.0, 0.0};
  auto g = finite_diff_grad(loss, p);
  for (size_t i = 0; i < p.size(); ++i)
    CHECK(std::abs(g[i] - 2.0 * static_cast<double>(i + 1) * p[i]) < 1e-9);

  std::vector<char> skip{0, 1, 0, 0};
  auto gs = finite_diff_grad(loss, p, 1e-5, &skip);
  CHECK(gs[1] == 0.0);
  CHECK(std::abs(gs[0] - g[0]) < 1e-12);
}

TEST_CASE("finite difference error curves dip at moderate step sizes") {
  auto loss = [](std::span<const double> x) { return std::sin(x[0]); };
  std::vector<double> p{1.0};
  double want = std::cos(1.0);
  auto err_at = [&](double h) { return std::abs(finite_diff_grad(loss, p, h)[0] - want); };
  double coarse = err_at(1e-2), mid = err_at(1e-5), fine = err_at(1e-11);
  CHECK(mid < coarse);
  CHECK(mid < fine);
}

TEST_CASE("finite differences reject non-finite losses") {
  auto loss = [](std::span<const double> x) { return std::log(x[0]); };
  std::vector<double> p{1e-6};
  CHECK_THROWS_AS(finite_diff_grad(loss, p, 1.0), std::runtime_error);
}
