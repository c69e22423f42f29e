#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flow/layers.hpp"
#include "oracle/oracle.hpp"
#include "support.hpp"

using namespace invflow;
using namespace invflow::test;

namespace {

double contract(const ImageTensor& g, const ImageTensor& y) {
  double s = 0.0;
  for (int64_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
  return s;
}

}  // namespace

TEST_CASE("actnorm: identity parameters pass through with zero logdet") {
  std::mt19937 rng(3);
  ActNorm a(3);
  ImageTensor x = random_tensor(3, 4, 5, rng);
  double ld = 0.0;
  ImageTensor y = a.forward(x, &ld);
  CHECK(max_abs_diff(x, y) == 0.0);
  CHECK(ld == 0.0);
}

TEST_CASE("actnorm: frozen affine case") {
  ActNorm a(1);
  a.log_scale[0] = std::log(2.0);
  a.bias[0] = 1.0;
  ImageTensor x = ImageTensor::from_data(1, 2, 2, {0.0, 1.0, -1.0, 0.5});
  double ld = 0.0;
  ImageTensor y = a.forward(x, &ld);
  CHECK(y.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(y.at(0, 0, 1) == doctest::Approx(3.0));
  CHECK(y.at(0, 1, 0) == doctest::Approx(-1.0));
  CHECK(y.at(0, 1, 1) == doctest::Approx(2.0));
  CHECK(ld == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(max_abs_diff(a.inverse(y), x) < 1e-12);
}

TEST_CASE("actnorm: backward matches finite differences") {
  std::mt19937 rng(5);
  ActNorm a(2);
  for (auto& v : a.log_scale) v = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
  for (auto& v : a.bias) v = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
  ImageTensor x = random_tensor(2, 3, 4, rng);
  ImageTensor g = random_tensor(2, 3, 4, rng);
  const double alpha = 0.7;  // weight on the logdet term

  ActNorm grad(2);
  ImageTensor gx = a.backward(g, x, alpha, grad);

  auto loss_params = [&](std::span<const double> p) {
    ActNorm aa = a;
    std::copy(p.begin(), p.begin() + 2, aa.log_scale.begin());
    std::copy(p.begin() + 2, p.end(), aa.bias.begin());
    double ld = 0.0;
    ImageTensor y = aa.forward(x, &ld);
    return contract(g, y) + alpha * ld;
  };
  std::vector<double> point = a.log_scale;
  point.insert(point.end(), a.bias.begin(), a.bias.end());
  auto fd = finite_diff_grad(loss_params, point);
  std::vector<double> got = grad.log_scale;
  got.insert(got.end(), grad.bias.begin(), grad.bias.end());
  CHECK(rel_err(got, fd) < 1e-7);

  auto fd_x = finite_diff_grad(
      [&](std::span<const double> p) {
        ImageTensor xx = x;
        std::copy(p.begin(), p.end(), xx.data().begin());
        double ld = 0.0;
        return contract(g, a.forward(xx, &ld)) + alpha * ld;
      },
      x.data());
  CHECK(rel_err(gx.data(), fd_x) < 1e-7);
}

TEST_CASE("actnorm: data-dependent init normalises the batch") {
  std::mt19937 rng(7);
  ActNorm a(2);
  std::vector<ImageTensor> xs;
  for (int i = 0; i < 8; ++i) {
    ImageTensor t = random_tensor(2, 6, 6, rng, -1.0, 3.0);
    for (auto& v : t.data()) v = v * 2.0 + 1.5;
    xs.push_back(std::move(t));
  }
  a.init_from_batch(xs);
  CHECK(a.initialized);
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0, sum2 = 0.0;
    int64_t n = 0;
    for (auto& x : xs) {
      double ld = 0.0;
      ImageTensor y = a.forward(x, &ld);
      for (int py = 0; py < y.height(); ++py)
        for (int px = 0; px < y.width(); ++px) {
          sum += y.at(c, py, px);
          sum2 += y.at(c, py, px) * y.at(c, py, px);
          ++n;
        }
    }
    double mean = sum / static_cast<double>(n);
    double var = sum2 / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("inv1x1: identity and frozen channel maps") {
  std::mt19937 rng(11);
  Inv1x1 m(3);
  ImageTensor x = random_tensor(3, 4, 4, rng);
  double ld = 0.0;
  CHECK(max_abs_diff(m.forward(x, &ld), x) == 0.0);
  CHECK(ld == 0.0);

  Inv1x1 swap(2);
  swap.mat = {0.0, 1.0, 1.0, 0.0};
  ImageTensor x2 = random_tensor(2, 3, 3, rng);
  double ld2 = 0.0;
  ImageTensor y2 = swap.forward(x2, &ld2);
  CHECK(y2.at(0, 1, 1) == x2.at(1, 1, 1));
  CHECK(y2.at(1, 2, 0) == x2.at(0, 2, 0));
  CHECK(ld2 == doctest::Approx(0.0));  // |det| = 1

  Inv1x1 scale(2);
  scale.mat = {2.0, 0.0, 0.0, 3.0};
  double ld3 = 0.0;
  ImageTensor y3 = scale.forward(x2, &ld3);
  CHECK(ld3 == doctest::Approx(9.0 * std::log(6.0)).epsilon(1e-12));
  CHECK(max_abs_diff(scale.inverse(y3), x2) < 1e-12);
}

TEST_CASE("inv1x1: near-singular matrices are rejected") {
  Inv1x1 m(2);
  m.mat = {1.0, 2.0, 0.5, 1.0};  // rank 1
  ImageTensor x(2, 2, 2);
  double ld = 0.0;
  CHECK_THROWS_AS(m.forward(x, &ld), std::runtime_error);
  CHECK_THROWS_AS(m.inverse(x), std::runtime_error);
}

TEST_CASE("inv1x1: backward matches finite differences") {
  std::mt19937 rng(13);
  Inv1x1 m(3);
  for (auto& v : m.mat) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  ImageTensor x = random_tensor(3, 3, 4, rng);
  ImageTensor g = random_tensor(3, 3, 4, rng);
  const double alpha = -0.6;

  Inv1x1 grad(3);
  std::fill(grad.mat.begin(), grad.mat.end(), 0.0);
  ImageTensor gx = m.backward(g, x, alpha, grad);

  auto fd = finite_diff_grad(
      [&](std::span<const double> p) {
        Inv1x1 mm = m;
        std::copy(p.begin(), p.end(), mm.mat.begin());
        double ld = 0.0;
        return contract(g, mm.forward(x, &ld)) + alpha * ld;
      },
      m.mat);
  CHECK(rel_err(grad.mat, fd) < 1e-6);

  auto fd_x = finite_diff_grad(
      [&](std::span<const double> p) {
        ImageTensor xx = x;
        std::copy(p.begin(), p.end(), xx.data().begin());
        double ld = 0.0;
        return contract(g, m.forward(xx, &ld)) + alpha * ld;
      },
      x.data());
  CHECK(rel_err(gx.data(), fd_x) < 1e-6);
}

TEST_CASE("coupling: zero-initialised net gives the identity with zero logdet") {
  std::mt19937 rng(17);
  Coupling c(4, 8, 99);
  ImageTensor x = random_tensor(4, 4, 4, rng);
  double ld = 0.0;
  ImageTensor y = c.forward(x, &ld, nullptr);
  CHECK(max_abs_diff(x, y) == 0.0);
  CHECK(ld == 0.0);
}

TEST_CASE("coupling: invertible with bounded scales") {
  std::mt19937 rng(19);
  Coupling c(4, 8, 7);
  for (auto& v : c.w3.weights()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  for (auto& v : c.b3) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  ImageTensor x = random_tensor(4, 6, 5, rng);
  double ld = 0.0;
  ImageTensor y = c.forward(x, &ld, nullptr);
  CHECK(max_abs_diff(c.inverse(y), x) < 1e-10);
  // sigma in (0.5, 1.5) bounds the logdet by n log 1.5
  CHECK(std::abs(ld) < 2.0 * 6.0 * 5.0 * std::log(1.5));
  CHECK(ld != 0.0);
}

TEST_CASE("coupling: backward matches finite differences") {
  std::mt19937 rng(23);
  Coupling c(4, 4, 31);
  for (auto& v : c.w3.weights()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  ImageTensor x = random_tensor(4, 3, 3, rng);
  ImageTensor g = random_tensor(4, 3, 3, rng);
  const double alpha = 0.9;

  Coupling::Cache cache;
  double ld = 0.0;
  c.forward(x, &ld, &cache);
  Coupling grad(4, 4, 0);
  grad.w1 = Kernel(4, 2, 3);
  grad.w2 = Kernel(4, 4, 3);
  ImageTensor gx = c.backward(g, cache, alpha, grad);

  auto collect = [](const Coupling& cc) {
    std::vector<double> p;
    auto app = [&p](const std::vector<double>& v) { p.insert(p.end(), v.begin(), v.end()); };
    app(cc.w1.weights());
    app(cc.b1);
    app(cc.w2.weights());
    app(cc.b2);
    app(cc.w3.weights());
    app(cc.b3);
    return p;
  };
  auto scatter = [&](Coupling& cc, std::span<const double> p) {
    size_t at = 0;
    auto take = [&](std::vector<double>& v) {
      std::copy(p.begin() + at, p.begin() + at + v.size(), v.begin());
      at += v.size();
    };
    take(cc.w1.weights());
    take(cc.b1);
    take(cc.w2.weights());
    take(cc.b2);
    take(cc.w3.weights());
    take(cc.b3);
  };

  auto fd = finite_diff_grad(
      [&](std::span<const double> p) {
        Coupling cc = c;
        scatter(cc, p);
        double l = 0.0;
        return contract(g, cc.forward(x, &l, nullptr)) + alpha * l;
      },
      collect(c));
  CHECK(rel_err(collect(grad), fd) < 1e-6);

  auto fd_x = finite_diff_grad(
      [&](std::span<const double> p) {
        ImageTensor xx = x;
        std::copy(p.begin(), p.end(), xx.data().begin());
        double l = 0.0;
        return contract(g, c.forward(xx, &l, nullptr)) + alpha * l;
      },
      x.data());
  CHECK(rel_err(gx.data(), fd_x) < 1e-6);
}

TEST_CASE("spline: identity at init") {
  std::mt19937 rng(29);
  SplineActivation sp(2);
  ImageTensor x = random_tensor(2, 4, 4, rng, -5.0, 5.0);
  double ld = 0.0;
  ImageTensor y = sp.forward(x, &ld);
  CHECK(max_abs_diff(x, y) < 1e-12);
  CHECK(ld == doctest::Approx(0.0));
}

TEST_CASE("spline: monotone, bijective, logdet consistent") {
  std::mt19937 rng(31);
  SplineActivation sp(1);
  for (auto& v : sp.log_slopes) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  sp.offset[0] = 0.4;

  // strictly increasing inputs spanning both tails
  std::vector<double> xs;
  for (int i = 0; i < 64; ++i) xs.push_back(-6.0 + 12.0 * i / 63.0);
  ImageTensor x = ImageTensor::from_data(1, 8, 8, std::vector<double>(xs));
  double ld = 0.0;
  ImageTensor y = sp.forward(x, &ld);
  for (int i = 1; i < 64; ++i) CHECK(y[i] > y[i - 1]);
  CHECK(max_abs_diff(sp.inverse(y), x) < 1e-10);

  // logdet equals the sum of log d y/d x measured pointwise
  double fd_ld = 0.0;
  for (int i = 0; i < 64; ++i) {
    ImageTensor a = x, b = x;
    a[i] -= 1e-6;
    b[i] += 1e-6;
    fd_ld += std::log((sp.forward(b, nullptr)[i] - sp.forward(a, nullptr)[i]) / 2e-6);
  }
  CHECK(std::abs(ld - fd_ld) < 1e-5);
}

TEST_CASE("spline: backward matches finite differences") {
  std::mt19937 rng(37);
  SplineActivation sp(2);
  for (auto& v : sp.log_slopes) v = std::uniform_real_distribution<double>(-0.8, 0.8)(rng);
  for (auto& v : sp.offset) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  ImageTensor x = random_tensor(2, 3, 4, rng, -4.5, 4.5);
  ImageTensor g = random_tensor(2, 3, 4, rng);
  const double alpha = -0.8;

  SplineActivation grad(2);
  std::fill(grad.log_slopes.begin(), grad.log_slopes.end(), 0.0);
  std::fill(grad.offset.begin(), grad.offset.end(), 0.0);
  ImageTensor gx = sp.backward(g, x, alpha, grad);

  std::vector<double> point = sp.log_slopes;
  point.insert(point.end(), sp.offset.begin(), sp.offset.end());
  auto fd = finite_diff_grad(
      [&](std::span<const double> p) {
        SplineActivation ss = sp;
        std::copy(p.begin(), p.begin() + static_cast<long>(ss.log_slopes.size()),
                  ss.log_slopes.begin());
        std::copy(p.begin() + static_cast<long>(ss.log_slopes.size()), p.end(), ss.offset.begin());
        double l = 0.0;
        return contract(g, ss.forward(x, &l)) + alpha * l;
      },
      point);
  std::vector<double> got = grad.log_slopes;
  got.insert(got.end(), grad.offset.begin(), grad.offset.end());
  CHECK(rel_err(got, fd) < 1e-6);

  auto fd_x = finite_diff_grad(
      [&](std::span<const double> p) {
        ImageTensor xx = x;
        std::copy(p.begin(), p.end(), xx.data().begin());
        double l = 0.0;
        return contract(g, sp.forward(xx, &l)) + alpha * l;
      },
      x.data());
  CHECK(rel_err(gx.data(), fd_x) < 1e-6);
}

TEST_CASE("squeeze: documented 2x2 ordering and exact inverse") {
  ImageTensor x = ImageTensor::from_data(1, 2, 2, {1.0, 2.0, 3.0, 4.0});  // a b / c d
  ImageTensor y = squeeze(x);
  CHECK(y.channels() == 4);
  CHECK(y.height() == 1);
  CHECK(y.width() == 1);
  CHECK(y.at(0, 0, 0) == 1.0);
  CHECK(y.at(1, 0, 0) == 2.0);
  CHECK(y.at(2, 0, 0) == 3.0);
  CHECK(y.at(3, 0, 0) == 4.0);

  std::mt19937 rng(41);
  ImageTensor big = random_tensor(3, 6, 8, rng);
  CHECK(max_abs_diff(unsqueeze(squeeze(big)), big) == 0.0);
  CHECK_THROWS_AS(squeeze(ImageTensor(1, 3, 4)), std::invalid_argument);
  CHECK_THROWS_AS(unsqueeze(ImageTensor(3, 2, 2)), std::invalid_argument);
}

TEST_CASE("split and concat are exact inverses") {
  std::mt19937 rng(43);
  ImageTensor x = random_tensor(6, 3, 5, rng);
  auto [a, b] = split_channels(x);
  CHECK(a.channels() == 3);
  CHECK(b.channels() == 3);
  CHECK(max_abs_diff(concat_channels(a, b), x) == 0.0);
  CHECK_THROWS_AS(split_channels(ImageTensor(3, 2, 2)), std::invalid_argument);
}

TEST_CASE("gaussian log density matches the closed form") {
  ImageTensor z(1, 2, 2);  // zeros
  CHECK(gaussian_logp(z) == doctest::Approx(-4.0 * 0.9189385332046727).epsilon(1e-14));
  z.at(0, 0, 0) = 2.0;
  CHECK(gaussian_logp(z) == doctest::Approx(-4.0 * 0.9189385332046727 - 2.0).epsilon(1e-14));
}
