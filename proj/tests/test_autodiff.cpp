#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mmt/autodiff.hpp"
#include "mmt/errors.hpp"
#include "support.hpp"

using namespace mmt;
using mmt::test::random_matrix;
using T = Tensor<double>;
using M = Matrix<double>;

namespace {

M mat(std::initializer_list<std::initializer_list<double>> rows) {
  M m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

M naive_matmul(const M& a, const M& b) {
  M c = M::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

}  // namespace

TEST_CASE("matmul identity, annihilator and loop oracle") {
  const auto a = mat({{1, 2}, {3, 4}});
  CHECK(matmul(T::constant(M::Identity(2, 2)), T::constant(a)).value() == a);
  auto rng = test::rng_for(3);
  const M any = random_matrix(rng, 2, 5);
  CHECK(matmul(T::constant(M::Zero(2, 2)), T::constant(any)).value().isZero(0.0));

  const M x = random_matrix(rng, 3, 4), y = random_matrix(rng, 4, 2);
  const M got = matmul(T::constant(x), T::constant(y)).value();
  CHECK((got - naive_matmul(x, y)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(T::constant(M::Zero(2, 3)), T::constant(M::Zero(2, 3)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul gradients are upstream b^T and a^T upstream") {
  auto rng = test::rng_for(5);
  auto a = T::parameter(random_matrix(rng, 3, 4));
  auto b = T::parameter(random_matrix(rng, 4, 2));
  const M w = random_matrix(rng, 3, 2);
  backward(weighted_sum(matmul(a, b), w));
  CHECK((a.grad() - w * b.value().transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.grad() - a.value().transpose() * w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sigmoid values") {
  CHECK(sigmoid(T::scalar(0.0)).item() == 0.5);
  CHECK(std::abs(sigmoid(T::scalar(1e3)).item() - 1.0) < 1e-12);
  CHECK(std::abs(sigmoid(T::scalar(1.0)).item() - 1.0 / (1.0 + std::exp(-1.0))) < 1e-15);
  CHECK(std::abs(sigmoid(T::scalar(1.0)).item() - 0.7310585786) < 1e-10);
  CHECK(std::isfinite(sigmoid(T::scalar(-1e3)).item()));
}

TEST_CASE("sigmoid outputs lie strictly inside (0, 1) for moderate inputs") {
  auto rng = test::rng_for(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = sigmoid(T::constant(random_matrix(rng, 4, 5, 10.0))).value();
    CHECK(s.minCoeff() > 0.0);
    CHECK(s.maxCoeff() < 1.0);
  }
}

TEST_CASE("softmax rows") {
  CHECK(softmax_rows(T::constant(mat({{0, 0}}))).value() == mat({{0.5, 0.5}}));
  for (double c : {-700.0, 0.0, 3.5, 1e4}) {
    const auto s = softmax_rows(T::constant(mat({{c, c, c}}))).value();
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(s(0, j) - 1.0 / 3.0) < 1e-15);
  }
  const auto s = softmax_rows(T::constant(mat({{1, 2, 3}}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s(0, j) - std::exp(j + 1.0) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to one (property)") {
  auto rng = test::rng_for(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = test::uniform_int(rng, 1, 6), cols = test::uniform_int(rng, 1, 9);
    const auto s = softmax_rows(T::constant(random_matrix(rng, rows, cols, 20.0))).value();
    for (Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("log_softmax equals log of softmax") {
  auto rng = test::rng_for(17);
  const M x = random_matrix(rng, 3, 7, 3.0);
  const M ls = log_softmax_rows(T::constant(x)).value();
  const M s = softmax_rows(T::constant(x)).value();
  CHECK((ls - s.array().log().matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer norm") {
  const auto ones = T::constant(M::Ones(1, 4)), zeros = T::constant(M::Zero(1, 4));
  const auto c = layer_norm(T::constant(M::Constant(1, 4, 2.5)), ones, zeros, 1e-5).value();
  CHECK(c.cwiseAbs().maxCoeff() == 0.0);

  const double eps = 1e-12;
  const auto g2 = T::constant(M::Ones(1, 2)), b2 = T::constant(M::Zero(1, 2));
  const auto n = layer_norm(T::constant(mat({{1, -1}})), g2, b2, eps).value();
  CHECK(std::abs(n(0, 0) - 1.0 / std::sqrt(1.0 + eps)) < 1e-12);
  CHECK(std::abs(n(0, 1) + 1.0 / std::sqrt(1.0 + eps)) < 1e-12);

  auto rng = test::rng_for(19);
  const M x = random_matrix(rng, 3, 6, 2.0);
  const M gain = random_matrix(rng, 1, 6), bias = random_matrix(rng, 1, 6);
  const M got = layer_norm(T::constant(x), T::constant(gain), T::constant(bias), 1e-5).value();
  for (Index i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (Index j = 0; j < 6; ++j) mean += x(i, j);
    mean /= 6.0;
    double var = 0.0;
    for (Index j = 0; j < 6; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= 6.0;
    for (Index j = 0; j < 6; ++j) {
      const double want = (x(i, j) - mean) / std::sqrt(var + 1e-5) * gain(0, j) + bias(0, j);
      CHECK(std::abs(got(i, j) - want) < 1e-10);
    }
  }
}

TEST_CASE("embedding lookup") {
  auto table = T::parameter(M::Identity(4, 4));
  const std::vector<int> first{0};
  CHECK(embedding_lookup(table, first).value() == M::Identity(4, 4).row(0));

  const std::vector<int> ids{2, 2};
  const auto out = embedding_lookup(table, ids);
  CHECK(out.value().row(0) == out.value().row(1));
  backward(sum(out));
  CHECK(table.grad().row(2) == M::Constant(1, 4, 2.0));
  CHECK(table.grad().row(0).isZero(0.0));

  auto rng = test::rng_for(23);
  const M big = random_matrix(rng, 9, 3);
  const auto gather_ids = test::random_ids(rng, 12, 0, 8);
  const auto got = embedding_lookup(T::constant(big), gather_ids).value();
  for (std::size_t t = 0; t < gather_ids.size(); ++t) {
    CHECK(got.row(static_cast<Index>(t)) == big.row(gather_ids[t]));
  }
}

TEST_CASE("embedding lookup out of range names id and vocabulary") {
  const std::vector<int> ids{7};
  try {
    embedding_lookup(T::constant(M::Zero(4, 2)), ids);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('7') != std::string::npos);
    CHECK(msg.find('4') != std::string::npos);
  }
}

TEST_CASE("rowwise max pool") {
  const M single = mat({{1, -2, 3}});
  CHECK(rowwise_max_pool(T::constant(single)).value() == single);
  const M same = mat({{4, 5}, {4, 5}, {4, 5}});
  CHECK(rowwise_max_pool(T::constant(same)).value() == mat({{4, 5}}));
  CHECK(rowwise_max_pool(T::constant(mat({{1, 5}, {3, 2}}))).value() == mat({{3, 5}}));

  auto p = T::parameter(same);
  backward(sum(rowwise_max_pool(p)));
  CHECK(p.grad() == mat({{1, 1}, {0, 0}, {0, 0}}));

  CHECK_THROWS_AS(rowwise_max_pool(T::constant(M(0, 3))), ContractError);
}

TEST_CASE("dropout") {
  auto rng = test::rng_for(29);
  const auto x = T::constant(random_matrix(rng, 10, 10));
  CounterStream stream(42);
  CHECK(dropout(x, 0.0, true, stream).value() == x.value());
  CHECK(dropout(x, 0.5, false, stream).value() == x.value());

  const auto ones = T::constant(M::Ones(1, 100000));
  const auto d = dropout(ones, 0.3, true, stream).value();
  const double zeros = static_cast<double>((d.array() == 0.0).count()) / 100000.0;
  CHECK(std::abs(zeros - 0.3) < 0.01);
  for (Index i = 0; i < d.size(); ++i) {
    if (d.data()[i] != 0.0) CHECK(std::abs(d.data()[i] - 1.0 / 0.7) < 1e-12);
  }

  CHECK_THROWS_AS(dropout(x, 1.0, true, stream), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, stream), ConfigError);
}

TEST_CASE("dropout replays from the same counter") {
  const auto x = T::constant(M::Ones(3, 50));
  CounterStream a(7, 100), b(7, 100);
  CHECK(dropout(x, 0.4, true, a).value() == dropout(x, 0.4, true, b).value());
}

TEST_CASE("backward basics") {
  auto x = T::parameter(mat({{3}}));
  backward(cwise_product(x, x));
  CHECK(x.grad()(0, 0) == 6.0);

  auto y = T::parameter(M::Zero(2, 3));
  backward(sum(sigmoid(y)));
  CHECK(y.grad() == M::Constant(2, 3, 0.25));

  CHECK_THROWS_AS(backward(sigmoid(y)), ContractError);
}

TEST_CASE("tensors off the loss path get no gradient") {
  auto a = T::parameter(M::Ones(2, 2));
  auto unused = T::parameter(M::Ones(2, 2));
  auto side = sum(unused);
  backward(sum(cwise_product(a, a)));
  CHECK(a.has_grad());
  CHECK((!unused.has_grad() || unused.grad().isZero(0.0)));
  (void)side;
}

TEST_CASE("no-grad guard builds no graph") {
  auto a = T::parameter(M::Ones(2, 2));
  T out;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    out = sum(a);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(out.requires_grad());
}

TEST_CASE("backward is linear in the loss") {
  auto rng = test::rng_for(31);
  auto x = T::parameter(random_matrix(rng, 3, 3));
  const M w1 = random_matrix(rng, 3, 3), w2 = random_matrix(rng, 3, 3);
  auto f = [&] { return weighted_sum(sigmoid(matmul(x, x)), w1); };
  auto g = [&] { return weighted_sum(softmax_rows(x), w2); };
  x.zero_grad();
  backward(f());
  const M gf = x.grad();
  x.zero_grad();
  backward(g());
  const M gg = x.grad();
  x.zero_grad();
  backward(scale(f(), 2.0) + scale(g(), -0.5));
  CHECK((x.grad() - (2.0 * gf - 0.5 * gg)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random compositions pass the finite-difference check (property)") {
  auto rng = test::rng_for(37);
  for (int trial = 0; trial < 25; ++trial) {
    ParameterSet<double> params;
    const Index r = test::uniform_int(rng, 1, 4), c = test::uniform_int(rng, 2, 4);
    auto a = params.add("a", random_matrix(rng, r, c));
    auto b = params.add("b", random_matrix(rng, c, c));
    auto gain = params.add("gain", random_matrix(rng, 1, c));
    auto bias = params.add("bias", random_matrix(rng, 1, c));
    auto table = params.add("table", random_matrix(rng, 5, c));
    const M w = random_matrix(rng, r, c);
    const auto ids = test::random_ids(rng, static_cast<std::size_t>(r), 0, 4);
    const int variant = trial % 5;
    auto loss = [&]() -> T {
      auto h = matmul(a, b) + embedding_lookup(table, ids);
      switch (variant) {
        case 0:
          h = sigmoid(h);
          break;
        case 1:
          h = layer_norm(h, gain, bias, 1e-5);
          break;
        case 2:
          h = log_softmax_rows(h);
          break;
        case 3:
          h = cwise_product(softmax_rows(h), add_rowwise(h, bias));
          break;
        default: {
          const auto pooled = rowwise_max_pool(h);
          h = mul_rowwise(a, pooled);
        }
      }
      return weighted_sum(h, w);
    };
    const auto res = test::check_gradients(params, loss);
    INFO("variant " << variant << " worst " << res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    auto rng = test::rng_for(41);
    auto a = T::parameter(random_matrix(rng, 4, 4));
    auto loss = sum(softmax_rows(matmul(a, a)));
    backward(loss);
    return std::pair{loss.item(), M(a.grad())};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
