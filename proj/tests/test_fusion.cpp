#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mmt/errors.hpp"
#include "mmt/fusion.hpp"
#include "support.hpp"

using namespace mmt;
using test::random_matrix;
using T = Tensor<double>;
using M = Matrix<double>;

namespace {

FusionParams<double> make_params(Index dv, Index d, Engine& rng) {
  static std::vector<std::unique_ptr<ParameterSet<double>>> keep;
  keep.push_back(std::make_unique<ParameterSet<double>>());
  return FusionParams<double>::create(*keep.back(), dv, d, rng);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-entry gate oracle: lambda[t][j] = sig(sum_k e[k] Wg[j][k] + sum_k h[t][k] Ug[j][k]).
M gate_oracle(const M& h, const M& e, const M& wg, const M& ug) {
  M out(h.rows(), h.cols());
  for (Index t = 0; t < h.rows(); ++t) {
    for (Index j = 0; j < h.cols(); ++j) {
      double a = 0.0;
      for (Index k = 0; k < h.cols(); ++k) a += e(0, k) * wg(j, k) + h(t, k) * ug(j, k);
      out(t, j) = sig(a);
    }
  }
  return out;
}

M project_oracle(const M& z, const M& wz) {
  M out = M::Zero(z.rows(), wz.cols());
  for (Index r = 0; r < z.rows(); ++r)
    for (Index j = 0; j < wz.cols(); ++j)
      for (Index k = 0; k < z.cols(); ++k) out(r, j) += z(r, k) * wz(k, j);
  return out;
}

}  // namespace

TEST_CASE("project_image") {
  auto rng = test::rng_for(1);
  auto p = make_params(4, 4, rng);
  p.w_z.mutable_value() = M::Identity(4, 4);
  VisualFeature<double> f{random_matrix(rng, 1, 4), FeatureOrigin::kSynthetic};
  CHECK(project_image(f, p).value() == M(f.vector));

  VisualFeature<double> zero{RowVector<double>::Zero(4), FeatureOrigin::kFile};
  p = make_params(4, 6, rng);
  CHECK(project_image(zero, p).value().isZero(0.0));

  p = make_params(5, 3, rng);
  VisualFeature<double> r{random_matrix(rng, 1, 5), FeatureOrigin::kFile};
  const M want = project_oracle(M(r.vector), p.w_z.value());
  CHECK((project_image(r, p).value() - want).cwiseAbs().maxCoeff() < 1e-12);

  VisualFeature<double> wrong{RowVector<double>::Zero(3), FeatureOrigin::kFile};
  CHECK_THROWS_AS(project_image(wrong, p), ShapeError);
}

TEST_CASE("compute_gate") {
  auto rng = test::rng_for(2);
  auto p = make_params(3, 4, rng);
  p.w_gate.mutable_value().setZero();
  p.u_gate.mutable_value().setZero();
  const auto g0 = compute_gate(T::constant(M::Zero(5, 4)), T::constant(M::Zero(1, 4)), p).value();
  CHECK(g0 == M::Constant(5, 4, 0.5));

  p.u_gate.mutable_value() = M::Constant(4, 4, 1e3 / 4.0);
  const auto g1 = compute_gate(T::constant(M::Ones(3, 4)), T::constant(M::Zero(1, 4)), p).value();
  CHECK((g1.array() - 1.0).abs().maxCoeff() < 1e-12);

  auto q = make_params(2, 2, rng);
  const M h = random_matrix(rng, 2, 2), e = random_matrix(rng, 1, 2);
  const auto got = compute_gate(T::constant(h), T::constant(e), q).value();
  CHECK((got - gate_oracle(h, e, q.w_gate.value(), q.u_gate.value())).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gate entries lie in (0, 1) (property)") {
  auto rng = test::rng_for(3);
  for (int trial = 0; trial < 40; ++trial) {
    const Index d = test::uniform_int(rng, 1, 8), t = test::uniform_int(rng, 1, 6);
    auto p = make_params(3, d, rng);
    const auto g = compute_gate(T::constant(random_matrix(rng, t, d)), T::constant(random_matrix(rng, 1, d)), p);
    const auto rec = make_gate_record(7, 2, g);
    CHECK(rec.lambda.minCoeff() > 0.0);
    CHECK(rec.lambda.maxCoeff() < 1.0);
    CHECK(rec.length() == t);
    CHECK(rec.dim() == d);
  }
}

TEST_CASE("gated_fuse") {
  auto rng = test::rng_for(4);
  const M h = random_matrix(rng, 3, 4), e = random_matrix(rng, 1, 4);
  CHECK(gated_fuse(T::constant(h), T::constant(e), T::constant(M::Zero(3, 4))).value() == h);
  const auto ones = gated_fuse(T::constant(h), T::constant(e), T::constant(M::Ones(3, 4))).value();
  for (Index t = 0; t < 3; ++t) CHECK(ones.row(t) == h.row(t) + e);

  const M h2{{1.0, -2.0}, {0.5, 3.0}};
  const M e2{{4.0, -1.0}};
  const M l2{{0.25, 0.5}, {1.0, 0.0}};
  const M want{{1.0 + 0.25 * 4.0, -2.0 + 0.5 * -1.0}, {0.5 + 4.0, 3.0}};
  CHECK(gated_fuse(T::constant(h2), T::constant(e2), T::constant(l2)).value() == want);
}

TEST_CASE("gated_fuse row i depends only on row i of H_text and the gate") {
  auto rng = test::rng_for(5);
  auto p = make_params(3, 4, rng);
  const M h = random_matrix(rng, 4, 4), e = random_matrix(rng, 1, 4);
  const auto fuse = [&](const M& hh) {
    const auto eh = T::constant(e);
    return gated_fuse(T::constant(hh), eh, compute_gate(T::constant(hh), eh, p)).value();
  };
  const M base = fuse(h);
  M h_changed = h;
  h_changed.row(2) += random_matrix(rng, 1, 4);
  const M changed = fuse(h_changed);
  for (Index t = 0; t < 4; ++t) {
    if (t != 2) CHECK(changed.row(t) == base.row(t));
  }
  CHECK(changed.row(2) != base.row(2));
}

TEST_CASE("rmmt_fuse") {
  auto rng = test::rng_for(6);
  auto p = make_params(5, 4, rng);
  const M h = random_matrix(rng, 3, 4);
  const M one = random_matrix(rng, 1, 5);

  const auto [h1, g1] = rmmt_fuse(T::constant(h), one, p);
  const auto e = project_images(one, p);
  const auto g_ref = compute_gate(T::constant(h), e, p);
  CHECK(g1.value() == g_ref.value());
  CHECK(h1.value() == gated_fuse(T::constant(h), e, g_ref).value());

  M copies(4, 5);
  for (Index k = 0; k < 4; ++k) copies.row(k) = one;
  const auto [hc, gc] = rmmt_fuse(T::constant(h), copies, p);
  CHECK(hc.value() == h1.value());
  CHECK(gc.value() == g1.value());

  const M three = random_matrix(rng, 3, 5);
  const M proj = project_oracle(three, p.w_z.value());
  M pooled(1, 4);
  for (Index j = 0; j < 4; ++j) pooled(0, j) = std::max({proj(0, j), proj(1, j), proj(2, j)});
  const M gate = gate_oracle(h, pooled, p.w_gate.value(), p.u_gate.value());
  M want = h;
  for (Index t = 0; t < 3; ++t)
    for (Index j = 0; j < 4; ++j) want(t, j) += gate(t, j) * pooled(0, j);
  const auto [h3, g3] = rmmt_fuse(T::constant(h), three, p);
  CHECK((h3.value() - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g3.value() - gate).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(rmmt_fuse(T::constant(h), M(0, 5), p), ContractError);
}

TEST_CASE("rmmt_fuse is invariant to the order of retrieved features (property)") {
  auto rng = test::rng_for(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = test::uniform_int(rng, 2, 6);
    auto p = make_params(4, 4, rng);
    const M h = random_matrix(rng, 3, 4);
    const M feats = random_matrix(rng, k, 4);
    std::vector<Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    M shuffled(k, 4);
    for (Index r = 0; r < k; ++r) shuffled.row(r) = feats.row(perm[static_cast<std::size_t>(r)]);
    CHECK(rmmt_fuse(T::constant(h), feats, p).first.value() == rmmt_fuse(T::constant(h), shuffled, p).first.value());
  }
}

TEST_CASE("noise features") {
  Engine rng(8);
  const Index n = 1000000;
  const auto f = sample_noise_feature<double>(rng, n);
  CHECK(f.origin == FeatureOrigin::kNoise);
  const double mean = f.vector.mean();
  const double var = (f.vector.array() - mean).square().sum() / static_cast<double>(n);
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);

  Engine a(99), b(99);
  CHECK(sample_noise_feature<double>(a, 16).vector == sample_noise_feature<double>(b, 16).vector);
}
