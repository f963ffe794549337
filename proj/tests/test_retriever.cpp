#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/retriever.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mmt;

namespace {

FeatureStore random_store(Engine& rng, std::size_t n, Index d, bool duplicates) {
  FeatureStore store(d);
  Matrix<float> prev;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix<float> row = test::random_matrix<float>(rng, 1, d);
    // Exact duplicates and small-integer rows create score ties.
    if (duplicates && i > 0 && test::uniform_int(rng, 0, 3) == 0) row = prev;
    if (duplicates && test::uniform_int(rng, 0, 5) == 0) row = row.array().round();
    store.add("id" + std::to_string(i), row);
    prev = row;
  }
  return store;
}

}  // namespace

TEST_CASE("score") {
  const std::vector<double> a{1, 2, 3}, b{4, -5, 6};
  CHECK(score(a, b) == 12.0);
  const std::vector<double> c{1, 2};
  CHECK_THROWS_AS(score(a, c), ShapeError);
}

TEST_CASE("top-K equals a brute-force sort (property)") {
  auto rng = test::rng_for(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(test::uniform_int(rng, 1, trial < 20 ? 1000 : 120));
    const Index d = test::uniform_int(rng, 1, 8);
    const auto store = random_store(rng, n, d, trial % 2 == 0);
    RowVector<double> q = test::random_matrix(rng, 1, d);
    if (trial % 7 == 0) q = q.array().round();
    const auto k = static_cast<std::size_t>(test::uniform_int(rng, 1, static_cast<long>(n)));
    const auto got = retrieve_topk_rows(q, store.matrix(), k);
    CHECK(got == test::oracle_topk(q, store.matrix(), k));
    const auto ids = retrieve_topk(q, store, k);
    REQUIRE(ids.size() == k);
    for (std::size_t i = 0; i < k; ++i) CHECK(ids[i] == store.ids()[got[i]]);
  }
}

TEST_CASE("top-K argument checks") {
  auto rng = test::rng_for(22);
  const auto store = random_store(rng, 4, 3, false);
  const RowVector<double> q = test::random_matrix(rng, 1, 3);
  CHECK_THROWS_AS(retrieve_topk(q, store, 0), ConfigError);
  CHECK_THROWS_AS(retrieve_topk(q, store, 5), ConfigError);
  const RowVector<double> wrong = test::random_matrix(rng, 1, 2);
  CHECK_THROWS_AS(retrieve_topk(wrong, store, 1), ShapeError);
}

TEST_CASE("recall matches per-query brute force and grows with K (property)") {
  auto rng = test::rng_for(23);
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = static_cast<std::size_t>(test::uniform_int(rng, 2, 60));
    const Index d = test::uniform_int(rng, 1, 6);
    const auto store = random_store(rng, n, d, trial % 2 == 0);
    const auto nq = test::uniform_int(rng, 1, 30);
    const Matrix<double> queries = test::random_matrix(rng, nq, d);
    std::vector<std::string> gold;
    std::vector<std::size_t> gold_rows;
    for (long i = 0; i < nq; ++i) {
      gold_rows.push_back(static_cast<std::size_t>(test::uniform_int(rng, 0, static_cast<long>(n) - 1)));
      gold.push_back(store.ids()[gold_rows.back()]);
    }
    double prev = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      std::size_t hits = 0;
      for (long i = 0; i < nq; ++i) {
        const RowVector<double> q = queries.row(i);
        hits += test::oracle_hit(q, store.matrix(), gold_rows[static_cast<std::size_t>(i)], k) ? 1 : 0;
      }
      const double r = recall_at_k(queries, gold, store, k);
      CHECK(r == static_cast<double>(hits) / static_cast<double>(nq));
      CHECK(r >= prev);
      prev = r;
    }
    CHECK(prev == 1.0);
  }
}

TEST_CASE("recall on a two-pair toy store") {
  FeatureStore store(2);
  store.add("left", RowVector<float>{{1.0f, 0.0f}});
  store.add("right", RowVector<float>{{0.0f, 1.0f}});
  const Matrix<double> queries{{2.0, 0.1}, {-0.3, 1.0}};
  const std::vector<std::string> gold{"left", "right"};
  CHECK(recall_at_k(queries, gold, store, 1) == 1.0);
  const std::vector<std::string> swapped{"right", "left"};
  CHECK(recall_at_k(queries, swapped, store, 1) == 0.0);
  CHECK(recall_at_k(queries, swapped, store, 2) == 1.0);
  const std::vector<std::string> missing{"left", "nowhere"};
  CHECK_THROWS_AS(recall_at_k(queries, missing, store, 1), DataError);
}

TEST_CASE("contrastive loss matches a direct oracle and finite differences") {
  auto rng = test::rng_for(24);
  const Index b = 4, d = 3;
  const Matrix<double> text = test::random_matrix(rng, b, d);
  const Matrix<double> img = test::random_matrix(rng, b, d);
  const double got = contrastive_loss(Tensor<double>::constant(text), img).item();

  const Matrix<double> s = text * img.transpose();
  double rows = 0.0, cols = 0.0;
  for (Index i = 0; i < b; ++i) {
    double zr = 0.0, zc = 0.0;
    for (Index j = 0; j < b; ++j) {
      zr += std::exp(s(i, j));
      zc += std::exp(s(j, i));
    }
    rows += std::log(zr) - s(i, i);
    cols += std::log(zc) - s(i, i);
  }
  const double want = 0.5 * (rows + cols) / static_cast<double>(b);
  CHECK(std::abs(got - want) < 1e-12);

  ParameterSet<double> params;
  const auto t = params.add("text", text);
  const auto res = test::check_gradients(params, [&] { return contrastive_loss(t, img); });
  CHECK(res.max_rel_error < 1e-6);

  CHECK_THROWS_AS(contrastive_loss(Tensor<double>::constant(text.topRows(1)), Matrix<double>(img.topRows(1))),
                  ContractError);
}

TEST_CASE("retriever encoder and pretraining") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.d_ffn = 16;
  cfg.n_heads = 2;
  cfg.dropout = 0.0;
  cfg.vocab_size = 20;
  cfg.max_len = 16;
  Retriever<double> retriever(cfg, 4, 3);
  CHECK(retriever.retrieval_dim() == 4);
  const std::vector<int> sent{5, 6, 7};
  const auto e = retriever.embed(sent);
  CHECK(e.cols() == 4);
  const auto pooled = retriever.pool(sent).value();
  CHECK((retriever.project(Tensor<double>::constant(pooled)).value() - e).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(retriever.pool(std::vector<int>{}), ContractError);

  // Eight sentences, each paired with its own orthogonal-ish image.
  auto rng = test::rng_for(25);
  FeatureStore store(4);
  std::vector<RetrievalPair> pairs;
  for (int i = 0; i < 8; ++i) {
    store.add("img" + std::to_string(i), test::random_matrix<float>(rng, 1, 4));
    pairs.push_back({{5 + i, 5 + (i + 3) % 8, 5 + (i + 5) % 8}, static_cast<std::size_t>(i)});
  }
  RetrieverTrainOptions opt;
  opt.epochs = 60;
  opt.batch_size = 8;
  opt.lr = 1e-2;
  const auto report = pretrain_retriever(retriever, pairs, store, opt);
  REQUIRE(report.epoch_losses.size() == 60);
  CHECK(report.epoch_losses.back() < report.epoch_losses.front());

  std::vector<std::vector<int>> sents;
  std::vector<std::string> gold;
  for (const auto& p : pairs) {
    sents.push_back(p.tokens);
    gold.push_back(store.ids()[p.feature_row]);
  }
  const auto queries = embed_sentences(retriever, sents);
  CHECK(recall_at_k(queries, gold, store, 3) >= 0.5);

  CHECK_THROWS_AS(pretrain_retriever(retriever, std::span(pairs).first(1), store, opt), ContractError);
}
