#include <doctest.h>

#include <cmath>
#include <set>

#include "eqinv/error.hpp"
#include "eqinv/fewshot.hpp"
#include "oracles/oracles.hpp"

using namespace eqinv;

namespace {

// N classes of `per` rows around orthogonal-ish random centers, spread sigma.
Tensor<double> clusters(std::size_t classes, std::size_t per, std::size_t dim, double sigma,
                        std::vector<std::size_t>& labels, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& c : centers) {
    for (auto& x : c) x = normal(rng);
  }
  Tensor<double> x({classes * per, dim});
  labels.clear();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      auto row = x.row(c * per + i);
      for (std::size_t d = 0; d < dim; ++d) row[d] = centers[c][d] + sigma * normal(rng);
      labels.push_back(c);
    }
  }
  return x;
}

}  // namespace

TEST_CASE("episode layout") {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 20; ++c) {
    for (int i = 0; i < 30; ++i) labels.push_back(c);
  }
  Rng rng = make_rng(1, 0);
  for (int t = 0; t < 50; ++t) {
    const Episode ep = sample_episode(labels, 5, 1, 15, rng);
    CHECK(ep.classes.size() == 5);
    CHECK(std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size() == 5);
    CHECK(ep.support.size() == 5);
    CHECK(ep.query.size() == 75);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end());
    std::set<std::size_t> q(ep.query.begin(), ep.query.end());
    CHECK(q.size() == 75);
    for (auto i : s) CHECK(q.count(i) == 0);
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      CHECK(labels[ep.query[i]] == ep.classes[ep.query_labels[i]]);
    }
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      CHECK(labels[ep.support[i]] == ep.classes[ep.support_labels[i]]);
    }
  }
  CHECK_THROWS_AS(sample_episode(labels, 5, 1, 0, rng), ArgumentError);
  CHECK_THROWS_AS(sample_episode(labels, 21, 1, 15, rng), ArgumentError);
  CHECK_THROWS_AS(sample_episode(labels, 5, 20, 15, rng), ArgumentError);
}

TEST_CASE("well separated clusters are classified perfectly") {
  std::vector<std::size_t> labels;
  const Tensor<double> x = clusters(10, 20, 16, 0.1, labels, 2);
  EvalConfig cfg;
  cfg.num_tasks = 100;
  const EvalReport r = evaluate_embeddings(x, labels, cfg);
  CHECK(r.mean == 1.0);
  CHECK(r.ci95 == 0.0);
  CHECK(r.accuracies.size() == 100);
}

TEST_CASE("constant embeddings score chance") {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 10; ++c) {
    for (int i = 0; i < 20; ++i) labels.push_back(c);
  }
  Tensor<double> x({labels.size(), 8}, 0.5);
  EvalConfig cfg;
  cfg.num_tasks = 600;
  const EvalReport r = evaluate_embeddings(x, labels, cfg);
  CHECK(r.degenerate_episodes == 600);
  CHECK(std::abs(r.mean - 0.2) <= r.ci95 + 1e-12);
}

TEST_CASE("summary statistics") {
  EvalReport r;
  r.accuracies = {1.0, 0.0};
  summarize(r);
  CHECK(r.mean == 0.5);
  CHECK(std::abs(r.ci95 - 0.980) < 1e-6);
  const auto [m, ci] = oracle::mean_ci95(r.accuracies);
  CHECK(std::abs(ci - r.ci95) < 1e-15);
  CHECK(m == r.mean);

  r.accuracies = std::vector<double>(7, 0.8);
  summarize(r);
  CHECK(r.ci95 < 1e-12);
  r.accuracies = {0.75};
  summarize(r);
  CHECK(r.ci95 == 0.0);

  r.accuracies = {0.5, 0.7};
  summarize(r);
  CHECK(r.summary() == "60.00 ± 19.60");
  CHECK(r.to_json().find("\"mean\"") != std::string::npos);
}

TEST_CASE("logistic regression separates a line") {
  Tensor<double> x({6, 1});
  const std::vector<std::size_t> y = {0, 0, 0, 1, 1, 1};
  const double v[] = {-3, -2, -1, 1, 2, 3};
  for (std::size_t i = 0; i < 6; ++i) x.at(i, 0) = v[i];
  const LinearClassifier clf = fit_linear_classifier(x, y, 2);
  CHECK(clf.converged);
  for (std::size_t i = 0; i < 6; ++i) CHECK(clf.predict(x.row(i)) == y[i]);
  const double probe = 0.4;
  CHECK(clf.predict(std::span<const double>(&probe, 1)) == 1);
  // regularization keeps the weights finite even on separable data
  for (double w : clf.weight) CHECK(std::abs(w) < 10);
}

TEST_CASE("one shot on orthogonal supports") {
  Tensor<double> x({5, 5});
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 5; ++i) {
    x.at(i, i) = 1;
    y.push_back(i);
  }
  const LinearClassifier clf = fit_linear_classifier(x, y, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> q(5, 0.1);
    q[i] = 0.9;
    CHECK(clf.predict(q) == i);
  }
}

TEST_CASE("episode accuracy ignores row scale") {
  std::vector<std::size_t> labels;
  const Tensor<double> x = clusters(6, 20, 10, 1.0, labels, 3);
  Tensor<double> scaled = x;
  for (std::size_t i = 0; i < scaled.dim(0); ++i) {
    const double s = 1.0 + static_cast<double>(i % 7);
    for (auto& v : scaled.row(i)) v *= s;
  }
  Rng rng = make_rng(4, 0);
  for (int t = 0; t < 10; ++t) {
    const Episode ep = sample_episode(labels, 5, 1, 15, rng);
    CHECK(evaluate_episode(x, ep) == evaluate_episode(scaled, ep));
  }
  const Tensor<double> n = l2_normalize_rows(scaled);
  for (std::size_t i = 0; i < n.dim(0); ++i) {
    double s = 0;
    for (double v : n.row(i)) s += v * v;
    CHECK(std::abs(s - 1) < 1e-12);
  }
  Tensor<double> z({1, 3});
  CHECK(l2_normalize_rows(z) == z);
}

TEST_CASE("evaluation is deterministic in its seed") {
  std::vector<std::size_t> labels;
  const Tensor<double> x = clusters(8, 20, 12, 1.5, labels, 5);
  EvalConfig cfg;
  cfg.num_tasks = 40;
  cfg.seed = 11;
  const EvalReport a = evaluate_embeddings(x, labels, cfg);
  const EvalReport b = evaluate_embeddings(x, labels, cfg);
  CHECK(a.accuracies == b.accuracies);
  cfg.seed = 12;
  CHECK(evaluate_embeddings(x, labels, cfg).accuracies != a.accuracies);
  CHECK(a.mean > 0.2);
  CHECK(a.mean < 1.0);
}
