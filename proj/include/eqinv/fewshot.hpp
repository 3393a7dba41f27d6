#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eqinv/data.hpp"
#include "eqinv/model.hpp"
#include "eqinv/random.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

/// Indices into an evaluation set. Episode label e corresponds to the
/// original class classes[e].
struct Episode {
  std::vector<std::size_t> classes;
  std::vector<std::size_t> support;
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query;
  std::vector<std::size_t> query_labels;
};

/// N classes without replacement, then K + Q images per class without
/// replacement; the first K go to the support set.
Episode sample_episode(std::span<const std::size_t> labels, std::size_t ways, std::size_t shots,
                       std::size_t queries, Rng& rng);

struct LogRegOptions {
  double inverse_reg = 1.0;  ///< C in C·mean NLL + ½‖W‖²
  double tolerance = 1e-6;   ///< on the gradient norm
  std::size_t max_iterations = 1000;
  std::size_t history = 10;
  friend bool operator==(const LogRegOptions&, const LogRegOptions&) = default;
};

/// Multinomial logistic regression, bias unregularized.
struct LinearClassifier {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weight;  ///< classes × dim
  std::vector<double> bias;
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;  ///< every training row was identical

  std::vector<double> logits(std::span<const double> x) const;
  /// Arg max of the logits, lowest index on ties.
  std::size_t predict(std::span<const double> x) const;
};

/// Fits by L-BFGS from zero weights. Deterministic in its inputs.
LinearClassifier fit_linear_classifier(const Tensor<double>& x, std::span<const std::size_t> labels,
                                       std::size_t classes, const LogRegOptions& options = {});

/// Rows divided by their L2 norm; zero rows stay zero.
Tensor<double> l2_normalize_rows(const Tensor<double>& x);

struct EvalConfig {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t num_tasks = 600;
  std::uint64_t seed = 0;
  LogRegOptions logreg;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t queries = 0;
  std::size_t num_tasks = 0;
  std::uint64_t seed = 0;
  std::size_t degenerate_episodes = 0;
  std::string config;  ///< effective run configuration echo

  /// Percent, "NN.NN ± C.CC".
  std::string summary() const;
  std::string to_json() const;
};

/// mean and 1.96 · sample std (n − 1) / sqrt(n). ci95 is 0 for one value.
void summarize(EvalReport& report);

/// Accuracy of one episode given precomputed embeddings of the whole set.
/// Rows are normalized before fitting.
double evaluate_episode(const Tensor<double>& embeddings, const Episode& episode,
                        const LogRegOptions& options = {}, bool* degenerate = nullptr);

/// Episodes over precomputed embeddings. Episode i draws from stream i of
/// the seed, so results do not depend on the number of threads.
EvalReport evaluate_embeddings(const Tensor<double>& embeddings,
                               std::span<const std::size_t> labels, const EvalConfig& config);

/// Backbone embeddings of every image, computed in chunks.
template <typename T>
Tensor<double> embed_dataset(const Model<T>& model, const LabeledDataset& dataset,
                             std::size_t chunk = 256);

template <typename T>
EvalReport evaluate(const Model<T>& model, const LabeledDataset& dataset,
                    const EvalConfig& config) {
  return evaluate_embeddings(embed_dataset(model, dataset), dataset.labels, config);
}

}  // namespace eqinv
