#include "eqinv/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>

#include "eqinv/error.hpp"
#include "json.hpp"

namespace eqinv {

Episode sample_episode(std::span<const std::size_t> labels, std::size_t ways, std::size_t shots,
                       std::size_t queries, Rng& rng) {
  if (ways == 0 || shots == 0) throw ArgumentError("episodes need at least one way and one shot");
  if (queries == 0) throw ArgumentError("episodes need at least one query per class");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> eligible;
  std::vector<std::size_t> eligible_class;
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() >= shots + queries) {
      eligible.push_back(&idx);
      eligible_class.push_back(cls);
    }
  }
  if (eligible.size() < ways) {
    throw ArgumentError("only " + std::to_string(eligible.size()) + " classes have " +
                        std::to_string(shots + queries) + " images, episode needs " +
                        std::to_string(ways));
  }
  Episode ep;
  const auto picks = sample_without_replacement(rng, eligible.size(), ways);
  for (std::size_t e = 0; e < ways; ++e) {
    const auto& pool = *eligible[picks[e]];
    ep.classes.push_back(eligible_class[picks[e]]);
    const auto chosen = sample_without_replacement(rng, pool.size(), shots + queries);
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      if (j < shots) {
        ep.support.push_back(pool[chosen[j]]);
        ep.support_labels.push_back(e);
      } else {
        ep.query.push_back(pool[chosen[j]]);
        ep.query_labels.push_back(e);
      }
    }
  }
  return ep;
}

std::vector<double> LinearClassifier::logits(std::span<const double> x) const {
  if (x.size() != dim) throw ArgumentError("classifier input has the wrong dimension");
  std::vector<double> out(bias);
  for (std::size_t c = 0; c < classes; ++c) {
    const double* w = weight.data() + c * dim;
    for (std::size_t j = 0; j < dim; ++j) out[c] += w[j] * x[j];
  }
  return out;
}

std::size_t LinearClassifier::predict(std::span<const double> x) const {
  const auto l = logits(x);
  return static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
}

namespace {

// C·mean NLL + ½‖W‖² over theta = [W (classes × dim), b (classes)].
struct LogRegObjective {
  const Tensor<double>& x;
  std::span<const std::size_t> labels;
  std::size_t classes;
  double c;

  double operator()(const std::vector<double>& theta, std::vector<double>& grad) const {
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    const double* w = theta.data();
    const double* b = theta.data() + classes * d;
    grad.assign(theta.size(), 0.0);
    double* gw = grad.data();
    double* gb = grad.data() + classes * d;
    std::vector<double> logit(classes);
    double nll = 0.0;
    const double scale = c / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = x.row(i);
      double mx = -INFINITY;
      for (std::size_t k = 0; k < classes; ++k) {
        double s = b[k];
        for (std::size_t j = 0; j < d; ++j) s += w[k * d + j] * xi[j];
        logit[k] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < classes; ++k) sum += std::exp(logit[k] - mx);
      const double lse = mx + std::log(sum);
      nll += lse - logit[labels[i]];
      for (std::size_t k = 0; k < classes; ++k) {
        const double r = std::exp(logit[k] - lse) - (k == labels[i] ? 1.0 : 0.0);
        gb[k] += scale * r;
        for (std::size_t j = 0; j < d; ++j) gw[k * d + j] += scale * r * xi[j];
      }
    }
    double reg = 0.0;
    for (std::size_t k = 0; k < classes * d; ++k) {
      reg += w[k] * w[k];
      gw[k] += w[k];
    }
    return scale * nll + 0.5 * reg;
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

LinearClassifier fit_linear_classifier(const Tensor<double>& x, std::span<const std::size_t> labels,
                                       std::size_t classes, const LogRegOptions& opt) {
  if (x.rank() != 2 || x.dim(0) != labels.size() || x.dim(0) == 0) {
    throw ArgumentError("classifier needs one label per embedding row");
  }
  if (classes == 0) throw ArgumentError("classifier needs at least one class");
  for (std::size_t l : labels) {
    if (l >= classes) throw ArgumentError("classifier label out of range");
  }
  const std::size_t d = x.dim(1);
  LinearClassifier model;
  model.classes = classes;
  model.dim = d;
  model.degenerate = true;
  for (std::size_t i = 1; i < x.dim(0) && model.degenerate; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (x.at(i, j) != x.at(0, j)) {
        model.degenerate = false;
        break;
      }
    }
  }

  const LogRegObjective f{x, labels, classes, opt.inverse_reg};
  std::vector<double> theta(classes * (d + 1), 0.0);
  std::vector<double> grad;
  double value = f(theta, grad);
  std::deque<std::pair<std::vector<double>, std::vector<double>>> history;
  std::vector<double> dir(theta.size()), next(theta.size()), next_grad;

  std::size_t it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (std::sqrt(dot(grad, grad)) <= opt.tolerance) {
      model.converged = true;
      break;
    }
    // Two-loop recursion for dir = -H·grad.
    dir = grad;
    std::vector<double> alpha(history.size());
    for (std::size_t h = history.size(); h-- > 0;) {
      const auto& [s, y] = history[h];
      alpha[h] = dot(s, dir) / dot(y, s);
      for (std::size_t k = 0; k < dir.size(); ++k) dir[k] -= alpha[h] * y[k];
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      const double gamma = dot(s, y) / dot(y, y);
      for (auto& v : dir) v *= gamma;
    }
    for (std::size_t h = 0; h < history.size(); ++h) {
      const auto& [s, y] = history[h];
      const double beta = dot(y, dir) / dot(y, s);
      for (std::size_t k = 0; k < dir.size(); ++k) dir[k] += s[k] * (alpha[h] - beta);
    }
    for (auto& v : dir) v = -v;
    double slope = dot(grad, dir);
    if (!(slope < 0.0)) {
      history.clear();
      for (std::size_t k = 0; k < dir.size(); ++k) dir[k] = -grad[k];
      slope = -dot(grad, grad);
    }

    double step = history.empty() ? std::min(1.0, 1.0 / std::sqrt(-slope)) : 1.0;
    double next_value = value;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < theta.size(); ++k) next[k] = theta[k] + step * dir[k];
      next_value = f(next, next_grad);
      if (next_value <= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(theta.size()), y(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) {
      s[k] = next[k] - theta[k];
      y[k] = next_grad[k] - grad[k];
    }
    if (dot(s, y) > 1e-12 * dot(y, y)) {
      history.emplace_back(std::move(s), std::move(y));
      if (history.size() > opt.history) history.pop_front();
    }
    theta.swap(next);
    grad.swap(next_grad);
    value = next_value;
  }
  if (!model.converged && std::sqrt(dot(grad, grad)) <= opt.tolerance) model.converged = true;

  model.iterations = it;
  model.weight.assign(theta.begin(), theta.begin() + static_cast<long>(classes * d));
  model.bias.assign(theta.begin() + static_cast<long>(classes * d), theta.end());
  return model;
}

Tensor<double> l2_normalize_rows(const Tensor<double>& x) {
  Tensor<double> out = x;
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    auto row = out.row(i);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    for (double& v : row) v /= norm;
  }
  return out;
}

std::string EvalReport::summary() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", 100.0 * mean, 100.0 * ci95);
  return buf;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["ci95"] = ci95;
  j["summary"] = summary();
  j["ways"] = ways;
  j["shots"] = shots;
  j["queries"] = queries;
  j["num_tasks"] = num_tasks;
  j["seed"] = seed;
  j["degenerate_episodes"] = degenerate_episodes;
  j["config"] = config;
  j["accuracies"] = accuracies;
  return j.dump(2);
}

void summarize(EvalReport& r) {
  const std::size_t n = r.accuracies.size();
  r.num_tasks = n;
  r.mean = 0.0;
  r.ci95 = 0.0;
  if (n == 0) return;
  double sum = 0.0;
  for (double a : r.accuracies) sum += a;
  r.mean = sum / static_cast<double>(n);
  if (n < 2) return;
  double ss = 0.0;
  for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(n));
}

namespace {

Tensor<double> gather_rows(const Tensor<double>& x, std::span<const std::size_t> idx) {
  Tensor<double> out({idx.size(), x.dim(1)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

double evaluate_episode(const Tensor<double>& embeddings, const Episode& ep,
                        const LogRegOptions& options, bool* degenerate) {
  if (ep.query.empty()) throw ArgumentError("episode has no query images");
  if (ep.support.empty()) throw ArgumentError("episode has no support images");
  const Tensor<double> support = l2_normalize_rows(gather_rows(embeddings, ep.support));
  const Tensor<double> query = l2_normalize_rows(gather_rows(embeddings, ep.query));
  const auto clf = fit_linear_classifier(support, ep.support_labels, ep.classes.size(), options);
  if (degenerate != nullptr) *degenerate = clf.degenerate;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    if (clf.predict(query.row(i)) == ep.query_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

EvalReport evaluate_embeddings(const Tensor<double>& embeddings,
                               std::span<const std::size_t> labels, const EvalConfig& config) {
  if (config.num_tasks == 0) throw ArgumentError("evaluation needs at least one task");
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ArgumentError("one embedding row per label is required");
  }
  EvalReport report;
  report.ways = config.ways;
  report.shots = config.shots;
  report.queries = config.queries;
  report.seed = config.seed;
  report.accuracies.assign(config.num_tasks, 0.0);
  std::vector<char> degenerate(config.num_tasks, 0);

  // Sampling errors surface before the parallel loop.
  {
    Rng probe = make_rng(config.seed, 0);
    sample_episode(labels, config.ways, config.shots, config.queries, probe);
  }
  const auto tasks = static_cast<long>(config.num_tasks);
#pragma omp parallel for schedule(dynamic, 4)
  for (long t = 0; t < tasks; ++t) {
    Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(t));
    const Episode ep = sample_episode(labels, config.ways, config.shots, config.queries, rng);
    bool degen = false;
    report.accuracies[static_cast<std::size_t>(t)] =
        evaluate_episode(embeddings, ep, config.logreg, &degen);
    degenerate[static_cast<std::size_t>(t)] = degen ? 1 : 0;
  }
  for (char d : degenerate) report.degenerate_episodes += d != 0 ? 1 : 0;
  summarize(report);
  return report;
}

template <typename T>
Tensor<double> embed_dataset(const Model<T>& model, const LabeledDataset& dataset,
                             std::size_t chunk) {
  const std::size_t n = dataset.size();
  const std::size_t d = model.config().embed_dim;
  Tensor<double> out({n, d});
  std::vector<Image> images;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    images.clear();
    for (std::size_t i = start; i < end; ++i) images.push_back(dataset.image(i));
    const Tensor<T> z = model.embed(to_tensor<T>(images));
    for (std::size_t i = 0; i < z.size(); ++i) out[start * d + i] = static_cast<double>(z[i]);
  }
  return out;
}

template Tensor<double> embed_dataset<float>(const Model<float>&, const LabeledDataset&, std::size_t);
template Tensor<double> embed_dataset<double>(const Model<double>&, const LabeledDataset&, std::size_t);

}  // namespace eqinv
