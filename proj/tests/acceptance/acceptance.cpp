// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on stderr.
// Usage: eqinv_acceptance [criterion numbers...]   (default: all)

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqinv/cli.hpp"
#include "eqinv/config.hpp"
#include "eqinv/data.hpp"
#include "eqinv/fewshot.hpp"
#include "eqinv/losses.hpp"
#include "eqinv/membank.hpp"
#include "eqinv/trainer.hpp"
#include "eqinv/transforms.hpp"
#include "gradcheck.hpp"
#include "oracles/oracles.hpp"

using namespace eqinv;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w, 3);
  for (auto& p : img.pixels) p = static_cast<float>(uniform01(rng));
  return img;
}

oracle::Mat to_mat(const Tensor<double>& t) {
  oracle::Mat m;
  for (std::size_t i = 0; i < t.dim(0); ++i) m.emplace_back(t.row(i).begin(), t.row(i).end());
  return m;
}

// ---------------------------------------------------------------- 1

Verdict gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    worst = std::max(worst, testutil::gradient_check(seed).relative_error);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120,
          "max rel err " + fmt("%.3g", worst) + " over 5 seeds in " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 2

Verdict loss_at_init() {
  const std::size_t classes = 10, per_batch = 8;
  const LabeledDataset ds = synth_dataset(classes, 80, 16, 21);
  const TransformSet set = build_preset("m16");
  ModelConfig mc;
  mc.num_classes = classes;
  mc.num_transforms = set.size();
  mc.seed = 21;
  const Model<float> model(mc);
  Rng rng = make_rng(21, 1);
  double ce = 0, eq = 0;
  const int batches = 100;
  for (int b = 0; b < batches; ++b) {
    const auto ids = sample_without_replacement(rng, ds.size(), per_batch);
    std::vector<Image> images;
    std::vector<std::size_t> labels;
    for (auto i : ids) {
      images.push_back(ds.image(i));
      labels.push_back(ds.labels[i]);
    }
    const ExpandedBatch eb = expand_batch(images, labels, ids, set);
    const auto out = model.forward(to_tensor<float>(eb.images), Mode::train);
    ce += ce_loss(out.class_logits, eb.class_labels).value / batches;
    eq += equivariance_loss(out.transform_logits, eb.proxy_labels).value / batches;
  }
  const double rce = ce / std::log(10.0), req = eq / std::log(16.0);
  const bool ok = std::abs(rce - 1) <= 0.1 && std::abs(req - 1) <= 0.1;
  return {ok, "ce " + fmt("%.4f", ce) + " (ln10 x " + fmt("%.3f", rce) + "), eq " + fmt("%.4f", eq) +
                  " (ln16 x " + fmt("%.3f", req) + ")"};
}

// ---------------------------------------------------------------- 3

Verdict closed_form_contrastive() {
  Tensor<double> e1({1, 2}), e2({1, 2});
  e1.at(0, 0) = 1;
  e2.at(0, 1) = 1;
  const double same = contrast_score(e1.row(0), e1.row(0), e2, 1.0);
  // positive orthogonal, negative identical
  const double swapped = contrast_score(e2.row(0), e1.row(0), e1, 1.0);
  const double want_same = std::numbers::e / (std::numbers::e + 1);
  const double want_swapped = 1 / (1 + std::numbers::e);
  // the 6-digit literals themselves are only good to 5e-7
  const bool closed = std::abs(same - want_same) < 1e-9 && std::abs(swapped - want_swapped) < 1e-9 &&
                      std::abs(same - 0.731059) < 5e-7 && std::abs(swapped - 0.268941) < 5e-7;

  Rng rng = make_rng(31, 0);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + uniform_index(rng, 3);
    const std::size_t m = 1 + uniform_index(rng, 4);
    const std::size_t k = uniform_index(rng, 6);
    const std::size_t d = 2 + uniform_index(rng, 5);
    const double tau = trial % 3 == 0 ? 1.0 : 0.2 + uniform01(rng);
    const auto v = testutil::random_unit_rows(b * m, d, rng);
    const auto refs = testutil::random_unit_rows(b, d, rng);
    const auto neg = k == 0 ? Tensor<double>({0, d}) : testutil::random_unit_rows(k, d, rng);
    std::vector<oracle::Mat> blocks(m);
    for (std::size_t mi = 0; mi < m; ++mi) {
      for (std::size_t bi = 0; bi < b; ++bi) {
        blocks[mi].emplace_back(v.row(mi * b + bi).begin(), v.row(mi * b + bi).end());
      }
    }
    const double want = static_cast<double>(oracle::contrastive(blocks, to_mat(refs), to_mat(neg), tau));
    worst = std::max(worst, std::abs(invariance_loss(v, b, refs, neg, tau).value - want));
  }
  return {closed && worst < 1e-10, "scores " + fmt("%.9f", same) + " / " + fmt("%.9f", swapped) +
                                       ", oracle max abs diff " + fmt("%.3g", worst) + " on 1000"};
}

// ---------------------------------------------------------------- 4

Verdict transform_algebra() {
  Rng rng = make_rng(41, 0);
  bool ok = true;
  TransformSpec q[4];
  for (int r = 0; r < 4; ++r) q[r].rotation = r;
  for (std::size_t size : {2u, 3u, 5u, 8u, 16u, 32u}) {
    const Image img = random_image(size, size, rng);
    ok = ok && apply_transform(img, TransformSpec{}) == img;
    for (int a = 0; a < 4; ++a) {
      const Image ia = apply_transform(img, q[a]);
      ok = ok && apply_transform(ia, q[(4 - a) % 4]) == img;
      for (int b = 0; b < 4; ++b) {
        ok = ok && apply_transform(ia, q[b]) == apply_transform(img, q[(a + b) % 4]);
      }
    }
  }
  for (auto [h, w] : {std::pair{3u, 7u}, std::pair{16u, 9u}}) {
    const Image img = random_image(h, w, rng);
    ok = ok && apply_transform(img, TransformSpec{}) == img;
  }
  const TransformSet all = build_preset("affine972");
  std::set<std::string> distinct;
  for (const auto& s : all.specs()) distinct.insert(format_spec(s));
  ok = ok && all.size() == 972 && distinct.size() == 972;
  return {ok, "C4 closure/inverse/identity exact; affine972 has " + std::to_string(all.size()) +
                  " specs, " + std::to_string(distinct.size()) + " distinct"};
}

// ---------------------------------------------------------------- 5 6 7 8 12

struct ToyRuns {
  RunConfig config;
  RunData data;
  std::map<std::string, std::vector<double>> final_acc;  // variant -> per-seed mean accuracy
  std::vector<double> full_gen0;
  std::optional<Model<float>> full_seed0;
  std::string full_seed0_report;
  double wall = 0;
};

EvalReport eval_report(const Model<float>& model, const RunConfig& rc, const LabeledDataset& eval) {
  EvalReport r = evaluate(model, eval, rc.eval);
  r.config = rc.to_text();
  return r;
}

RunConfig variant_config(const RunConfig& base, const std::string& variant, std::size_t seed) {
  RunConfig rc = base;
  rc.train.loss.w_eq = variant == "equivariance" || variant == "full" ? base.train.loss.w_eq : 0.0;
  rc.train.loss.w_in = variant == "invariance" || variant == "full" ? base.train.loss.w_in : 0.0;
  rc.train.seed = base.train.seed + seed;
  return rc;
}

ToyRuns& toy_runs() {
  static std::optional<ToyRuns> runs;
  if (runs) return *runs;
  runs.emplace();
  const auto t0 = std::chrono::steady_clock::now();
  runs->config = load_config(fs::path(EQINV_SOURCE_DIR) / "configs/toy.cfg");
  runs->config.output_dir.clear();
  runs->data = load_run_data(runs->config);
  for (const char* variant : {"baseline", "invariance", "equivariance", "full"}) {
    for (std::size_t s = 0; s < runs->config.ablate_seeds; ++s) {
      const RunConfig rc = variant_config(runs->config, variant, s);
      std::cerr << "[toy] " << variant << " seed " << s << "\n";
      TrainHooks hooks;
      hooks.log = &std::cerr;
      const auto gens = run_pipeline(rc.train, runs->data.train, hooks);
      const EvalReport last = eval_report(gens.back().model, rc, runs->data.eval);
      runs->final_acc[variant].push_back(100 * last.mean);
      std::cerr << "[toy] " << variant << " seed " << s << " final " << last.summary() << "\n";
      if (std::string(variant) == "full") {
        runs->full_gen0.push_back(100 * eval_report(gens.front().model, rc, runs->data.eval).mean);
        if (s == 0) {
          runs->full_seed0 = gens.back().model;
          runs->full_seed0_report = last.to_json();
        }
      }
    }
  }
  runs->wall = seconds_since(t0);
  return *runs;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Verdict ablation_trend() {
  ToyRuns& t = toy_runs();
  const double base = mean_of(t.final_acc["baseline"]), inv = mean_of(t.final_acc["invariance"]),
               eqv = mean_of(t.final_acc["equivariance"]), full = mean_of(t.final_acc["full"]);
  const bool ok = full - eqv >= -0.5 && eqv - inv >= -0.5 && inv - base >= -0.5 && t.wall <= 7200;
  return {ok, "full " + fmt("%.2f", full) + " >= eq " + fmt("%.2f", eqv) + " >= inv " + fmt("%.2f", inv) +
                  " >= base " + fmt("%.2f", base) + " (pts, 3 seeds x " +
                  std::to_string(t.config.eval.num_tasks) + " ep, " + fmt("%.0f", t.wall) + " s)"};
}

HeadProbe probe_full() {
  ToyRuns& t = toy_runs();
  return probe_heads(*t.full_seed0, t.data.eval, t.config.train.transform_set(), 600, 71);
}

Verdict equivariance_head() {
  const HeadProbe p = probe_full();
  return {p.transform_accuracy > 0.6, "held-out transform accuracy " + fmt("%.4f", p.transform_accuracy) +
                                          " on " + std::to_string(p.images) + " images (chance 0.0625)"};
}

Verdict invariance_quality() {
  const HeadProbe p = probe_full();
  const double gap = p.positive_cosine - p.negative_cosine;
  return {gap >= 0.2, "positive cos " + fmt("%.4f", p.positive_cosine) + ", negative cos " +
                          fmt("%.4f", p.negative_cosine) + ", gap " + fmt("%.4f", gap)};
}

Verdict distillation() {
  ToyRuns& t = toy_runs();
  const double g0 = mean_of(t.full_gen0), g1 = mean_of(t.final_acc["full"]);
  std::string per;
  for (std::size_t s = 0; s < t.full_gen0.size(); ++s) {
    per += (s ? ", " : "") + fmt("%.2f", t.full_gen0[s]) + "->" + fmt("%.2f", t.final_acc["full"][s]);
  }
  return {g1 >= g0 - 0.5, "gen0 " + fmt("%.2f", g0) + " -> gen1 " + fmt("%.2f", g1) + " (" + per + ")"};
}

Verdict determinism() {
  ToyRuns& t = toy_runs();
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const RunConfig rc = variant_config(t.config, "full", 0);
  const auto gens = run_pipeline(rc.train, t.data.train);
  const std::string again = eval_report(gens.back().model, rc, t.data.eval).to_json();
  omp_set_num_threads(threads);
  const bool same = again == t.full_seed0_report;
  return {same, same ? "second train -> distill -> eval run reproduced the report byte for byte"
                     : "eval reports differ"};
}

// ---------------------------------------------------------------- 9

Verdict evaluation_harness() {
  const std::size_t classes = 10, per = 30, dim = 16;
  const double sigma = 1.0;
  Rng rng = make_rng(91, 0);
  Tensor<double> x({classes * per, dim});
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      auto row = x.row(c * per + i);
      for (std::size_t d = 0; d < dim; ++d) row[d] = (d == c ? 10 * sigma : 0.0) + sigma * normal(rng);
      labels.push_back(c);
    }
  }
  EvalConfig cfg;
  cfg.num_tasks = 600;
  const EvalReport sep = evaluate_embeddings(x, labels, cfg);
  Tensor<double> flat({classes * per, dim}, 0.3);
  const EvalReport con = evaluate_embeddings(flat, labels, cfg);
  const double chance = 1.0 / static_cast<double>(cfg.ways);
  EvalReport hand;
  hand.accuracies = {1.0, 0.0};
  summarize(hand);
  const bool ok = sep.mean == 1.0 && std::abs(con.mean - chance) <= con.ci95 + 1e-12 &&
                  std::abs(hand.ci95 - 0.980) < 1e-6;
  return {ok, "separated " + fmt("%.4f", sep.mean) + ", constant " + fmt("%.4f", con.mean) + " +- " +
                  fmt("%.4f", con.ci95) + " vs " + fmt("%.2f", chance) + ", ci95{1,0} " +
                  fmt("%.7f", hand.ci95)};
}

// ---------------------------------------------------------------- 10

Verdict membank_properties() {
  MemoryBank bank(64, 8, 101, 0.5);
  Rng rng = make_rng(101, 1);
  bool leak = false;
  for (int op = 0; op < 10000; ++op) {
    const std::size_t count = 1 + uniform_index(rng, 8);
    const auto ids = sample_without_replacement(rng, 64, count);
    if (op % 2 == 0) {
      bank.update(ids, testutil::random_unit_rows(count, 8, rng));
    } else {
      const auto neg = bank.sample_negatives(ids, 64 - count);
      for (std::size_t i = 0; i < neg.dim(0); ++i) {
        for (auto id : ids) leak = leak || std::equal(neg.row(i).begin(), neg.row(i).end(), bank.get(id).begin());
      }
    }
  }
  double norm_err = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0;
    for (double v : bank.get(i)) s += v * v;
    norm_err = std::max(norm_err, std::abs(std::sqrt(s) - 1));
  }

  // exclusion: slot i sits at angle 0.05 i so every draw maps back to its id
  MemoryBank tagged(100, 2, 102);
  Tensor<double> slots({100, 2});
  for (std::size_t i = 0; i < 100; ++i) {
    slots.at(i, 0) = std::cos(0.05 * i);
    slots.at(i, 1) = std::sin(0.05 * i);
  }
  tagged.set_slots(slots);
  std::size_t violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto ex = sample_without_replacement(rng, 100, 1 + uniform_index(rng, 20));
    const std::set<std::size_t> exs(ex.begin(), ex.end());
    const auto neg = tagged.sample_negatives(ex, 1 + uniform_index(rng, 100 - ex.size()));
    for (std::size_t i = 0; i < neg.dim(0); ++i) {
      double a = std::atan2(neg.at(i, 1), neg.at(i, 0));
      if (a < 0) a += 2 * std::numbers::pi;
      violations += exs.count(static_cast<std::size_t>(std::lround(a / 0.05)));
    }
  }

  MemoryBank mom(1, 2, 103, 0.5);
  Tensor<double> e1({1, 2}), e2({1, 2});
  e1.at(0, 0) = 1;
  e2.at(0, 1) = 1;
  mom.set_slots(e1);
  const std::vector<std::size_t> id0 = {0};
  mom.update(id0, e2);
  const double h = 1 / std::sqrt(2.0);
  const double mom_err = std::max(std::abs(mom.get(0)[0] - h), std::abs(mom.get(0)[1] - h));

  const bool ok = norm_err < 1e-6 && !leak && violations == 0 && mom_err < 1e-9;
  return {ok, "norm err " + fmt("%.3g", norm_err) + " after 10k ops, " + std::to_string(violations) +
                  " excluded draws in 10k trials, momentum err " + fmt("%.3g", mom_err)};
}

// ---------------------------------------------------------------- 11

Verdict data_plumbing() {
  const fs::path dir = fs::temp_directory_path() / "eqinv_acceptance";
  fs::create_directories(dir);
  Rng rng = make_rng(111, 0);
  std::vector<std::uint8_t> bytes(5 * kCifarRecordBytes);
  for (std::size_t r = 0; r < 5; ++r) {
    bytes[r * kCifarRecordBytes] = static_cast<std::uint8_t>(uniform_index(rng, 20));
    bytes[r * kCifarRecordBytes + 1] = static_cast<std::uint8_t>(uniform_index(rng, 100));
    for (std::size_t i = 2; i < kCifarRecordBytes; ++i) {
      bytes[r * kCifarRecordBytes + i] = static_cast<std::uint8_t>(uniform_index(rng, 256));
    }
  }
  const fs::path src = dir / "crafted.bin", dst = dir / "rewritten.bin";
  {
    std::ofstream out(src, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  write_cifar100_binary(load_cifar100_binary(src), dst);
  std::ifstream in(dst, std::ios::binary);
  const std::vector<std::uint8_t> back((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const bool round = back == bytes;

  const SplitManifest m = load_manifest(fs::path(EQINV_SOURCE_DIR) / "data/splits/cifar-fs");
  std::set<std::string> all;
  for (const auto* list : {&m.train, &m.val, &m.test}) all.insert(list->begin(), list->end());
  const auto& names = cifar100_fine_names();
  LabeledDataset ds;
  ds.height = ds.width = 1;
  ds.class_names = names;
  for (std::size_t c = 0; c < 100; ++c) {
    const std::vector<std::uint8_t> px(3, static_cast<std::uint8_t>(c));
    ds.push_back(px, c);
  }
  const DatasetSplits s = apply_split(ds, m);
  std::set<std::uint8_t> routed;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) routed.insert(part->raw(i)[0]);
  }
  const bool split = m.train.size() == 64 && m.val.size() == 16 && m.test.size() == 20 &&
                     all.size() == 100 && all == std::set<std::string>(names.begin(), names.end()) &&
                     s.train.size() + s.val.size() + s.test.size() == 100 && routed.size() == 100;
  return {round && split, std::string(round ? "round trip bit-exact" : "round trip differs") + ", split " +
                              std::to_string(m.train.size()) + "/" + std::to_string(m.val.size()) + "/" +
                              std::to_string(m.test.size()) + (split ? " disjoint" : " invalid")};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"loss at init", loss_at_init},
      {"closed-form contrastive", closed_form_contrastive},
      {"transform algebra", transform_algebra},
      {"ablation trend", ablation_trend},
      {"equivariance head", equivariance_head},
      {"invariance quality", invariance_quality},
      {"distillation", distillation},
      {"evaluation harness", evaluation_harness},
      {"memory bank", membank_properties},
      {"data plumbing", data_plumbing},
      {"determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %2zu %-24s %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
