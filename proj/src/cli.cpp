#include "eqinv/cli.hpp"

#include <omp.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <ostream>

#include "eqinv/checkpoint.hpp"
#include "eqinv/error.hpp"
#include "eqinv/fewshot.hpp"
#include "eqinv/pca.hpp"
#include "eqinv/trainer.hpp"
#include "eqinv/transforms.hpp"
#include "json.hpp"

namespace eqinv {
namespace {

void apply_threads(const RunConfig& config) {
  if (config.threads > 0) omp_set_num_threads(config.threads);
}

LabeledDataset read_split(const RunConfig& config, const std::string& split) {
  const SplitManifest manifest = load_manifest(config.manifest_dir);
  LabeledDataset raw = load_cifar100_binary(config.data_dir / (split + ".bin"));
  SplitManifest only;
  if (split == "train") only.train = manifest.train;
  if (split == "val") only.train = manifest.val;
  if (split == "test") only.train = manifest.test;
  return apply_split(raw, only).train;
}

std::filesystem::path last_generation_checkpoint(const RunConfig& config) {
  for (std::size_t g = config.train.generations; g-- > 0;) {
    const auto p = generation_checkpoint(config.output_dir, g);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("no generation checkpoint under " + config.output_dir.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts on 64-bit targets.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const VersionMismatchError& e) {
    err << "checkpoint version mismatch: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeMismatchError& e) {
    err << "shape mismatch: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

RunData load_run_data(const RunConfig& config) {
  RunData data;
  if (config.dataset == "synthetic") {
    const LabeledDataset all = synth_dataset(config.synth_classes, config.synth_per_class,
                                             config.synth_image_size, config.synth_seed);
    if (config.eval_split == "val") {
      throw ConfigError("the synthetic corpus has no validation split");
    }
    SplitManifest m;
    for (std::size_t c = 0; c < config.synth_classes; ++c) {
      (c < config.synth_base_classes ? m.train : m.test).push_back(all.class_names[c]);
    }
    DatasetSplits s = apply_split(all, m);
    data.train = std::move(s.train);
    data.eval = std::move(s.test);
  } else {
    data.train = read_split(config, "train");
    data.eval = read_split(config, config.eval_split);
  }
  return data;
}

void write_effective_config(const RunConfig& config) {
  write_text(config.output_dir / "config.txt", config.to_text());
}

int cmd_dump_transforms(const std::string& preset, std::ostream& out) {
  out << dump_transforms(build_preset(preset));
  return kExitOk;
}

int cmd_prepare_data(const RunConfig& config, const std::filesystem::path& source,
                     std::ostream& out) {
  config.validate();
  if (config.dataset == "synthetic") {
    const LabeledDataset all = synth_dataset(config.synth_classes, config.synth_per_class,
                                             config.synth_image_size, config.synth_seed);
    const auto path = config.data_dir / "synthetic.bin";
    write_cifar100_binary(all, path);
    out << "wrote " << all.size() << " synthetic images to " << path.string() << "\n";
    return kExitOk;
  }
  const SplitManifest manifest = load_manifest(config.manifest_dir);
  LabeledDataset merged = load_cifar100_binary(source / "train.bin");
  const LabeledDataset test = load_cifar100_binary(source / "test.bin");
  for (std::size_t i = 0; i < test.size(); ++i) {
    merged.push_back(test.raw(i), test.labels[i], test.coarse_labels[i]);
  }
  // Split files keep the original fine labels so they stay valid CIFAR-100 records.
  const std::pair<const char*, const std::vector<std::string>*> splits[] = {
      {"train", &manifest.train}, {"val", &manifest.val}, {"test", &manifest.test}};
  for (const auto& [name, classes] : splits) {
    SplitManifest only;
    only.train = *classes;
    DatasetSplits s = apply_split(merged, only);
    LabeledDataset part = std::move(s.train);
    for (auto& l : part.labels) {
      l = static_cast<std::size_t>(std::find(merged.class_names.begin(), merged.class_names.end(),
                                             part.class_names[l]) -
                                   merged.class_names.begin());
    }
    part.class_names = merged.class_names;
    write_cifar100_binary(part, config.data_dir / (std::string(name) + ".bin"));
    out << name << ": " << classes->size() << " classes, " << part.size() << " images\n";
  }
  write_manifest(manifest, config.data_dir / "splits");
  return kExitOk;
}

int cmd_train(const RunConfig& config, bool resume, std::ostream& out, std::ostream& err) {
  config.validate();
  apply_threads(config);
  const RunData data = load_run_data(config);
  std::filesystem::create_directories(config.output_dir);
  write_effective_config(config);
  std::ofstream metrics(config.output_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log");

  TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.log = &err;
  hooks.output_dir = config.output_dir;
  hooks.run_config = config.to_text();
  hooks.resume = resume;
  const auto results = run_pipeline(config.train, data.train, hooks);
  for (const auto& r : results) {
    out << "generation " << r.report.generation << ": " << r.report.checkpoint.string() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::optional<std::filesystem::path> checkpoint,
             std::optional<std::filesystem::path> report_path, std::ostream& out) {
  config.validate();
  apply_threads(config);
  const auto path = checkpoint ? *checkpoint : last_generation_checkpoint(config);
  const Checkpoint ck = read_checkpoint(path);
  const Model<float> model = restore_model(ck);
  const RunData data = load_run_data(config);
  EvalReport report = evaluate(model, data.eval, config.eval);
  report.config = config.to_text();
  const auto dest = report_path ? *report_path
                                : config.output_dir /
                                      ("eval_gen" + std::to_string(ck.generation) + ".json");
  write_text(dest, report.to_json() + "\n");
  out << config.eval.ways << "-way " << config.eval.shots << "-shot over " << report.num_tasks
      << " tasks: " << report.summary() << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  config.validate();
  apply_threads(config);
  const RunData data = load_run_data(config);
  struct Variant {
    const char* name;
    double w_eq;
    double w_in;
  };
  const Variant variants[] = {{"baseline", 0.0, 0.0},
                              {"invariance", 0.0, config.train.loss.w_in},
                              {"equivariance", config.train.loss.w_eq, 0.0},
                              {"full", config.train.loss.w_eq, config.train.loss.w_in}};
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  out << "variant        mean_acc   ci95_over_seeds   per_seed\n";
  for (const auto& v : variants) {
    EvalReport over_seeds;
    std::string per_seed;
    for (std::size_t s = 0; s < config.ablate_seeds; ++s) {
      RunConfig rc = config;
      rc.train.loss.w_eq = v.w_eq;
      rc.train.loss.w_in = v.w_in;
      rc.train.seed = config.train.seed + s;
      rc.output_dir = config.output_dir / "ablate" / v.name / ("seed" + std::to_string(s));
      std::filesystem::create_directories(rc.output_dir);
      write_effective_config(rc);
      TrainHooks hooks;
      hooks.log = &err;
      hooks.output_dir = rc.output_dir;
      hooks.run_config = rc.to_text();
      const auto results = run_pipeline(rc.train, data.train, hooks);
      EvalReport r = evaluate(results.back().model, data.eval, rc.eval);
      r.config = rc.to_text();
      write_text(rc.output_dir / "eval.json", r.to_json() + "\n");
      over_seeds.accuracies.push_back(r.mean);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%.2f", per_seed.empty() ? "" : " ", 100.0 * r.mean);
      per_seed += buf;
    }
    summarize(over_seeds);
    char line[160];
    std::snprintf(line, sizeof(line), "%-14s %8.2f   %8.2f          %s\n", v.name,
                  100.0 * over_seeds.mean, 100.0 * over_seeds.ci95, per_seed.c_str());
    out << line;
    table.push_back({{"variant", v.name},
                     {"w_eq", v.w_eq},
                     {"w_in", v.w_in},
                     {"mean", over_seeds.mean},
                     {"ci95", over_seeds.ci95},
                     {"per_seed", over_seeds.accuracies}});
  }
  write_text(config.output_dir / "ablation.json", table.dump(2) + "\n");
  return kExitOk;
}

int cmd_embed(const RunConfig& config, const std::filesystem::path& checkpoint,
              const std::filesystem::path& out_path, std::size_t max_images, std::ostream& out) {
  config.validate();
  apply_threads(config);
  const Model<float> model = restore_model(read_checkpoint(checkpoint));
  const RunData data = load_run_data(config);
  const std::size_t n = std::min(max_images, data.eval.size());
  Rng rng = make_rng(config.eval.seed, 0);
  auto picks = sample_without_replacement(rng, data.eval.size(), n);
  std::sort(picks.begin(), picks.end());

  LabeledDataset subset;
  subset.height = data.eval.height;
  subset.width = data.eval.width;
  subset.channels = data.eval.channels;
  subset.class_names = data.eval.class_names;
  for (std::size_t i : picks) subset.push_back(data.eval.raw(i), data.eval.labels[i]);
  const Tensor<double> z = embed_dataset(model, subset);
  const std::size_t d = model.config().embed_dim;

  std::string table = "instance_id,label";
  for (std::size_t j = 0; j < d; ++j) table += ",z" + std::to_string(j);
  table += "\n";
  char buf[40];
  for (std::size_t i = 0; i < n; ++i) {
    table += std::to_string(data.eval.instance_ids[picks[i]]) + "," +
             std::to_string(subset.labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.9g", z.at(i, j));
      table += buf;
    }
    table += "\n";
  }
  write_text(out_path, table);

  std::string proj = "instance_id,label,pc1,pc2\n";
  if (n > 0) {
    const PcaResult p = pca(z, std::min<std::size_t>(2, d));
    for (std::size_t i = 0; i < n; ++i) {
      proj += std::to_string(data.eval.instance_ids[picks[i]]) + "," +
              std::to_string(subset.labels[i]);
      for (std::size_t c = 0; c < p.projection.dim(1); ++c) {
        std::snprintf(buf, sizeof(buf), ",%.9g", p.projection.at(i, c));
        proj += buf;
      }
      proj += "\n";
    }
    out << "pca: top-2 components explain " << 100.0 * p.explained_share() << "% of variance\n";
  }
  auto pca_path = out_path;
  pca_path.replace_extension(".pca.csv");
  write_text(pca_path, proj);
  out << "wrote " << n << " embeddings to " << out_path.string() << "\n";
  return kExitOk;
}

}  // namespace eqinv
