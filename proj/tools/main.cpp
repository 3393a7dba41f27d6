#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eqinv/cli.hpp"
#include "eqinv/config.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key = value configuration file");
  cmd->add_option("--set", c.overrides, "override one key, e.g. --set epochs=5");
  cmd->add_option("--seed", c.seed, "training seed (same as --set seed=N)");
}

// flags > file > defaults
eqinv::RunConfig resolve(const Common& c) {
  eqinv::RunConfig config;
  if (!c.config_path.empty()) config = eqinv::load_config(c.config_path);
  for (const auto& o : c.overrides) {
    const auto [k, v] = eqinv::split_override(o);
    config.set(k, v);
  }
  if (c.seed) config.train.seed = *c.seed;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  eqinv::tune_allocator();
  CLI::App app{"Equivariant and invariant representation learning for few-shot classification"};
  app.require_subcommand(1);

  std::string preset = "m16";
  auto* dump = app.add_subcommand("dump-transforms", "print a transform preset as CSV");
  dump->add_option("preset", preset, "m3 m4 m8 m12 m16 m20 m24 affine972");

  Common prep_c;
  std::string source;
  auto* prep = app.add_subcommand("prepare-data", "split CIFAR-100 or export the synthetic corpus");
  add_common(prep, prep_c);
  prep->add_option("--source", source, "directory with the CIFAR-100 train.bin and test.bin");

  Common train_c;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train the base model and its distillation generations");
  add_common(train, train_c);
  train->add_flag("--resume", resume, "continue from checkpoints in output_dir");

  Common eval_c;
  std::string eval_ckpt, eval_report;
  auto* eval = app.add_subcommand("eval", "few-shot evaluation of a checkpoint");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "defaults to the last generation in output_dir");
  eval->add_option("--report", eval_report, "report path, default output_dir/eval_genG.json");

  Common ablate_c;
  auto* ablate = app.add_subcommand("ablate", "baseline / invariance / equivariance / full comparison");
  add_common(ablate, ablate_c);

  Common embed_c;
  std::string embed_ckpt, embed_out;
  std::size_t max_images = 1000;
  auto* embed = app.add_subcommand("embed", "export evaluation-split embeddings and a PCA projection");
  add_common(embed, embed_c);
  embed->add_option("--checkpoint", embed_ckpt)->required();
  embed->add_option("--out", embed_out)->required();
  embed->add_option("--max-images", max_images, "sampled from the evaluation split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : eqinv::kExitConfig;
  }

  return eqinv::run_guarded(
      [&]() -> int {
        if (dump->parsed()) return eqinv::cmd_dump_transforms(preset, std::cout);
        if (prep->parsed()) return eqinv::cmd_prepare_data(resolve(prep_c), source, std::cout);
        if (train->parsed()) return eqinv::cmd_train(resolve(train_c), resume, std::cout, std::cerr);
        if (eval->parsed()) {
          std::optional<std::filesystem::path> ck, rep;
          if (!eval_ckpt.empty()) ck = eval_ckpt;
          if (!eval_report.empty()) rep = eval_report;
          return eqinv::cmd_eval(resolve(eval_c), ck, rep, std::cout);
        }
        if (ablate->parsed()) return eqinv::cmd_ablate(resolve(ablate_c), std::cout, std::cerr);
        if (embed->parsed()) {
          return eqinv::cmd_embed(resolve(embed_c), embed_ckpt, embed_out, max_images, std::cout);
        }
        return eqinv::kExitFailure;
      },
      std::cerr);
}
