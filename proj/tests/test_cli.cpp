#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eqinv/cli.hpp"
#include "eqinv/error.hpp"

using namespace eqinv;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(const fs::path& dir) {
  RunConfig c;
  c.output_dir = dir;
  c.data_dir = dir / "data";
  c.synth_classes = 7;
  c.synth_base_classes = 4;
  c.synth_per_class = 8;
  c.synth_image_size = 8;
  c.train.epochs = 1;
  c.train.lr_decay_epochs = {};
  c.train.batch_size = 8;
  c.train.generations = 2;
  c.train.transform_preset = "m4";
  c.train.augment_pad = 1;
  c.train.loss.negatives_per_batch = 8;
  c.train.model.embed_dim = 8;
  c.train.model.invariant_dim = 8;
  c.eval.ways = 3;
  c.eval.num_tasks = 10;
  c.eval.queries = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("errors map to exit codes") {
  std::ostringstream err;
  CHECK(run_guarded([] { return kExitOk; }, err) == 0);
  CHECK(run_guarded([]() -> int { throw ConfigError("x"); }, err) == 2);
  CHECK(run_guarded([]() -> int { throw FormatError("x"); }, err) == 3);
  CHECK(run_guarded([]() -> int { throw IoError("x"); }, err) == 3);
  CHECK(run_guarded([]() -> int { throw VersionMismatchError("x"); }, err) == 3);
  CHECK(run_guarded([]() -> int { throw ShapeMismatchError("x"); }, err) == 3);
  CHECK(run_guarded([]() -> int { throw NumericError("x"); }, err) == 4);
  CHECK(run_guarded([]() -> int { throw std::runtime_error("x"); }, err) == 1);
  std::ostringstream out;
  CHECK(run_guarded([&] { return cmd_dump_transforms("m5", out); }, err) == 2);
  CHECK(run_guarded([&] { return cmd_dump_transforms("m4", out); }, err) == 0);
}

TEST_CASE("synthetic run data splits base and held-out classes") {
  const RunConfig c = small_run(fs::temp_directory_path() / "eqinv_test_cli_data");
  const RunData d = load_run_data(c);
  CHECK(d.train.class_names.size() == 4);
  CHECK(d.eval.class_names.size() == 3);
  CHECK(d.train.size() == 32);
  CHECK(d.eval.size() == 24);
  RunConfig val = c;
  val.eval_split = "val";
  CHECK_THROWS_AS(load_run_data(val), ConfigError);
  RunConfig missing = c;
  missing.dataset = "cifar-fs";
  missing.data_dir = "/nonexistent";
  CHECK_THROWS_AS(load_run_data(missing), IoError);
}

TEST_CASE("train, eval and embed end to end") {
  const fs::path dir = fs::temp_directory_path() / "eqinv_test_cli_run";
  fs::remove_all(dir);
  const RunConfig c = small_run(dir);
  std::ostringstream out, err;
  REQUIRE(cmd_train(c, false, out, err) == 0);
  CHECK(fs::exists(dir / "config.txt"));
  CHECK(parse_config(slurp(dir / "config.txt")) == c);
  CHECK(fs::exists(dir / "metrics.jsonl"));

  REQUIRE(cmd_eval(c, std::nullopt, std::nullopt, out) == 0);
  CHECK(fs::exists(dir / "eval_gen1.json"));
  CHECK(out.str().find("3-way 1-shot over 10 tasks") != std::string::npos);

  const auto emb = dir / "emb.csv";
  REQUIRE(cmd_embed(c, dir / "gen1.ckpt", emb, 5, out) == 0);
  const std::string table = slurp(emb);
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  CHECK(table.rfind("instance_id,label,z0,", 0) == 0);

  REQUIRE(cmd_embed(c, dir / "gen1.ckpt", emb, 0, out) == 0);
  const std::string empty = slurp(emb);
  CHECK(std::count(empty.begin(), empty.end(), '\n') == 1);
  CHECK(slurp(dir / "emb.pca.csv") == "instance_id,label,pc1,pc2\n");

  std::ostringstream sink;
  CHECK(run_guarded([&] { return cmd_eval(c, dir / "nothing.ckpt", std::nullopt, sink); }, sink) == 3);
}

TEST_CASE("synthetic prepare-data writes the CIFAR layout") {
  const fs::path dir = fs::temp_directory_path() / "eqinv_test_cli_prep";
  fs::remove_all(dir);
  RunConfig c = small_run(dir);
  c.synth_image_size = 32;
  std::ostringstream out;
  REQUIRE(cmd_prepare_data(c, {}, out) == 0);
  const LabeledDataset back = load_cifar100_binary(c.data_dir / "synthetic.bin");
  CHECK(back.size() == 56);
  CHECK(back.raw(3)[10] == synth_dataset(7, 8, 32, 0).raw(3)[10]);
}
