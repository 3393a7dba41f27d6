#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "eqinv/checkpoint.hpp"
#include "eqinv/error.hpp"
#include "eqinv/membank.hpp"

using namespace eqinv;
namespace fs = std::filesystem;

namespace {

ModelConfig config() {
  ModelConfig mc;
  mc.embed_dim = 16;
  mc.num_classes = 5;
  mc.num_transforms = 4;
  mc.invariant_dim = 8;
  mc.seed = 3;
  return mc;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "eqinv_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const Model<float> model(config());
  Checkpoint ck = snapshot_model(model);
  ck.generation = 1;
  ck.epoch = 7;
  ck.step = 123;
  ck.run_config = "epochs = 9\nlr = 0.05\n";
  for (const auto& p : model.parameters()) ck.velocity.emplace_back(p.value.shape(), 0.25f);
  MemoryBank bank(12, 8, 4, 0.5);
  ck.bank_slots = bank.slots();
  ck.bank_momentum = 0.5;
  ck.bank_rng = bank.rng_state();
  ck.trainer_rng = "42";
  const fs::path path = scratch("round.ckpt");
  save_checkpoint(ck, path);
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));

  const Checkpoint back = read_checkpoint(path);
  CHECK(back.model == ck.model);
  CHECK(back.generation == 1);
  CHECK(back.epoch == 7);
  CHECK(back.step == 123);
  CHECK(back.run_config == ck.run_config);
  CHECK(back.bank_slots == ck.bank_slots);
  CHECK(back.bank_rng == ck.bank_rng);
  CHECK(back.trainer_rng == "42");
  CHECK(back.bank_momentum == 0.5);
  REQUIRE(back.velocity.size() == ck.velocity.size());
  CHECK(back.velocity[2] == ck.velocity[2]);

  const Model<float> loaded = restore_model(back);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(loaded.parameters()[i].name == model.parameters()[i].name);
    CHECK(loaded.parameters()[i].value == model.parameters()[i].value);
  }
  Tensor<float> x({3, 3, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 17) / 17.0f;
  CHECK(loaded.embed(x) == model.embed(x));
}

TEST_CASE("wrong class count is a shape mismatch") {
  const fs::path path = scratch("shape.ckpt");
  save_checkpoint(snapshot_model(Model<float>(config())), path);
  ModelConfig other = config();
  other.num_classes = 6;
  CHECK_THROWS_AS(load_model(path, &other), ShapeMismatchError);
  const ModelConfig same = config();
  CHECK_NOTHROW(load_model(path, &same));
}

TEST_CASE("truncated, foreign and future files") {
  const fs::path path = scratch("cut.ckpt");
  save_checkpoint(snapshot_model(Model<float>(config())), path);
  const std::string bytes = slurp(path);

  for (std::size_t keep : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    spit(path, bytes.substr(0, keep));
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
  }
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  spit(path, flipped);
  CHECK_THROWS_AS(read_checkpoint(path), Error);

  std::string foreign = bytes;
  foreign[0] = 'X';
  spit(path, foreign);
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);

  std::string future = bytes;
  future[8] = 2;
  spit(path, future);
  CHECK_THROWS_AS(read_checkpoint(path), VersionMismatchError);

  CHECK_THROWS_AS(read_checkpoint(scratch("missing.ckpt")), IoError);
}

TEST_CASE("truncation error names the offset") {
  const fs::path path = scratch("offset.ckpt");
  save_checkpoint(snapshot_model(Model<float>(config())), path);
  const std::string bytes = slurp(path);
  spit(path, bytes.substr(0, 100));
  try {
    read_checkpoint(path);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}
