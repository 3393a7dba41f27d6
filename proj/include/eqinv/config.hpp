#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "eqinv/fewshot.hpp"
#include "eqinv/trainer.hpp"

namespace eqinv {

/// Everything a CLI run needs. Text form is flat `key = value` lines.
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  std::string eval_split = "test";  ///< test | val

  std::string dataset = "synthetic";  ///< synthetic | cifar-fs
  std::filesystem::path data_dir = "data/cifar-fs";
  std::filesystem::path manifest_dir = "data/splits/cifar-fs";
  std::filesystem::path output_dir = "runs/default";

  std::size_t synth_classes = 16;
  std::size_t synth_base_classes = 10;  ///< the rest are held out for evaluation
  std::size_t synth_per_class = 100;
  std::size_t synth_image_size = 16;
  std::uint64_t synth_seed = 0;

  std::size_t ablate_seeds = 3;
  int threads = 0;  ///< OpenMP threads, 0 keeps the runtime default

  /// Applies one key/value pair. ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// ConfigError if any value or combination is out of domain.
  void validate() const;
  /// Every key in a fixed order; parse_config(to_text()) reproduces *this.
  std::string to_text() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Keys accepted by RunConfig::set, in to_text() order.
std::vector<std::string> config_keys();

/// Applies `text` on top of `base`. Blank lines and lines starting with '#'
/// are skipped.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Splits "key=value" for command-line overrides.
std::pair<std::string, std::string> split_override(const std::string& arg);

}  // namespace eqinv
