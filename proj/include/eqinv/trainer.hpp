#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eqinv/checkpoint.hpp"
#include "eqinv/data.hpp"
#include "eqinv/losses.hpp"
#include "eqinv/membank.hpp"
#include "eqinv/model.hpp"
#include "eqinv/transforms.hpp"

namespace eqinv {

struct TrainConfig {
  std::size_t epochs = 65;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> lr_decay_epochs = {60};
  double lr_decay_factor = 0.1;
  std::size_t generations = 2;  ///< base model plus distillation stages
  std::uint64_t seed = 0;
  std::string transform_preset = "m16";
  std::size_t affine_samples = 10;  ///< subset size when the preset is affine972
  std::size_t augment_pad = kDefaultPad;
  double augment_jitter = kJitter;
  std::size_t accumulation = 1;  ///< micro-batches per optimizer step
  double bank_momentum = MemoryBank::kDefaultMomentum;
  LossConfig loss;
  ModelConfig model;

  /// ConfigError on any out-of-domain value.
  void validate() const;
  /// The transform family used for every generation of this run.
  TransformSet transform_set() const;
  /// True unless both expansion terms are off; then batches are not expanded.
  bool expands() const { return loss.w_eq > 0.0 || loss.w_in > 0.0; }
  /// model with num_classes and num_transforms filled in and the seed of `generation`.
  ModelConfig model_for(std::size_t num_classes, std::size_t generation) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// lr · factor^(number of decay epochs ≤ epoch).
double lr_at(const TrainConfig& config, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;  ///< mean over the epoch's steps
  double wall_ms = 0.0;
};

struct TrainReport {
  std::size_t generation = 0;
  std::vector<EpochRecord> epochs;
  std::filesystem::path checkpoint;
  std::size_t negatives = 0;  ///< negatives per step after capping
  std::uint64_t bank_updates = 0;
};

struct StepInfo {
  std::size_t generation = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  std::vector<std::size_t> instance_ids;  ///< ids written to the memory bank, if any
};

struct TrainHooks {
  std::ostream* metrics = nullptr;     ///< one JSON object per step
  std::ostream* log = nullptr;         ///< warnings and progress
  std::filesystem::path output_dir;    ///< checkpoints go here when non-empty
  std::string run_config;              ///< echoed into checkpoints
  bool resume = false;                 ///< pick up existing checkpoints in output_dir
  std::function<void(const StepInfo&)> on_step;
};

struct GenerationResult {
  Model<float> model;
  TrainReport report;
};

/// Trains one generation. `teacher` is the frozen previous generation, or null
/// for generation 0.
GenerationResult train_generation(const TrainConfig& config, const LabeledDataset& train,
                                  std::size_t generation, const Model<float>* teacher,
                                  const TrainHooks& hooks = {});

/// Generation 0 without distillation, then each later generation as a fresh
/// student of the one before.
std::vector<GenerationResult> run_pipeline(const TrainConfig& config,
                                           const LabeledDataset& train,
                                           const TrainHooks& hooks = {});

std::filesystem::path generation_checkpoint(const std::filesystem::path& dir,
                                            std::size_t generation);

/// Held-out diagnostics of the two auxiliary heads.
struct HeadProbe {
  double transform_accuracy = 0.0;  ///< arg max of the transform logits vs proxy label
  double positive_cosine = 0.0;     ///< v of a transformed view vs its identity view
  double negative_cosine = 0.0;     ///< the same pairing with a different image
  std::size_t images = 0;
};

HeadProbe probe_heads(const Model<float>& model, const LabeledDataset& dataset,
                      const TransformSet& set, std::size_t max_images, std::uint64_t seed);

}  // namespace eqinv
