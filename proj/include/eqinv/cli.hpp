#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eqinv/config.hpp"
#include "eqinv/data.hpp"

namespace eqinv {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Keeps large tensor buffers on the heap between steps instead of
/// returning them to the kernel after every free (glibc only).
void tune_allocator();

/// Runs `body`, printing any library error to `err` and mapping it to an exit code.
int run_guarded(const std::function<int()>& body, std::ostream& err);

/// Training split and evaluation split for a configuration.
struct RunData {
  LabeledDataset train;
  LabeledDataset eval;
};

RunData load_run_data(const RunConfig& config);

/// Writes the effective configuration next to the run outputs.
void write_effective_config(const RunConfig& config);

int cmd_dump_transforms(const std::string& preset, std::ostream& out);

/// Synthetic: writes the corpus in CIFAR binary layout (32×32 only).
/// cifar-fs: reads train.bin/test.bin from `source`, writes one file per split
/// plus the manifest into the configured data_dir.
int cmd_prepare_data(const RunConfig& config, const std::filesystem::path& source,
                     std::ostream& out);

int cmd_train(const RunConfig& config, bool resume, std::ostream& out, std::ostream& err);

/// `checkpoint` defaults to the last generation under output_dir.
int cmd_eval(const RunConfig& config, std::optional<std::filesystem::path> checkpoint,
             std::optional<std::filesystem::path> report_path, std::ostream& out);

/// Baseline, invariance-only, equivariance-only and full, each over
/// ablate.seeds training seeds.
int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Embedding table plus a 2-component PCA projection next to it.
int cmd_embed(const RunConfig& config, const std::filesystem::path& checkpoint,
              const std::filesystem::path& out_path, std::size_t max_images,
              std::ostream& out);

}  // namespace eqinv
