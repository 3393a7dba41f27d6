#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eqinv/image.hpp"
#include "eqinv/random.hpp"

namespace eqinv {

/// 8-bit images stored interleaved N×H×W×C with per-image class labels.
struct LabeledDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;
  std::vector<std::size_t> labels;
  std::vector<std::uint8_t> coarse_labels;  ///< CIFAR-100 only; may be empty
  std::vector<std::string> class_names;
  std::vector<std::size_t> instance_ids;  ///< 0..N-1

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return height * width * channels; }
  std::span<const std::uint8_t> raw(std::size_t i) const;
  /// Image i scaled to [0, 1].
  Image image(std::size_t i) const;
  /// Number of images per class, indexed by label.
  std::vector<std::size_t> class_counts() const;
  /// Appends one image. Pixels are interleaved H×W×C.
  void push_back(std::span<const std::uint8_t> pixels, std::size_t label,
                 std::uint8_t coarse = 0);

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// The 100 fine label names of CIFAR-100 in label order.
const std::vector<std::string>& cifar100_fine_names();

inline constexpr std::size_t kCifarRecordBytes = 3074;

/// Parses the CIFAR-100 binary layout: per record one coarse byte, one fine
/// byte and 3072 bytes of red, green and blue 32×32 planes.
LabeledDataset load_cifar100_binary(const std::filesystem::path& path);
LabeledDataset parse_cifar100_binary(std::span<const std::uint8_t> bytes);

/// Writes 32×32×3 datasets in the same layout. Labels above 255 are rejected.
void write_cifar100_binary(const LabeledDataset& dataset, const std::filesystem::path& path);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  /// ConfigError if a name repeats within or across lists.
  void validate() const;
};

/// Reads train.txt, val.txt and test.txt (one class name per line) from `dir`.
/// A missing file means an empty list.
SplitManifest load_manifest(const std::filesystem::path& dir);
void write_manifest(const SplitManifest& manifest, const std::filesystem::path& dir);

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

/// Routes images by class name. Each split gets labels 0..k-1 in manifest
/// order and instance ids 0..n-1.
DatasetSplits apply_split(const LabeledDataset& dataset, const SplitManifest& manifest);

/// Procedural corpus: class c is glyph c in one of four base hues, shaded
/// as if lit from above, over a brightness ramp of random direction. Colour,
/// position, size and noise are jittered per image.
/// At most synth_max_classes() classes.
LabeledDataset synth_dataset(std::size_t num_classes, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed);
std::size_t synth_max_classes();

/// The random choices of one standard augmentation.
struct AugmentDraws {
  std::size_t crop_y = 0;  ///< offset into the padded image
  std::size_t crop_x = 0;
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;

  /// Draws that leave the image unchanged for the given padding.
  static AugmentDraws noop(std::size_t pad) { return {pad, pad, false, 1.0, 1.0, 1.0}; }
};

inline constexpr std::size_t kDefaultPad = 4;
inline constexpr double kJitter = 0.4;

AugmentDraws draw_augment(Rng& rng, std::size_t pad = kDefaultPad, double jitter = kJitter);

/// Reflect-pad by `pad`, crop back to size, flip, then brightness, contrast
/// and saturation scaling, clamped to [0, 1].
Image apply_augment(const Image& image, const AugmentDraws& draws, std::size_t pad = kDefaultPad);

inline Image standard_augment(const Image& image, Rng& rng, std::size_t pad = kDefaultPad,
                              double jitter = kJitter) {
  return apply_augment(image, draw_augment(rng, pad, jitter), pad);
}

}  // namespace eqinv
