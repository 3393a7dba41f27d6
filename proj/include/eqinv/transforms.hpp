#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eqinv/image.hpp"
#include "eqinv/random.hpp"

namespace eqinv {

/// One quantized geometric transformation.
///
/// Applied about the image center as shear, then aspect ratio, then scale,
/// then rotation, then translation. Aspect ratio `a` stretches the horizontal
/// axis by sqrt(a) and compresses the vertical axis by 1/sqrt(a), so it
/// preserves area and stays independent of `scale`.
struct TransformSpec {
  int rotation = 0;          ///< counter-clockwise quarter turns, 0..3
  double scale = 1.0;
  double aspect_ratio = 1.0;
  double translate_x = 0.0;  ///< fraction of image width, [-1, 1]
  double translate_y = 0.0;  ///< fraction of image height, [-1, 1]
  double shear = 0.0;        ///< degrees

  bool is_identity() const;
  /// Pure quarter turn: rotation only, everything else at identity.
  bool is_quarter_turn() const;
  /// Throws ArgumentError when a field is out of its domain.
  void validate() const;

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Ordered transformation family. If the identity is present it sits at
/// index 0, where it serves as the reference view for the invariance loss.
class TransformSet {
 public:
  TransformSet(std::string name, std::vector<TransformSpec> specs);

  const std::string& name() const { return name_; }
  const std::vector<TransformSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  const TransformSpec& operator[](std::size_t i) const { return specs_[i]; }

 private:
  std::string name_;
  std::vector<TransformSpec> specs_;
};

/// CLI-visible preset identifiers.
inline constexpr std::array<std::string_view, 8> kPresetNames = {
    "m3", "m4", "m8", "m12", "m16", "m20", "m24", "affine972"};

/// Builds a named preset (case-insensitive). Unknown names raise ConfigError.
TransformSet build_preset(std::string_view name);

/// `k` distinct specs drawn uniformly without replacement, returned in the
/// order they appear in `full`. The identity is always kept at index 0.
TransformSet sample_affine_subset(const TransformSet& full, std::size_t k, Rng& rng);

/// Forward 2×2 matrix of the composed linear part (in x-right, y-down pixel
/// coordinates relative to the image center).
std::array<double, 4> linear_part(const TransformSpec& spec);

/// Warps `image` by `spec` with inverse mapping and bilinear sampling.
/// Out-of-bounds samples read as zero. Pure quarter turns on square images
/// are exact pixel permutations.
Image apply_transform(const Image& image, const TransformSpec& spec);

/// M transformed copies of a minibatch, transform-major.
struct ExpandedBatch {
  std::vector<Image> images;
  std::vector<std::size_t> class_labels;
  std::vector<std::size_t> proxy_labels;
  std::vector<std::size_t> instance_ids;
  std::size_t batch_size = 0;       ///< B
  std::size_t num_transforms = 0;   ///< M
};

/// Expands B images into B·M: all copies under specs[0] first, then specs[1], ...
ExpandedBatch expand_batch(std::span<const Image> images,
                           std::span<const std::size_t> labels,
                           std::span<const std::size_t> instance_ids,
                           const TransformSet& set);

/// One line of comma-separated fields per spec (dump-transforms output).
std::string format_spec(const TransformSpec& spec);
std::string dump_transforms(const TransformSet& set);

}  // namespace eqinv
