#include "eqinv/transforms.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "eqinv/error.hpp"

namespace eqinv {
namespace {

constexpr std::array<double, 3> kAspectRatios = {0.67, 1.0, 1.33};
constexpr std::array<double, 2> kScales = {0.67, 1.0};

// cos and sin of k quarter turns, exact.
constexpr std::array<int, 4> kQuarterCos = {1, 0, -1, 0};
constexpr std::array<int, 4> kQuarterSin = {0, 1, 0, -1};

TransformSpec make(int rotation, double scale, double aspect) {
  TransformSpec s;
  s.rotation = rotation;
  s.scale = scale;
  s.aspect_ratio = aspect;
  return s;
}

std::vector<TransformSpec> identity_first(std::vector<TransformSpec> specs) {
  std::stable_partition(specs.begin(), specs.end(),
                        [](const TransformSpec& s) { return s.is_identity(); });
  return specs;
}

std::vector<TransformSpec> aspect_by_rotation() {
  std::vector<TransformSpec> out;
  for (double ar : kAspectRatios) {
    for (int rot = 0; rot < 4; ++rot) out.push_back(make(rot, 1.0, ar));
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

bool TransformSpec::is_identity() const {
  return rotation == 0 && scale == 1.0 && aspect_ratio == 1.0 && translate_x == 0.0 &&
         translate_y == 0.0 && shear == 0.0;
}

bool TransformSpec::is_quarter_turn() const {
  return scale == 1.0 && aspect_ratio == 1.0 && translate_x == 0.0 &&
         translate_y == 0.0 && shear == 0.0;
}

void TransformSpec::validate() const {
  if (rotation < 0 || rotation > 3) {
    throw ArgumentError("rotation must be 0..3 quarter turns");
  }
  for (double v : {scale, aspect_ratio, translate_x, translate_y, shear}) {
    if (!std::isfinite(v)) throw ArgumentError("transform field is not finite");
  }
  if (scale <= 0.0 || aspect_ratio <= 0.0) {
    throw ArgumentError("scale and aspect ratio must be positive");
  }
  if (std::abs(translate_x) > 1.0 || std::abs(translate_y) > 1.0) {
    throw ArgumentError("translation must lie in [-1, 1]");
  }
  if (std::abs(shear) >= 90.0) throw ArgumentError("shear must be within (-90, 90) degrees");
}

TransformSet::TransformSet(std::string name, std::vector<TransformSpec> specs)
    : name_(std::move(name)), specs_(std::move(specs)) {
  if (specs_.size() < 2) throw ArgumentError("a transform set needs at least 2 specs");
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    specs_[i].validate();
    if (i > 0 && specs_[i].is_identity()) {
      throw ArgumentError("identity transform must be at index 0");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (specs_[i] == specs_[j]) throw ArgumentError("transform set has duplicate specs");
    }
  }
}

TransformSet build_preset(std::string_view name) {
  const std::string key = lower(name);
  std::vector<TransformSpec> specs;
  if (key == "m3") {
    for (double ar : kAspectRatios) specs.push_back(make(0, 1.0, ar));
  } else if (key == "m4") {
    for (int rot = 0; rot < 4; ++rot) specs.push_back(make(rot, 1.0, 1.0));
  } else if (key == "m8") {
    for (int rot = 0; rot < 4; ++rot) {
      for (double s : kScales) specs.push_back(make(rot, s, 1.0));
    }
  } else if (key == "m12") {
    specs = aspect_by_rotation();
  } else if (key == "m16") {
    specs = aspect_by_rotation();
    for (int rot = 0; rot < 4; ++rot) specs.push_back(make(rot, 0.67, 1.0));
  } else if (key == "m20") {
    specs = aspect_by_rotation();
    for (int rot = 0; rot < 4; ++rot) {
      for (double ar : {0.67, 1.33}) specs.push_back(make(rot, 0.67, ar));
    }
  } else if (key == "m24") {
    for (double ar : kAspectRatios) {
      for (int rot = 0; rot < 4; ++rot) {
        for (double s : kScales) specs.push_back(make(rot, s, ar));
      }
    }
  } else if (key == "affine972") {
    constexpr std::array<double, 3> kShifts = {-0.2, 0.0, 0.2};
    constexpr std::array<double, 3> kScaleAxis = {0.67, 1.0, 1.33};
    constexpr std::array<double, 3> kShears = {-20.0, 0.0, 20.0};
    for (int rot = 0; rot < 4; ++rot) {
      for (double tx : kShifts) {
        for (double ty : kShifts) {
          for (double s : kScaleAxis) {
            for (double ar : kAspectRatios) {
              for (double sh : kShears) {
                TransformSpec spec = make(rot, s, ar);
                spec.translate_x = tx;
                spec.translate_y = ty;
                spec.shear = sh;
                specs.push_back(spec);
              }
            }
          }
        }
      }
    }
  } else {
    throw ConfigError("unknown transform preset '" + std::string(name) + "'");
  }
  return TransformSet(key, identity_first(std::move(specs)));
}

TransformSet sample_affine_subset(const TransformSet& full, std::size_t k, Rng& rng) {
  if (k < 2) throw ArgumentError("subset size must be at least 2");
  if (k > full.size()) throw ArgumentError("subset size exceeds transform set size");
  if (!full[0].is_identity()) {
    throw ArgumentError("source transform set has no identity to anchor the subset");
  }
  auto picks = sample_without_replacement(rng, full.size() - 1, k - 1);
  std::sort(picks.begin(), picks.end());
  std::vector<TransformSpec> specs{full[0]};
  for (std::size_t p : picks) specs.push_back(full[p + 1]);
  return TransformSet(full.name() + "-sample" + std::to_string(k), std::move(specs));
}

std::array<double, 4> linear_part(const TransformSpec& spec) {
  const double c = kQuarterCos[static_cast<std::size_t>(spec.rotation)];
  const double s = kQuarterSin[static_cast<std::size_t>(spec.rotation)];
  const double sx = spec.scale * std::sqrt(spec.aspect_ratio);
  const double sy = spec.scale / std::sqrt(spec.aspect_ratio);
  const double sh = spec.shear == 0.0 ? 0.0 : std::tan(spec.shear * std::numbers::pi / 180.0);
  // R · diag(sx, sy) · [[1, sh], [0, 1]]
  const double m00 = sx;
  const double m01 = sx * sh;
  const double m10 = 0.0;
  const double m11 = sy;
  return {c * m00 + s * m10, c * m01 + s * m11, -s * m00 + c * m10, -s * m01 + c * m11};
}

namespace {

Image quarter_turn(const Image& in, int turns) {
  const std::size_t n = in.height;
  Image out(n, n, in.channels);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t sr = r;
      std::size_t sc = c;
      switch (turns) {
        case 1: sr = c; sc = n - 1 - r; break;
        case 2: sr = n - 1 - r; sc = n - 1 - c; break;
        case 3: sr = n - 1 - c; sc = r; break;
        default: break;
      }
      for (std::size_t ch = 0; ch < in.channels; ++ch) out.at(r, c, ch) = in.at(sr, sc, ch);
    }
  }
  return out;
}

}  // namespace

Image apply_transform(const Image& image, const TransformSpec& spec) {
  spec.validate();
  if (spec.is_identity()) return image;
  if (image.height < 2 || image.width < 2) {
    throw ArgumentError("apply_transform needs images of at least 2x2");
  }
  if (spec.is_quarter_turn() && image.height == image.width) {
    return quarter_turn(image, spec.rotation);
  }

  const auto a = linear_part(spec);
  const double det = a[0] * a[3] - a[1] * a[2];
  const std::array<double, 4> inv = {a[3] / det, -a[1] / det, -a[2] / det, a[0] / det};
  const double w = static_cast<double>(image.width);
  const double h = static_cast<double>(image.height);
  const double cx = (w - 1.0) / 2.0;
  const double cy = (h - 1.0) / 2.0;
  const double tx = spec.translate_x * w;
  const double ty = spec.translate_y * h;
  const auto width = static_cast<long>(image.width);
  const auto height = static_cast<long>(image.height);

  Image out(image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx - tx;
      const double dy = static_cast<double>(y) - cy - ty;
      const double sx = inv[0] * dx + inv[1] * dy + cx;
      const double sy = inv[2] * dx + inv[3] * dy + cy;
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      const double fx = sx - fx0;
      const double fy = sy - fy0;
      const auto x0 = static_cast<long>(fx0);
      const auto y0 = static_cast<long>(fy0);
      const std::array<std::pair<long, long>, 4> taps = {
          std::pair{y0, x0}, std::pair{y0, x0 + 1}, std::pair{y0 + 1, x0},
          std::pair{y0 + 1, x0 + 1}};
      const std::array<double, 4> weights = {(1 - fx) * (1 - fy), fx * (1 - fy),
                                             (1 - fx) * fy, fx * fy};
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 4; ++t) {
          const auto [ty_, tx_] = taps[t];
          if (tx_ < 0 || ty_ < 0 || tx_ >= width || ty_ >= height || weights[t] == 0.0) {
            continue;
          }
          acc += weights[t] * image.at(static_cast<std::size_t>(ty_),
                                       static_cast<std::size_t>(tx_), ch);
        }
        out.at(y, x, ch) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ExpandedBatch expand_batch(std::span<const Image> images,
                           std::span<const std::size_t> labels,
                           std::span<const std::size_t> instance_ids,
                           const TransformSet& set) {
  const std::size_t b = images.size();
  if (b == 0) throw ArgumentError("expand_batch needs at least one image");
  if (labels.size() != b || instance_ids.size() != b) {
    throw ArgumentError("labels and instance ids must match the image count");
  }
  const std::size_t m = set.size();
  ExpandedBatch out;
  out.batch_size = b;
  out.num_transforms = m;
  out.images.resize(b * m);
  out.class_labels.resize(b * m);
  out.proxy_labels.resize(b * m);
  out.instance_ids.resize(b * m);

  const auto total = static_cast<long>(b * m);
#pragma omp parallel for schedule(dynamic, 4)
  for (long idx = 0; idx < total; ++idx) {
    const auto slot = static_cast<std::size_t>(idx);
    const std::size_t t = slot / b;
    const std::size_t i = slot % b;
    out.images[slot] = apply_transform(images[i], set[t]);
    out.class_labels[slot] = labels[i];
    out.proxy_labels[slot] = t;
    out.instance_ids[slot] = instance_ids[i];
  }
  return out;
}

std::string format_spec(const TransformSpec& spec) {
  std::ostringstream os;
  os << spec.rotation * 90 << ',' << spec.scale << ',' << spec.aspect_ratio << ','
     << spec.translate_x << ',' << spec.translate_y << ',' << spec.shear;
  return os.str();
}

std::string dump_transforms(const TransformSet& set) {
  std::ostringstream os;
  os << "index,rotation_deg,scale,aspect_ratio,translate_x,translate_y,shear_deg\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    os << i << ',' << format_spec(set[i]) << '\n';
  }
  return os.str();
}

}  // namespace eqinv
