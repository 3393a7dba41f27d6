#include "eqinv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "eqinv/error.hpp"

namespace eqinv {

std::span<const std::uint8_t> LabeledDataset::raw(std::size_t i) const {
  if (i >= size()) throw ArgumentError("image index out of range");
  return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
}

Image LabeledDataset::image(std::size_t i) const {
  const auto src = raw(i);
  Image out(height, width, channels);
  for (std::size_t k = 0; k < src.size(); ++k) out.pixels[k] = static_cast<float>(src[k]) / 255.0f;
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (std::size_t l : labels) ++counts.at(l);
  return counts;
}

void LabeledDataset::push_back(std::span<const std::uint8_t> image, std::size_t label,
                               std::uint8_t coarse) {
  if (image.size() != image_bytes()) throw ArgumentError("image size does not match dataset");
  pixels.insert(pixels.end(), image.begin(), image.end());
  instance_ids.push_back(labels.size());
  labels.push_back(label);
  coarse_labels.push_back(coarse);
}

const std::vector<std::string>& cifar100_fine_names() {
  static const std::vector<std::string> names = {
      "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle",
      "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle",
      "caterpillar", "cattle", "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch",
      "crab", "crocodile", "cup", "dinosaur", "dolphin", "elephant", "flatfish", "forest",
      "fox", "girl", "hamster", "house", "kangaroo", "keyboard", "lamp", "lawn_mower",
      "leopard", "lion", "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain",
      "mouse", "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear",
      "pickup_truck", "pine_tree", "plain", "plate", "poppy", "porcupine", "possum", "rabbit",
      "raccoon", "ray", "road", "rocket", "rose", "sea", "seal", "shark", "shrew", "skunk",
      "skyscraper", "snail", "snake", "spider", "squirrel", "streetcar", "sunflower",
      "sweet_pepper", "table", "tank", "telephone", "television", "tiger", "tractor", "train",
      "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm"};
  return names;
}

LabeledDataset parse_cifar100_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError("CIFAR-100 data ends with a partial record at byte offset " +
                      std::to_string(offset));
  }
  LabeledDataset ds;
  ds.height = 32;
  ds.width = 32;
  ds.channels = 3;
  ds.class_names = cifar100_fine_names();
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  ds.pixels.resize(n * 3072);
  ds.labels.resize(n);
  ds.coarse_labels.resize(n);
  ds.instance_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    ds.coarse_labels[i] = rec[0];
    if (rec[1] >= 100) {
      throw FormatError("fine label " + std::to_string(rec[1]) + " at byte offset " +
                        std::to_string(i * kCifarRecordBytes + 1) + " is out of range");
    }
    ds.labels[i] = rec[1];
    ds.instance_ids[i] = i;
    std::uint8_t* dst = ds.pixels.data() + i * 3072;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) dst[p * 3 + c] = rec[2 + c * 1024 + p];
    }
  }
  return ds;
}

LabeledDataset load_cifar100_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  try {
    return parse_cifar100_binary(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_cifar100_binary(const LabeledDataset& ds, const std::filesystem::path& path) {
  if (ds.height != 32 || ds.width != 32 || ds.channels != 3) {
    throw ArgumentError("the CIFAR binary layout holds 32x32x3 images only");
  }
  std::vector<std::uint8_t> bytes(ds.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] > 255) throw ArgumentError("label does not fit in one byte");
    std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    rec[0] = ds.coarse_labels.empty() ? 0 : ds.coarse_labels[i];
    rec[1] = static_cast<std::uint8_t>(ds.labels[i]);
    const auto src = ds.raw(i);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) rec[2 + c * 1024 + p] = src[p * 3 + c];
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void SplitManifest::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&train, &val, &test}) {
    for (const auto& name : *list) {
      if (!seen.insert(name).second) {
        throw ConfigError("class '" + name + "' appears more than once in the split manifest");
      }
    }
  }
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

LabeledDataset empty_like(const LabeledDataset& ds) {
  LabeledDataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  return out;
}

}  // namespace

SplitManifest load_manifest(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no manifest directory " + dir.string());
  SplitManifest m;
  m.train = read_lines(dir / "train.txt");
  m.val = read_lines(dir / "val.txt");
  m.test = read_lines(dir / "test.txt");
  m.validate();
  return m;
}

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<std::string>*> files[] = {
      {"train.txt", &manifest.train}, {"val.txt", &manifest.val}, {"test.txt", &manifest.test}};
  for (const auto& [name, list] : files) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    for (const auto& c : *list) out << c << '\n';
  }
}

DatasetSplits apply_split(const LabeledDataset& ds, const SplitManifest& manifest) {
  manifest.validate();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) index[ds.class_names[i]] = i;

  DatasetSplits out{empty_like(ds), empty_like(ds), empty_like(ds)};
  // route[source label] = (split, new label)
  std::vector<std::pair<int, std::size_t>> route(ds.class_names.size(), {-1, 0});
  LabeledDataset* targets[] = {&out.train, &out.val, &out.test};
  const std::vector<std::string>* lists[] = {&manifest.train, &manifest.val, &manifest.test};
  for (int s = 0; s < 3; ++s) {
    for (const auto& name : *lists[s]) {
      auto it = index.find(name);
      if (it == index.end()) throw ConfigError("split manifest names unknown class '" + name + "'");
      route[it->second] = {s, targets[s]->class_names.size()};
      targets[s]->class_names.push_back(name);
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto [s, label] = route[ds.labels[i]];
    if (s < 0) continue;
    targets[s]->push_back(ds.raw(i), label, ds.coarse_labels.empty() ? 0 : ds.coarse_labels[i]);
  }
  if (ds.coarse_labels.empty()) {
    for (auto* t : targets) t->coarse_labels.clear();
  }
  return out;
}

namespace {

// 5×5 glyphs. No glyph has a rotational symmetry and no two glyphs are
// related by a quarter turn or a mirror, so every transformed view keeps
// its class and its orientation can only be read off the shape.
constexpr std::array<const char*, 24> kGlyphs = {
    "XX...XXX...XX...X....XXXX", ".X...XXX..XXXXXX.X..X....", "..X...XX..XXXXXXX.X..X...",
    "XXX...XXX...XXX...X....X.", ".X....XX...XX..XXXXX.XX..", "X....XXXXXXXX....X...XX..",
    "X....XX...X....XXXXXXX...", "....X....XXXXXX.XX...X...", "XX....XX...XXXXXXX....X..",
    ".X...XXX.X..XXX..XX....XX", "...X.XXXX...XX...X...XXXX", "XXXXXX..XX...XX....X....X",
    "..X...XX...X....XXXXXX...", "XXXXX.XX....X....XX...XX.", "...X.XXXXX.XX...XX....XX.",
    ".X.XX.XXX.XX...XX...X....", "...X....XXXXXXX.X.XX.X...", "...XX..XXXXX.X..XXX..X...",
    "..XXX..X....X...XXXXXXX..", "...X.XXXXXXX...XX....XX..", "XX....XX....XX..XXX..X.XX",
    "XX...X....X..XXXXXX.X.X..", "XX....XX....XX.XXXXXX....", ".X....X.X..X.X.XXXXX..XX.",
};

std::array<double, 3> hue_colour(double hue) {
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double phase = hue + static_cast<double>(c) / 3.0;
    rgb[static_cast<std::size_t>(c)] = 0.55 + 0.4 * std::cos(2.0 * 3.14159265358979 * phase);
  }
  return rgb;
}

}  // namespace

std::size_t synth_max_classes() { return kGlyphs.size(); }

LabeledDataset synth_dataset(std::size_t num_classes, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed) {
  if (num_classes == 0 || per_class == 0 || image_size < 4) {
    throw ArgumentError("synthetic corpus needs at least one class, one image and 4x4 pixels");
  }
  if (num_classes > kGlyphs.size()) {
    throw ArgumentError("synthetic corpus has " + std::to_string(kGlyphs.size()) + " classes");
  }
  LabeledDataset ds;
  ds.height = image_size;
  ds.width = image_size;
  ds.channels = 3;
  for (std::size_t c = 0; c < num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth%02zu", c);
    ds.class_names.emplace_back(name);
  }
  const std::size_t n = num_classes * per_class;
  ds.pixels.resize(n * ds.image_bytes());
  ds.labels.resize(n);
  ds.instance_ids.resize(n);

  const double size = static_cast<double>(image_size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % num_classes;
    ds.labels[i] = cls;
    ds.instance_ids[i] = i;
    Rng rng = make_rng(seed, i);
    const char* glyph = kGlyphs[cls];
    // four base hues shared across classes; glyphs are lit from above, the background
    // ramp has no fixed direction
    const auto colour = hue_colour(static_cast<double>(cls % 4) / 4.0 + uniform(rng, -0.08, 0.08));
    const double extent = size * 0.6 * uniform(rng, 0.85, 1.15);
    const double x0 = (size - extent) / 2.0 + uniform(rng, -0.1, 0.1) * size;
    const double y0 = (size - extent) / 2.0 + uniform(rng, -0.1, 0.1) * size;
    const double ramp_from = uniform(rng, 0.05, 0.2);
    const double ramp_to = uniform(rng, 0.3, 0.45);
    const std::size_t ramp_dir = uniform_index(rng, 4);

    std::uint8_t* dst = ds.pixels.data() + i * ds.image_bytes();
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double along[4] = {static_cast<double>(y), size - 1 - static_cast<double>(y),
                                 static_cast<double>(x), size - 1 - static_cast<double>(x)};
        const double bg = ramp_from + (ramp_to - ramp_from) * along[ramp_dir] / (size - 1);
        // 2×2 supersampled glyph coverage
        double cover = 0.0;
        double shade = 0.0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            const double u = (static_cast<double>(x) + 0.25 + 0.5 * sx - x0) / extent * 5.0;
            const double v = (static_cast<double>(y) + 0.25 + 0.5 * sy - y0) / extent * 5.0;
            if (u < 0.0 || v < 0.0 || u >= 5.0 || v >= 5.0) continue;
            if (glyph[static_cast<int>(v) * 5 + static_cast<int>(u)] == 'X') {
              cover += 0.25;
              shade += 0.25 * (1.0 - 0.12 * v);
            }
          }
        }
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double value = (1.0 - cover) * bg + shade * colour[ch] + 0.03 * normal(rng);
          dst[(y * image_size + x) * 3 + ch] =
              static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
        }
      }
    }
  }
  return ds;
}

AugmentDraws draw_augment(Rng& rng, std::size_t pad, double jitter) {
  AugmentDraws d;
  d.crop_y = static_cast<std::size_t>(uniform_index(rng, 2 * pad + 1));
  d.crop_x = static_cast<std::size_t>(uniform_index(rng, 2 * pad + 1));
  d.flip = uniform01(rng) < 0.5;
  d.brightness = uniform(rng, 1.0 - jitter, 1.0 + jitter);
  d.contrast = uniform(rng, 1.0 - jitter, 1.0 + jitter);
  d.saturation = uniform(rng, 1.0 - jitter, 1.0 + jitter);
  return d;
}

Image apply_augment(const Image& image, const AugmentDraws& d, std::size_t pad) {
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  const std::size_t cn = image.channels;
  if (pad >= h || pad >= w) throw ArgumentError("augmentation padding must be smaller than the image");
  if (d.crop_y > 2 * pad || d.crop_x > 2 * pad) throw ArgumentError("crop offset outside padding");

  auto reflect = [](long i, long n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  Image out(h, w, cn);
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = reflect(static_cast<long>(y + d.crop_y) - static_cast<long>(pad),
                            static_cast<long>(h));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xx = d.flip ? w - 1 - x : x;
      const long sx = reflect(static_cast<long>(xx + d.crop_x) - static_cast<long>(pad),
                              static_cast<long>(w));
      for (std::size_t c = 0; c < cn; ++c) {
        out.at(y, x, c) = image.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
      }
    }
  }

  auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };
  auto gray = [&](std::size_t p) {
    const float* px = out.pixels.data() + p * cn;
    return cn >= 3 ? 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2] : px[0];
  };
  const std::size_t plane = h * w;
  if (d.brightness != 1.0) {
    for (auto& v : out.pixels) v = clamp01(v * static_cast<float>(d.brightness));
  }
  if (d.contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mean += gray(p);
    const auto m = static_cast<float>(mean / static_cast<double>(plane));
    for (auto& v : out.pixels) v = clamp01((v - m) * static_cast<float>(d.contrast) + m);
  }
  if (d.saturation != 1.0 && cn >= 3) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float g = gray(p);
      float* px = out.pixels.data() + p * cn;
      for (std::size_t c = 0; c < cn; ++c) {
        px[c] = clamp01(g + (px[c] - g) * static_cast<float>(d.saturation));
      }
    }
  }
  return out;
}

}  // namespace eqinv
