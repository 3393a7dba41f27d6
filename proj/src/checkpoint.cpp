#include "eqinv/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <type_traits>

#include "eqinv/error.hpp"

namespace eqinv {
namespace {

constexpr char kMagic[8] = {'E', 'Q', 'V', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }

  template <typename T>
  void record(const std::string& name, const Tensor<T>& t) {
    str(name);
    u8(std::is_same_v<T, float> ? kF32 : kF64);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (T x : t.values()) {
      if constexpr (std::is_same_v<T, float>) {
        u32(std::bit_cast<std::uint32_t>(x));
      } else {
        u64(std::bit_cast<std::uint64_t>(x));
      }
    }
  }

  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  void need(std::size_t n) {
    if (end_ - pos_ < n) {
      throw IoError("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct RawRecord {
  std::uint8_t dtype = kF32;
  std::vector<std::size_t> shape;
  std::vector<float> f32;
  std::vector<double> f64;
};

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint64_t parse_u64(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint is missing '" + key + "'");
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("checkpoint field '" + key + "' is not an integer");
  }
  return v;
}

std::string get(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  return it == meta.end() ? std::string() : it->second;
}

template <typename T>
Tensor<T> take(RawRecord& r, const std::string& name) {
  if constexpr (std::is_same_v<T, float>) {
    if (r.dtype != kF32) throw FormatError("record '" + name + "' is not f32");
    return Tensor<T>(r.shape, std::move(r.f32));
  } else {
    if (r.dtype != kF64) throw FormatError("record '" + name + "' is not f64");
    return Tensor<T>(r.shape, std::move(r.f64));
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);

  std::map<std::string, std::string> meta;
  meta["model.backbone"] = ck.model.backbone;
  meta["model.embed_dim"] = std::to_string(ck.model.embed_dim);
  meta["model.num_classes"] = std::to_string(ck.model.num_classes);
  meta["model.num_transforms"] = std::to_string(ck.model.num_transforms);
  meta["model.invariant_dim"] = std::to_string(ck.model.invariant_dim);
  meta["model.head_hidden"] = std::to_string(ck.model.head_hidden);
  meta["model.in_channels"] = std::to_string(ck.model.in_channels);
  meta["model.seed"] = std::to_string(ck.model.seed);
  meta["generation"] = std::to_string(ck.generation);
  meta["epoch"] = std::to_string(ck.epoch);
  meta["step"] = std::to_string(ck.step);
  meta["run_config"] = ck.run_config;
  meta["bank.momentum"] = fmt_double(ck.bank_momentum);
  meta["bank.rng"] = ck.bank_rng;
  meta["trainer.rng"] = ck.trainer_rng;
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }

  if (!ck.velocity.empty() && ck.velocity.size() != ck.parameters.size()) {
    throw ArgumentError("velocity list must align with parameters");
  }
  const std::size_t count = ck.parameters.size() + ck.buffers.size() + ck.velocity.size() +
                            (ck.bank_slots.empty() ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& p : ck.parameters) w.record("param/" + p.name, p.value);
  for (const auto& b : ck.buffers) w.record("buffer/" + b.name, b.value);
  for (std::size_t i = 0; i < ck.velocity.size(); ++i) {
    w.record("velocity/" + ck.parameters[i].name, ck.velocity[i]);
  }
  if (!ck.bank_slots.empty()) w.record("bank/slots", ck.bank_slots);
  w.u64(fnv1a(w.bytes()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());

  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    if (buf.size() < sizeof(kMagic)) throw IoError("checkpoint truncated at byte offset 0");
    throw FormatError(path.string() + " is not a checkpoint file");
  }
  if (buf.size() < sizeof(kMagic) + 4 + 8) {
    throw IoError("checkpoint truncated at byte offset " + std::to_string(buf.size()));
  }
  const std::size_t body = buf.size() - 8;
  Reader r(buf, body);
  r.need(sizeof(kMagic));
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                               ", this build reads version " +
                               std::to_string(kCheckpointVersion));
  }

  std::map<std::string, std::string> meta;
  std::map<std::string, RawRecord> records;
  std::vector<std::string> order;
  {
    const std::uint32_t entries = r.u32();
    for (std::uint32_t i = 0; i < entries; ++i) {
      std::string k = r.str();
      meta[std::move(k)] = r.str();
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = r.str();
      RawRecord rec;
      rec.dtype = r.u8();
      if (rec.dtype != kF32 && rec.dtype != kF64) {
        throw FormatError("record '" + name + "' has unknown dtype");
      }
      const std::uint32_t rank = r.u32();
      std::uint64_t n = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        rec.shape.push_back(r.u64());
        n *= rec.shape.back();
      }
      const std::size_t width = rec.dtype == kF32 ? 4 : 8;
      if (n > (body - r.pos()) / width) {
        throw IoError("checkpoint truncated at byte offset " + std::to_string(buf.size()));
      }
      if (rec.dtype == kF32) {
        rec.f32.resize(n);
        for (auto& x : rec.f32) x = std::bit_cast<float>(r.u32());
      } else {
        rec.f64.resize(n);
        for (auto& x : rec.f64) x = std::bit_cast<double>(r.u64());
      }
      order.push_back(name);
      records[std::move(name)] = std::move(rec);
    }
  }
  // A truncated file usually fails above; a cut that lands on a record
  // boundary is caught by the hash.
  Reader tail(buf, buf.size());
  for (std::size_t i = 0; i < body; ++i) tail.u8();
  if (!r.done() || tail.u64() != fnv1a(buf.substr(0, body))) {
    throw IoError("checkpoint " + path.string() + " is truncated or corrupt");
  }

  Checkpoint ck;
  ck.model.backbone = get(meta, "model.backbone");
  ck.model.embed_dim = parse_u64(meta, "model.embed_dim");
  ck.model.num_classes = parse_u64(meta, "model.num_classes");
  ck.model.num_transforms = parse_u64(meta, "model.num_transforms");
  ck.model.invariant_dim = parse_u64(meta, "model.invariant_dim");
  ck.model.head_hidden = parse_u64(meta, "model.head_hidden");
  ck.model.in_channels = parse_u64(meta, "model.in_channels");
  ck.model.seed = parse_u64(meta, "model.seed");
  ck.generation = parse_u64(meta, "generation");
  ck.epoch = parse_u64(meta, "epoch");
  ck.step = parse_u64(meta, "step");
  ck.run_config = get(meta, "run_config");
  ck.bank_rng = get(meta, "bank.rng");
  ck.trainer_rng = get(meta, "trainer.rng");
  {
    const std::string m = get(meta, "bank.momentum");
    const auto res = std::from_chars(m.data(), m.data() + m.size(), ck.bank_momentum);
    if (res.ec != std::errc()) throw FormatError("checkpoint bank momentum is malformed");
  }

  for (const auto& name : order) {
    auto& rec = records[name];
    if (name.starts_with("param/")) {
      ck.parameters.push_back({name.substr(6), take<float>(rec, name)});
    } else if (name.starts_with("buffer/")) {
      ck.buffers.push_back({name.substr(7), take<float>(rec, name)});
    } else if (name.starts_with("velocity/")) {
      ck.velocity.push_back(take<float>(rec, name));
    } else if (name == "bank/slots") {
      ck.bank_slots = take<double>(rec, name);
    } else {
      throw FormatError("checkpoint has unknown record '" + name + "'");
    }
  }
  if (!ck.velocity.empty() && ck.velocity.size() != ck.parameters.size()) {
    throw FormatError("checkpoint velocity does not align with parameters");
  }
  return ck;
}

Checkpoint snapshot_model(const Model<float>& model) {
  Checkpoint ck;
  ck.model = model.config();
  ck.parameters = model.parameters();
  ck.buffers = model.buffers();
  return ck;
}

Model<float> restore_model(const Checkpoint& ck, const ModelConfig* expected) {
  Model<float> model(expected != nullptr ? *expected : ck.model);
  auto copy_into = [](std::vector<NamedTensor<float>>& dst,
                      const std::vector<NamedTensor<float>>& src, const char* kind) {
    if (dst.size() != src.size()) {
      throw ShapeMismatchError(std::string("checkpoint has ") + std::to_string(src.size()) +
                               " " + kind + " tensors, model expects " +
                               std::to_string(dst.size()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name != src[i].name || dst[i].value.shape() != src[i].value.shape()) {
        throw ShapeMismatchError(std::string(kind) + " '" + src[i].name + "' " +
                                 shape_string(src[i].value.shape()) + " does not match '" +
                                 dst[i].name + "' " + shape_string(dst[i].value.shape()));
      }
      dst[i].value = src[i].value;
    }
  };
  copy_into(model.parameters(), ck.parameters, "parameter");
  copy_into(model.buffers(), ck.buffers, "buffer");
  return model;
}

}  // namespace eqinv
