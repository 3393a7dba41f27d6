#include "eqinv/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "eqinv/error.hpp"

namespace eqinv {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  if constexpr (std::is_unsigned_v<T>) {
    if (!value.empty() && value[0] == '-') {
      throw ConfigError("'" + key + "' must be nonnegative, got '" + value + "'");
    }
  }
  const auto res = std::from_chars(first, last, out);
  if (value.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define EQINV_SIZE(path)                                                                      \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {                            \
      c.path = parse_number<std::size_t>(k, v);                                               \
    },                                                                                        \
        [](const RunConfig& c) { return std::to_string(c.path); }                             \
  }
#define EQINV_U64(path)                                                                       \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {                            \
      c.path = parse_number<std::uint64_t>(k, v);                                             \
    },                                                                                        \
        [](const RunConfig& c) { return std::to_string(c.path); }                             \
  }
#define EQINV_DOUBLE(path)                                                                    \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {                            \
      c.path = parse_number<double>(k, v);                                                    \
    },                                                                                        \
        [](const RunConfig& c) { return format_double(c.path); }                              \
  }
#define EQINV_STRING(path)                                                                    \
  Field {                                                                                     \
    [](RunConfig& c, const std::string&, const std::string& v) { c.path = v; },               \
        [](const RunConfig& c) { return std::string(c.path); }                                \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"dataset", EQINV_STRING(dataset)},
      {"data_dir", Field{[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                         [](const RunConfig& c) { return c.data_dir.string(); }}},
      {"manifest_dir",
       Field{[](RunConfig& c, const std::string&, const std::string& v) { c.manifest_dir = v; },
             [](const RunConfig& c) { return c.manifest_dir.string(); }}},
      {"output_dir",
       Field{[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
             [](const RunConfig& c) { return c.output_dir.string(); }}},
      {"synth.classes", EQINV_SIZE(synth_classes)},
      {"synth.base_classes", EQINV_SIZE(synth_base_classes)},
      {"synth.per_class", EQINV_SIZE(synth_per_class)},
      {"synth.image_size", EQINV_SIZE(synth_image_size)},
      {"synth.seed", EQINV_U64(synth_seed)},
      {"seed", EQINV_U64(train.seed)},
      {"threads", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.threads = parse_number<int>(k, v);
                        },
                        [](const RunConfig& c) { return std::to_string(c.threads); }}},
      {"epochs", EQINV_SIZE(train.epochs)},
      {"batch_size", EQINV_SIZE(train.batch_size)},
      {"lr", EQINV_DOUBLE(train.lr)},
      {"momentum", EQINV_DOUBLE(train.momentum)},
      {"weight_decay", EQINV_DOUBLE(train.weight_decay)},
      {"lr_decay_epochs",
       Field{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.train.lr_decay_epochs = parse_list(k, v);
             },
             [](const RunConfig& c) { return format_list(c.train.lr_decay_epochs); }}},
      {"lr_decay_factor", EQINV_DOUBLE(train.lr_decay_factor)},
      {"generations", EQINV_SIZE(train.generations)},
      {"transform_preset", EQINV_STRING(train.transform_preset)},
      {"affine_samples", EQINV_SIZE(train.affine_samples)},
      {"augment_pad", EQINV_SIZE(train.augment_pad)},
      {"augment_jitter", EQINV_DOUBLE(train.augment_jitter)},
      {"accumulation", EQINV_SIZE(train.accumulation)},
      {"bank_momentum", EQINV_DOUBLE(train.bank_momentum)},
      {"loss.tau", EQINV_DOUBLE(train.loss.tau)},
      {"loss.kd_temperature", EQINV_DOUBLE(train.loss.kd_temperature)},
      {"loss.w_eq", EQINV_DOUBLE(train.loss.w_eq)},
      {"loss.w_in", EQINV_DOUBLE(train.loss.w_in)},
      {"loss.w_kd", EQINV_DOUBLE(train.loss.w_kd)},
      {"loss.negatives", EQINV_SIZE(train.loss.negatives_per_batch)},
      {"model.backbone", EQINV_STRING(train.model.backbone)},
      {"model.embed_dim", EQINV_SIZE(train.model.embed_dim)},
      {"model.invariant_dim", EQINV_SIZE(train.model.invariant_dim)},
      {"model.head_hidden", EQINV_SIZE(train.model.head_hidden)},
      {"eval.split", EQINV_STRING(eval_split)},
      {"eval.ways", EQINV_SIZE(eval.ways)},
      {"eval.shots", EQINV_SIZE(eval.shots)},
      {"eval.queries", EQINV_SIZE(eval.queries)},
      {"eval.tasks", EQINV_SIZE(eval.num_tasks)},
      {"eval.seed", EQINV_U64(eval.seed)},
      {"ablate.seeds", EQINV_SIZE(ablate_seeds)},
  };
  return table;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void RunConfig::validate() const {
  if (dataset != "synthetic" && dataset != "cifar-fs") {
    throw ConfigError("dataset must be 'synthetic' or 'cifar-fs', got '" + dataset + "'");
  }
  if (eval_split != "test" && eval_split != "val") {
    throw ConfigError("eval.split must be 'test' or 'val'");
  }
  if (dataset == "synthetic") {
    if (synth_classes < 2 || synth_base_classes == 0 || synth_base_classes >= synth_classes) {
      throw ConfigError("synthetic corpus needs 1 <= base_classes < classes");
    }
    if (synth_classes > synth_max_classes()) {
      throw ConfigError("synth.classes must be at most " + std::to_string(synth_max_classes()));
    }
    if (synth_per_class == 0 || synth_image_size < 4) {
      throw ConfigError("synthetic corpus needs images of at least 4x4 and one per class");
    }
  }
  if (eval.ways < 2 || eval.shots == 0 || eval.queries == 0 || eval.num_tasks == 0) {
    throw ConfigError("evaluation needs ways >= 2 and positive shots, queries and tasks");
  }
  if (ablate_seeds == 0) throw ConfigError("ablate.seeds must be at least 1");
  if (threads < 0) throw ConfigError("threads must be nonnegative");
  train.validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::pair<std::string, std::string> split_override(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + arg + "' is not key=value");
  return {trim(arg.substr(0, eq)), trim(arg.substr(eq + 1))};
}

}  // namespace eqinv
