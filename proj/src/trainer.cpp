#include "eqinv/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "eqinv/error.hpp"
#include "eqinv/optim.hpp"
#include "json.hpp"

namespace eqinv {
namespace {

// Stream ids for derive_seed, kept apart so no two uses share a stream.
constexpr std::uint64_t kModelStream = 1000;
constexpr std::uint64_t kBankStream = 2000;
constexpr std::uint64_t kSubsetStream = 3000;
constexpr std::uint64_t kShuffleStream = 4000;
constexpr std::uint64_t kAugmentStream = 5000;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t kind, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0) {
  return derive_seed(derive_seed(derive_seed(derive_seed(seed, kind), a), b), c);
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& x, double w) {
  acc.ce += w * x.ce;
  acc.eq += w * x.eq;
  acc.in += w * x.in;
  acc.kd += w * x.kd;
  acc.total += w * x.total;
}

std::string last_checkpoint_name(std::size_t generation) {
  return "gen" + std::to_string(generation) + ".last.ckpt";
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be finite and nonnegative");
  }
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (lr_decay_epochs[i] >= epochs) throw ConfigError("lr decay epochs must be below epochs");
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) {
      throw ConfigError("lr decay epochs must be strictly increasing");
    }
  }
  if (!(lr_decay_factor > 0.0) || !std::isfinite(lr_decay_factor)) {
    throw ConfigError("lr_decay_factor must be positive");
  }
  if (generations == 0) throw ConfigError("generations must be at least 1");
  if (accumulation == 0 || accumulation > batch_size) {
    throw ConfigError("accumulation must lie in [1, batch_size]");
  }
  if (affine_samples < 2) throw ConfigError("affine_samples must be at least 2");
  if (!(augment_jitter >= 0.0 && augment_jitter < 1.0)) {
    throw ConfigError("augment_jitter must lie in [0, 1)");
  }
  if (!(bank_momentum >= 0.0 && bank_momentum < 1.0)) {
    throw ConfigError("bank_momentum must lie in [0, 1)");
  }
  loss.validate();
  ModelConfig probe = model;
  probe.num_classes = std::max<std::size_t>(probe.num_classes, 1);
  probe.num_transforms = std::max<std::size_t>(probe.num_transforms, 1);
  probe.validate();
  transform_set();
}

TransformSet TrainConfig::transform_set() const {
  TransformSet full = build_preset(transform_preset);
  if (full.name() != "affine972") return full;
  Rng rng(derive_seed(seed, kSubsetStream));
  return sample_affine_subset(full, affine_samples, rng);
}

ModelConfig TrainConfig::model_for(std::size_t num_classes, std::size_t generation) const {
  ModelConfig mc = model;
  mc.num_classes = num_classes;
  mc.num_transforms = transform_set().size();
  mc.seed = stream_seed(seed, kModelStream, generation);
  return mc;
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.lr;
  for (std::size_t e : config.lr_decay_epochs) {
    if (e <= epoch) lr *= config.lr_decay_factor;
  }
  return lr;
}

std::filesystem::path generation_checkpoint(const std::filesystem::path& dir,
                                            std::size_t generation) {
  return dir / ("gen" + std::to_string(generation) + ".ckpt");
}

GenerationResult train_generation(const TrainConfig& config, const LabeledDataset& train,
                                  std::size_t generation, const Model<float>* teacher,
                                  const TrainHooks& hooks) {
  config.validate();
  if (train.size() == 0) throw ConfigError("training set is empty");
  if ((teacher != nullptr) != (generation > 0)) {
    throw ArgumentError("a teacher is required exactly for generations after the first");
  }
  const TransformSet set = config.transform_set();
  const std::size_t n = train.size();
  const std::size_t b = std::min(config.batch_size, n);
  const ModelConfig mc = config.model_for(train.class_names.size(), generation);
  if (teacher != nullptr) {
    ModelConfig expect = teacher->config();
    expect.seed = mc.seed;
    if (!(expect == mc)) throw ConfigError("teacher architecture does not match the student");
  }
  const bool expand = config.expands();
  const bool use_bank = expand && config.loss.w_in > 0.0;

  GenerationResult result{Model<float>(mc), {}};
  Model<float>& model = result.model;
  TrainReport& report = result.report;
  report.generation = generation;
  Sgd<float> opt(model.parameters(), config.momentum, config.weight_decay);

  std::size_t negatives = 0;
  std::optional<MemoryBank> bank;
  if (use_bank) {
    negatives = std::min(config.loss.negatives_per_batch, n - b);
    if (negatives < config.loss.negatives_per_batch && hooks.log != nullptr) {
      *hooks.log << "warning: training set of " << n << " images allows only " << negatives
                 << " negatives per step (requested " << config.loss.negatives_per_batch
                 << ")\n";
    }
    bank.emplace(n, mc.invariant_dim, stream_seed(config.seed, kBankStream, generation),
                 config.bank_momentum);
  }
  report.negatives = negatives;

  std::size_t start_epoch = 0;
  std::uint64_t step = 0;
  const auto& dir = hooks.output_dir;
  if (hooks.resume && !dir.empty() && std::filesystem::exists(dir / last_checkpoint_name(generation))) {
    const Checkpoint ck = read_checkpoint(dir / last_checkpoint_name(generation));
    model = restore_model(ck, &mc);
    if (ck.velocity.size() != opt.velocity().size()) {
      throw FormatError("resume checkpoint lacks optimizer state");
    }
    opt.velocity() = ck.velocity;
    if (bank) {
      bank->set_slots(ck.bank_slots);
      bank->set_rng_state(ck.bank_rng);
    }
    start_epoch = ck.epoch;
    step = ck.step;
    if (hooks.log != nullptr) {
      *hooks.log << "resuming generation " << generation << " at epoch " << start_epoch << "\n";
    }
  }

  auto make_checkpoint = [&](std::size_t epochs_done) {
    Checkpoint ck = snapshot_model(model);
    ck.run_config = hooks.run_config;
    ck.generation = generation;
    ck.epoch = epochs_done;
    ck.step = step;
    ck.velocity = opt.velocity();
    if (bank) {
      ck.bank_slots = bank->slots();
      ck.bank_momentum = bank->momentum();
      ck.bank_rng = bank->rng_state();
    }
    return ck;
  };

  const std::size_t steps_per_epoch = n / b;
  const std::size_t chunks = std::min(config.accumulation, b);
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = lr_at(config, epoch);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(stream_seed(config.seed, kShuffleStream, generation, epoch));
    shuffle(order, shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto step_start = std::chrono::steady_clock::now();
      std::vector<std::size_t> ids(order.begin() + static_cast<long>(s * b),
                                   order.begin() + static_cast<long>((s + 1) * b));
      std::vector<std::size_t> labels(b);
      std::vector<Image> images(b);
      const auto count = static_cast<long>(b);
#pragma omp parallel for schedule(static)
      for (long i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(i);
        Rng rng(stream_seed(config.seed, kAugmentStream, generation, step, k));
        images[k] = standard_augment(train.image(ids[k]), rng, config.augment_pad,
                                     config.augment_jitter);
        labels[k] = train.labels[ids[k]];
      }

      Tensor<double> neg;
      Tensor<double> refs;
      if (bank) {
        neg = bank->sample_negatives(ids, negatives);
        refs = bank->gather(ids);
      }

      std::vector<Tensor<float>> grads;
      LossBreakdown breakdown;
      Tensor<float> reference_v({b, mc.invariant_dim});
      for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * b / chunks;
        const std::size_t hi = (c + 1) * b / chunks;
        const std::size_t cb = hi - lo;
        const std::span<const Image> sub_images(images.data() + lo, cb);
        const std::span<const std::size_t> sub_labels(labels.data() + lo, cb);
        const std::span<const std::size_t> sub_ids(ids.data() + lo, cb);

        ExpandedBatch eb;
        if (expand) {
          eb = expand_batch(sub_images, sub_labels, sub_ids, set);
        } else {
          eb.images.assign(sub_images.begin(), sub_images.end());
          eb.class_labels.assign(sub_labels.begin(), sub_labels.end());
          eb.proxy_labels.assign(cb, 0);
          eb.instance_ids.assign(sub_ids.begin(), sub_ids.end());
          eb.batch_size = cb;
          eb.num_transforms = 1;
        }
        const Tensor<float> x = to_tensor<float>(eb.images);

        ForwardTrace<float> trace;
        const ModelOutputs<float> out = model.forward(x, Mode::train, &trace);
        std::optional<ModelOutputs<float>> teacher_out;
        if (teacher != nullptr) teacher_out = teacher->forward(x, Mode::eval);

        Tensor<double> sub_refs;
        if (bank) {
          sub_refs = Tensor<double>({cb, mc.invariant_dim});
          std::copy(refs.row(lo).begin(), refs.row(lo).begin() + static_cast<long>(cb * mc.invariant_dim),
                    sub_refs.data());
        }
        ObjectiveInputs<float> in;
        in.class_labels = eb.class_labels;
        in.proxy_labels = eb.proxy_labels;
        in.batch_size = cb;
        in.bank_refs = bank ? &sub_refs : nullptr;
        in.negatives = bank ? &neg : nullptr;
        in.teacher = teacher_out ? &*teacher_out : nullptr;
        const ObjectiveValue<float> obj = compute_objective(out, in, config.loss);

        if (!std::isfinite(obj.breakdown.total)) {
          if (!dir.empty()) save_checkpoint(make_checkpoint(epoch), dir / ("gen" + std::to_string(generation) + ".abort.ckpt"));
          throw NumericError("non-finite loss at generation " + std::to_string(generation) +
                             " epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             " (ce=" + std::to_string(obj.breakdown.ce) + " eq=" +
                             std::to_string(obj.breakdown.eq) + " in=" +
                             std::to_string(obj.breakdown.in) + " kd=" +
                             std::to_string(obj.breakdown.kd) + ")");
        }

        auto g = model.backward(trace, obj.grads);
        model.update_running_stats(trace);
        if (chunks == 1) {
          grads = std::move(g);
          breakdown = obj.breakdown;
        } else {
          const double w = static_cast<double>(cb) / static_cast<double>(b);
          if (grads.empty()) {
            for (const auto& t : g) grads.emplace_back(t.shape());
          }
          for (std::size_t p = 0; p < g.size(); ++p) {
            for (std::size_t k = 0; k < g[p].size(); ++k) grads[p][k] += static_cast<float>(w) * g[p][k];
          }
          add_scaled(breakdown, obj.breakdown, w);
        }
        if (bank) {
          std::copy(out.v.data(), out.v.data() + cb * mc.invariant_dim, reference_v.row(lo).begin());
        }
      }

      opt.step(model.parameters(), grads, lr);
      if (bank) {
        bank->update(ids, reference_v);
        ++report.bank_updates;
      }

      add_scaled(record.loss, breakdown, 1.0 / static_cast<double>(steps_per_epoch));
      const double step_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - step_start)
                                  .count();
      if (hooks.metrics != nullptr) {
        nlohmann::ordered_json j;
        j["generation"] = generation;
        j["step"] = step;
        j["epoch"] = epoch;
        j["lr"] = lr;
        j["ce"] = breakdown.ce;
        j["eq"] = breakdown.eq;
        j["in"] = breakdown.in;
        j["kd"] = breakdown.kd;
        j["total"] = breakdown.total;
        j["wall_ms"] = step_ms;
        *hooks.metrics << j.dump() << '\n';
      }
      if (hooks.on_step) {
        StepInfo info{generation, epoch, step, lr, breakdown, bank ? ids : std::vector<std::size_t>{}};
        hooks.on_step(info);
      }
    }
    record.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - epoch_start)
                         .count();
    report.epochs.push_back(record);
    if (hooks.log != nullptr) {
      *hooks.log << "gen " << generation << " epoch " << epoch << " lr " << lr << " total "
                 << record.loss.total << " (ce " << record.loss.ce << " eq " << record.loss.eq
                 << " in " << record.loss.in << " kd " << record.loss.kd << ") "
                 << static_cast<long>(record.wall_ms) << " ms\n";
    }
    if (!dir.empty() && epoch + 1 < config.epochs) {
      save_checkpoint(make_checkpoint(epoch + 1), dir / last_checkpoint_name(generation));
    }
  }

  if (!dir.empty()) {
    report.checkpoint = generation_checkpoint(dir, generation);
    save_checkpoint(make_checkpoint(config.epochs), report.checkpoint);
    std::filesystem::remove(dir / last_checkpoint_name(generation));
  }
  return result;
}

std::vector<GenerationResult> run_pipeline(const TrainConfig& config, const LabeledDataset& train,
                                           const TrainHooks& hooks) {
  config.validate();
  std::vector<GenerationResult> out;
  for (std::size_t g = 0; g < config.generations; ++g) {
    const Model<float>* teacher = g == 0 ? nullptr : &out.back().model;
    if (hooks.resume && !hooks.output_dir.empty() &&
        std::filesystem::exists(generation_checkpoint(hooks.output_dir, g))) {
      const auto path = generation_checkpoint(hooks.output_dir, g);
      const Checkpoint ck = read_checkpoint(path);
      const ModelConfig mc = config.model_for(train.class_names.size(), g);
      if (ck.epoch == config.epochs) {
        GenerationResult done{restore_model(ck, &mc), {}};
        done.report.generation = g;
        done.report.checkpoint = path;
        if (hooks.log != nullptr) *hooks.log << "generation " << g << " already complete\n";
        out.push_back(std::move(done));
        continue;
      }
    }
    out.push_back(train_generation(config, train, g, teacher, hooks));
  }
  return out;
}

HeadProbe probe_heads(const Model<float>& model, const LabeledDataset& dataset,
                      const TransformSet& set, std::size_t max_images, std::uint64_t seed) {
  if (model.config().num_transforms != set.size()) {
    throw ArgumentError("transform set size does not match the model's transform head");
  }
  HeadProbe probe;
  const std::size_t n = std::min(max_images, dataset.size());
  if (n < 2) throw ArgumentError("probe needs at least two images");
  Rng rng(seed);
  const auto picks = sample_without_replacement(rng, dataset.size(), n);
  const std::size_t chunk = 32;
  const std::size_t m = set.size();
  std::size_t correct = 0, total = 0, pairs = 0;
  double pos = 0.0, neg = 0.0;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    const std::size_t cb = hi - lo;
    if (cb < 2) break;
    std::vector<Image> images;
    std::vector<std::size_t> labels, ids;
    for (std::size_t i = lo; i < hi; ++i) {
      images.push_back(dataset.image(picks[i]));
      labels.push_back(dataset.labels[picks[i]]);
      ids.push_back(picks[i]);
    }
    const ExpandedBatch eb = expand_batch(images, labels, ids, set);
    const auto out = model.forward(to_tensor<float>(eb.images), Mode::eval);
    for (std::size_t r = 0; r < eb.images.size(); ++r) {
      const auto row = out.transform_logits.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == eb.proxy_labels[r] ? 1 : 0;
      ++total;
    }
    for (std::size_t t = 1; t < m; ++t) {
      for (std::size_t i = 0; i < cb; ++i) {
        const std::size_t j = (i + 1 + uniform_index(rng, cb - 1)) % cb;
        const auto vt = out.v.row(t * cb + i);
        const auto vi = out.v.row(i);
        const auto vj = out.v.row(j);
        double sp = 0.0, sn = 0.0;
        for (std::size_t k = 0; k < vt.size(); ++k) {
          sp += static_cast<double>(vt[k]) * vi[k];
          sn += static_cast<double>(vt[k]) * vj[k];
        }
        pos += sp;
        neg += sn;
        ++pairs;
      }
    }
    probe.images += cb;
  }
  probe.transform_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  probe.positive_cosine = pos / static_cast<double>(pairs);
  probe.negative_cosine = neg / static_cast<double>(pairs);
  return probe;
}

}  // namespace eqinv
