#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eqinv/random.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

/// Per-instance unit vectors used as contrastive negatives and as the past
/// reference of each training image. Slots are kept in double precision so
/// repeated momentum updates do not drift off the unit sphere.
class MemoryBank {
 public:
  static constexpr double kDefaultMomentum = 0.5;

  /// Slots start as i.i.d. random unit vectors drawn from `seed`.
  MemoryBank(std::size_t n_instances, std::size_t dim, std::uint64_t seed,
             double momentum = kDefaultMomentum);

  std::size_t size() const { return slots_.dim(0); }
  std::size_t dim() const { return slots_.dim(1); }
  double momentum() const { return momentum_; }
  const Tensor<double>& slots() const { return slots_; }

  /// Current slot of one instance.
  std::span<const double> get(std::size_t instance_id) const;

  /// Rows for each id, in order.
  Tensor<double> gather(std::span<const std::size_t> ids) const;

  /// `count` distinct slots, none of them in `exclude_ids`, drawn uniformly
  /// without replacement from the bank's own generator.
  Tensor<double> sample_negatives(std::span<const std::size_t> exclude_ids, std::size_t count);

  /// slot <- normalize(momentum * slot + (1 - momentum) * reference), per row.
  template <typename T>
  void update(std::span<const std::size_t> ids, const Tensor<T>& references);

  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  /// Replaces every slot, e.g. when restoring from a checkpoint. Rows must be unit norm.
  void set_slots(Tensor<double> slots);

 private:
  void check_id(std::size_t id) const;

  Tensor<double> slots_;
  double momentum_;
  Rng rng_;
};

}  // namespace eqinv
