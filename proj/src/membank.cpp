#include "eqinv/membank.hpp"

#include <algorithm>
#include <cmath>

#include "eqinv/error.hpp"

namespace eqinv {
namespace {

constexpr double kUnitTolerance = 1e-6;

void normalize_row(std::span<double> row) {
  double sq = 0.0;
  for (double x : row) sq += x * x;
  if (sq == 1.0) return;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NumericError("memory bank slot collapsed to a zero or non-finite vector");
  }
  for (double& x : row) x /= norm;
}

}  // namespace

MemoryBank::MemoryBank(std::size_t n_instances, std::size_t dim, std::uint64_t seed,
                       double momentum)
    : momentum_(momentum), rng_(make_rng(seed, 1)) {
  if (n_instances == 0 || dim == 0) throw ArgumentError("memory bank needs n >= 1 and dim >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ArgumentError("memory bank momentum must lie in [0, 1)");
  }
  slots_ = Tensor<double>({n_instances, dim});
  Rng init = make_rng(seed, 0);
  for (std::size_t i = 0; i < n_instances; ++i) {
    auto row = slots_.row(i);
    double sq = 0.0;
    do {
      sq = 0.0;
      for (double& x : row) {
        x = normal(init);
        sq += x * x;
      }
    } while (sq == 0.0);
    normalize_row(row);
  }
}

void MemoryBank::check_id(std::size_t id) const {
  if (id >= size()) {
    throw ArgumentError("instance id " + std::to_string(id) + " outside memory bank of " +
                        std::to_string(size()));
  }
}

std::span<const double> MemoryBank::get(std::size_t instance_id) const {
  check_id(instance_id);
  return slots_.row(instance_id);
}

Tensor<double> MemoryBank::gather(std::span<const std::size_t> ids) const {
  Tensor<double> out({ids.size(), dim()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = get(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor<double> MemoryBank::sample_negatives(std::span<const std::size_t> exclude_ids,
                                            std::size_t count) {
  std::vector<char> excluded(size(), 0);
  for (std::size_t id : exclude_ids) {
    check_id(id);
    excluded[id] = 1;
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    if (excluded[i] == 0) candidates.push_back(i);
  }
  if (count > candidates.size()) {
    throw ArgumentError("requested " + std::to_string(count) + " negatives but only " +
                        std::to_string(candidates.size()) + " slots are eligible");
  }
  const auto picks = sample_without_replacement(rng_, candidates.size(), count);
  Tensor<double> out({count, dim()});
  for (std::size_t k = 0; k < count; ++k) {
    const auto src = slots_.row(candidates[picks[k]]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

template <typename T>
void MemoryBank::update(std::span<const std::size_t> ids, const Tensor<T>& references) {
  if (references.rank() != 2 || references.dim(0) != ids.size() ||
      references.dim(1) != dim()) {
    throw ArgumentError("memory bank update needs one reference row of width " +
                        std::to_string(dim()) + " per id");
  }
  std::vector<std::size_t> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ArgumentError("memory bank update got duplicate instance ids");
  }
  for (std::size_t id : ids) check_id(id);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto ref = references.row(i);
    double sq = 0.0;
    for (T x : ref) sq += static_cast<double>(x) * static_cast<double>(x);
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-3) {
      throw ArgumentError("memory bank reference rows must be unit norm");
    }
    auto slot = slots_.row(ids[i]);
    for (std::size_t j = 0; j < slot.size(); ++j) {
      slot[j] = momentum_ * slot[j] + (1.0 - momentum_) * static_cast<double>(ref[j]);
    }
    normalize_row(slot);
  }
}

std::string MemoryBank::rng_state() const { return eqinv::rng_state(rng_); }

void MemoryBank::set_rng_state(const std::string& state) { eqinv::set_rng_state(rng_, state); }

void MemoryBank::set_slots(Tensor<double> slots) {
  if (slots.shape() != slots_.shape()) {
    throw ShapeMismatchError("memory bank slots have shape " + shape_string(slots.shape()) +
                             ", expected " + shape_string(slots_.shape()));
  }
  for (std::size_t i = 0; i < slots.dim(0); ++i) {
    double sq = 0.0;
    for (double x : slots.row(i)) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
      throw FormatError("memory bank slot " + std::to_string(i) + " is not unit norm");
    }
  }
  slots_ = std::move(slots);
}

template void MemoryBank::update<float>(std::span<const std::size_t>, const Tensor<float>&);
template void MemoryBank::update<double>(std::span<const std::size_t>, const Tensor<double>&);

}  // namespace eqinv
