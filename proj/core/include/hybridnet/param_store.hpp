#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hybridnet/tensor.hpp"

namespace hybridnet {

/// Index of a tensor inside a ParamStore.
struct ParamId {
  std::size_t index = 0;
};

/// Ordered registry of trainable tensors keyed by dotted names
/// (e.g. "dec.int.block3.mmha.Wq"). Iteration follows insertion order.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t total_elements() const;

  const std::string& name(ParamId id) const { return names_[id.index]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(ParamId id) { return values_[id.index]; }
  const Tensor& value(ParamId id) const { return values_[id.index]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }

  std::optional<ParamId> find(std::string_view name) const;
  ParamId at(std::string_view name) const;

  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient accumulators laid out like a ParamStore.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore& store);

  std::size_t size() const noexcept { return grads_.size(); }
  Tensor& operator[](std::size_t i) { return grads_[i]; }
  const Tensor& operator[](std::size_t i) const { return grads_[i]; }

  void zero();
  void scale(double s);
  /// this += other, elementwise in index order.
  void add(const GradBuffer& other);

 private:
  std::vector<Tensor> grads_;
};

}  // namespace hybridnet
