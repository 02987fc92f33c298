#include "hybridnet/param_store.hpp"

#include "hybridnet/error.hpp"

namespace hybridnet {

ParamId ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const std::size_t i = values_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{i};
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

ParamId ParamStore::at(std::string_view name) const {
  auto id = find(name);
  if (!id) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return *id;
}

GradBuffer::GradBuffer(const ParamStore& store) {
  grads_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) grads_.emplace_back(store.value(i).shape());
}

void GradBuffer::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

void GradBuffer::scale(double s) {
  for (auto& g : grads_) {
    for (auto& x : g.data()) x *= s;
  }
}

void GradBuffer::add(const GradBuffer& other) {
  if (other.grads_.size() != grads_.size()) throw DimensionError("grad buffer layout mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].data();
    auto src = other.grads_[i].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace hybridnet
