#include "rxf/params.hpp"

#include <cmath>

namespace rxf {

Tensor ParamStore::insert(const std::string& name, Tensor t) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::add(const std::string& name, Shape shape, std::size_t fan_in) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng_.uniform(-s, s);
  return insert(name, Tensor(std::move(shape), std::move(v)));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape)));
}

Tensor ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: no parameter '" + name + "'");
  return params_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::load(const NamedTensors& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : values) by_name[n] = &t;
  for (auto& [name, t] : params_) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("checkpoint is missing parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                           ", model expects " + shape_str(t.shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), t.mutable_data().begin());
  }
}

}  // namespace rxf
