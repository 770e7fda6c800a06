#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "rxf/io.hpp"
#include "rxf/random.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

/// Ordered collection of named trainable tensors.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Uniform in [-s, s] with s = 1/sqrt(fan_in).
  Tensor add(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const NamedTensors& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

  /// Copies values by name; every stored parameter must be present with a matching shape.
  void load(const NamedTensors& values);
  void save(const std::filesystem::path& path) const { save_archive(path, params_); }
  void load(const std::filesystem::path& path) { load(load_archive(path)); }

 private:
  Tensor insert(const std::string& name, Tensor t);

  NamedTensors params_;
  std::map<std::string, std::size_t> index_;
  Rng rng_;
};

}  // namespace rxf
