#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tdn/tensor.hpp"

namespace tdn {

// Named trainable parameters. Iteration is lexicographic by name, so every
// walk over the store (SGD, checkpointing, gradient checks) is deterministic.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t count() const { return params_.size(); }
  std::int64_t total_elements() const;
  std::uint64_t seed() const { return seed_; }

  void zero_grads();
  // v <- momentum*v + g; p <- p - lr*v; grads are zeroed after the step.
  void sgd_step(double lr, double momentum);

  const std::map<std::string, Tensor>& entries() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::vector<double>> velocity_;
  std::uint64_t seed_ = 0;
};

// Weight initializers. Kaiming-uniform draws U(-b, b) with b = sqrt(6/fan_in).
Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng);
Tensor zeros_param(Shape shape);
Tensor ones_param(Shape shape);
// [C,1,k,k] depthwise kernel that starts as the identity map.
Tensor delta_depthwise(int channels, int k);
// [C,kt] temporal kernel that starts as the identity map.
Tensor delta_temporal(int channels, int kt);

// Checkpoint format (normative byte layout): magic "TDNW", u32 version,
// u32 entry count; per entry u16 name length, name bytes, u8 rank,
// u32 per dim, then raw little-endian f64 payload.
void save_checkpoint(const std::string& path, const ParamStore& params);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace tdn
