#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sar2rgb/nn/tensor.hpp"
#include "sar2rgb/rng.hpp"

namespace sar2rgb::nn {

template <class T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

/// Ordered registry of trainable tensors. Registration order is the
/// serialization order and the optimizer state order.
template <class T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Matrix<T> init);

  std::vector<NamedParameter<T>>& items() { return items_; }
  const std::vector<NamedParameter<T>>& items() const { return items_; }
  const Var<T>& find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

  /// Binary blob: "S2RW" magic, u32 version, u32 count, then per tensor
  /// (u32 name length, name, u32 rows, u32 cols, f32 little-endian data).
  void save(std::ostream& os) const;
  /// Names and shapes must match the registered set exactly.
  void load(std::istream& is);

  template <class U>
  void copy_from(const ParameterSet<U>& other);

 private:
  std::vector<NamedParameter<T>> items_;
};

template <class T>
template <class U>
void ParameterSet<T>::copy_from(const ParameterSet<U>& other) {
  if (other.items().size() != items_.size()) throw std::invalid_argument("parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i)
    items_[i].var.mutable_value() = other.items()[i].var.value().template cast<T>();
}

// initializers
template <class T> Matrix<T> xavier_uniform(Index fan_in, Index fan_out, Rng& rng);
template <class T> Matrix<T> normal_init(Index rows, Index cols, double stddev, Rng& rng);
/// He-uniform for a conv kernel stored out x (in * k * k).
template <class T> Matrix<T> kaiming_uniform(Index out, Index fan_in, Rng& rng);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Moments are kept in double.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet<T>& params);
  std::int64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }

  void save(std::ostream& os) const;
  void load(std::istream& is, const ParameterSet<T>& params);

 private:
  AdamWConfig cfg_;
  std::int64_t steps_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

}  // namespace sar2rgb::nn
