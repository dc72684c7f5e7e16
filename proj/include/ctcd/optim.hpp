#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctcd/tensor.hpp"

namespace ctcd {

/// Named parameters, ordered by name. A frozen store rejects mutation and
/// may be shared across threads for read-only evaluation.
class ParamStore {
 public:
  void add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at_mut(const std::string& name);

  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;

  void freeze();
  bool frozen() const { return frozen_; }
  void set_requires_grad(bool flag);
  void zero_grad();

  /// Deep copy of all values (no grads, same flags).
  ParamStore clone() const;
  /// Copies values from `other` (same names and shapes required).
  void copy_values_from(const ParamStore& other);

 private:
  void check_mutable(const char* what) const;

  std::map<std::string, Tensor> params_;
  bool frozen_ = false;
};

/// Returns the pre-clip global L2 norm; scales all grads by threshold/norm
/// when it exceeds `threshold`.
double clip_gradients(ParamStore& params, double threshold);

struct AdamOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment state is keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update to every parameter that requires grad, then zeroes
  /// grads. A non-finite gradient anywhere skips the whole step (grads are
  /// still zeroed) and bumps skipped_steps(). Returns false on a skip.
  bool step(ParamStore& params);

  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }
  std::size_t steps() const { return step_; }
  std::size_t skipped_steps() const { return skipped_; }

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamOptions options_;
  std::size_t step_ = 0;
  std::size_t skipped_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace ctcd
