#include "ctcd/optim.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace ctcd {

void ParamStore::add(const std::string& name, Tensor tensor) {
  check_mutable("add");
  if (!params_.emplace(name, std::move(tensor)).second) {
    throw UsageError("duplicate parameter name '" + name + "'");
  }
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at_mut(const std::string& name) {
  check_mutable("at_mut");
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::freeze() {
  for (auto& [_, t] : params_) {
    t.set_requires_grad(false);
    t.zero_grad();
  }
  frozen_ = true;
}

void ParamStore::set_requires_grad(bool flag) {
  check_mutable("set_requires_grad");
  for (auto& [_, t] : params_) t.set_requires_grad(flag);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    Tensor copy = t.detach();
    copy.set_requires_grad(t.requires_grad());
    out.params_.emplace(name, std::move(copy));
  }
  out.frozen_ = frozen_;
  return out;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  check_mutable("copy_values_from");
  for (auto& [name, t] : params_) {
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' shape " + shape_str(src.shape()) +
                       " does not match " + shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
}

void ParamStore::check_mutable(const char* what) const {
  if (frozen_) throw UsageError(std::string("ParamStore::") + what + " on a frozen store");
}

double clip_gradients(ParamStore& params, double threshold) {
  if (!(threshold > 0)) throw UsageError("clip threshold must be positive");
  double sq = 0;
  for (const auto& [_, t] : params) {
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const float factor = static_cast<float>(threshold / norm);
    for (const auto& name : params.names()) {
      Tensor& t = params.at_mut(name);
      if (!t.has_grad()) continue;
      for (float& g : t.grad_mut()) g *= factor;
    }
  }
  return norm;
}

bool Adam::step(ParamStore& params) {
  if (params.frozen()) throw UsageError("Adam::step on a frozen ParamStore");
  bool finite = true;
  for (const auto& [_, t] : params) {
    for (float g : t.grad()) {
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
    }
    if (!finite) break;
  }
  if (!finite) {
    ++skipped_;
    std::cerr << "warning: non-finite gradient, skipping optimizer step (" << skipped_
              << " skipped so far)\n";
    params.zero_grad();
    return false;
  }

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = options_.lr;
  const double eps = options_.eps;
  for (const auto& name : params.names()) {
    Tensor& t = params.at_mut(name);
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(t.numel(), 0.0f);
      st.v.assign(t.numel(), 0.0f);
    }
    auto data = t.data();
    auto grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double m = b1 * st.m[i] + (1.0 - b1) * g;
      const double v = b2 * st.v[i] + (1.0 - b2) * g * g;
      st.m[i] = static_cast<float>(m);
      st.v[i] = static_cast<float>(v);
      const double mhat = m / c1;
      const double vhat = v / c2;
      data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
  params.zero_grad();
  return true;
}

}  // namespace ctcd
