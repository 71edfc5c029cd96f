#include "bbe/params.hpp"

#include <cmath>

#include "bbe/error.hpp"

namespace bbe {

Parameter& ParameterStore::add(std::string name, Tensor value, bool decay) {
  if (by_name_.count(name)) fail(ErrorKind::State, "duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.index = entries_.size();
  p.grad = Tensor(value.shape());
  p.m = Tensor(value.shape());
  p.v = Tensor(value.shape());
  p.value = std::move(value);
  p.decay = decay;
  by_name_.emplace(p.name, p.index);
  return entries_.emplace_back(std::move(p));
}

bool ParameterStore::contains(std::string_view name) const { return find(name) != nullptr; }

Parameter* ParameterStore::find(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : &entries_[it->second];
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : &entries_[it->second];
}

Parameter& ParameterStore::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  fail(ErrorKind::State, "unknown parameter '" + std::string(name) + "'");
}

const Parameter& ParameterStore::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  fail(ErrorKind::State, "unknown parameter '" + std::string(name) + "'");
}

void ParameterStore::zero_grad() {
  for (auto& p : entries_) p.grad.fill(0.0);
}

bool starts_with_segment(std::string_view name, std::string_view prefix) {
  return name.size() > prefix.size() && name.substr(0, prefix.size()) == prefix &&
         name[prefix.size()] == '.';
}

void ParameterStore::set_frozen_prefix(std::string_view prefix, bool frozen) {
  for (auto& p : entries_) {
    if (starts_with_segment(p.name, prefix)) p.frozen = frozen;
  }
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p.value.numel();
  return n;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) {
    if (!p.frozen) n += p.value.numel();
  }
  return n;
}

void AdamWConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail(ErrorKind::Config, "adamw beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail(ErrorKind::Config, "adamw beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) fail(ErrorKind::Config, "adamw epsilon must be > 0");
  if (!(learning_rate > 0.0)) fail(ErrorKind::Config, "adamw learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::Config, "adamw weight_decay must be >= 0");
}

void adamw_step(ParameterStore& store, const AdamWConfig& cfg) {
  cfg.validate();
  for (auto& p : store) {
    if (p.grad.shape() != p.value.shape() || p.m.shape() != p.value.shape() ||
        p.v.shape() != p.value.shape()) {
      fail(ErrorKind::State, "gradient/state shape mismatch for '" + p.name + "'");
    }
  }
  for (auto& p : store) {
    if (p.frozen) continue;
    p.step += 1;
    const double t = static_cast<double>(p.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = p.decay ? cfg.learning_rate * cfg.weight_decay : 0.0;
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = p.m.data();
    auto v = p.v.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      if (decay != 0.0) value[i] *= 1.0 - decay;
      value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    require_finite(p.value, "adamw_step");
  }
  store.zero_grad();
}

}  // namespace bbe
