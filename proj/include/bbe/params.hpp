#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "bbe/tensor.hpp"

namespace bbe {

struct Parameter {
  std::string name;
  std::size_t index = 0;  // position in the owning store
  Tensor value;
  Tensor grad;
  Tensor m;  // AdamW first moment
  Tensor v;  // AdamW second moment
  std::uint64_t step = 0;
  bool frozen = false;
  bool decay = false;  // receives decoupled weight decay
};

// Ordered, name-unique parameter registry. Entries never move once added, so
// references stay valid for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool decay);

  bool contains(std::string_view name) const;
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  Parameter& operator[](std::size_t i) { return entries_[i]; }
  const Parameter& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  void set_frozen_prefix(std::string_view prefix, bool frozen);

  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

 private:
  std::deque<Parameter> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

bool starts_with_segment(std::string_view name, std::string_view prefix);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;

  void validate() const;
};

// One decoupled-weight-decay Adam update over every non-frozen entry, then
// clears all gradients. Frozen entries are left bit-identical.
void adamw_step(ParameterStore& store, const AdamWConfig& cfg);

}  // namespace bbe
