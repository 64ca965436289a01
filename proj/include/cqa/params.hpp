#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cqa/rng.hpp"
#include "cqa/tape.hpp"
#include "cqa/tensor.hpp"

namespace cqa {

// Ordered collection of named tensors: trainable parameters plus
// non-trainable buffers (batch-norm running statistics). Gradients are
// accumulated here between optimizer steps.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
  };

  struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
  };

  explicit ParamStore(std::uint64_t seed = 0) { rng_.seed = seed; }

  // Kaiming-style uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor<T>& add_linear_weight(const std::string& name, std::int64_t fan_in, std::int64_t fan_out) {
    Tensor<T> w(fan_in, fan_out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::uint64_t stream = rng_.counter++;
    for (std::int64_t i = 0; i < w.size(); ++i)
      w.at(i) = static_cast<T>(
          CounterRng::uniform_symmetric(rng_.seed, stream, static_cast<std::uint64_t>(i), bound));
    return add(name, std::move(w), true);
  }

  Tensor<T>& add_zeros(const std::string& name, std::int64_t rows, std::int64_t cols, bool trainable = true) {
    return add(name, Tensor<T>(rows, cols), trainable);
  }

  Tensor<T>& add_const(const std::string& name, std::int64_t rows, std::int64_t cols, T fill_value,
                       bool trainable = true) {
    Tensor<T> t(rows, cols);
    t.fill(fill_value);
    return add(name, std::move(t), trainable);
  }

  Tensor<T>& add(const std::string& name, Tensor<T> value, bool trainable) {
    if (index_.count(name)) throw ShapeMismatch("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), {}, trainable});
    Entry& e = entries_.back();
    e.grad = Tensor<T>(e.value.rows(), e.value.cols());
    return e.value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& value(const std::string& name) { return entries_[at(name)].value; }
  const Tensor<T>& value(const std::string& name) const { return entries_[at(name)].value; }
  Tensor<T>& grad(const std::string& name) { return entries_[at(name)].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  RngState& rng() { return rng_; }
  const RngState& rng() const { return rng_; }

  void zero_grads() {
    for (Entry& e : entries_) e.grad.zero();
  }

  // Binding of parameters to leaves of one tape.
  struct Binding {
    std::vector<typename Tape<T>::Ref> refs;  // parallel to entries()
  };

  Binding bind(Tape<T>& tape) const {
    Binding b;
    b.refs.reserve(entries_.size());
    for (const Entry& e : entries_) b.refs.push_back(tape.leaf(e.value, e.trainable));
    return b;
  }

  typename Tape<T>::Ref ref(const Binding& b, const std::string& name) const {
    return b.refs[at(name)];
  }

  // Add the tape's gradients into the store (gradient accumulation).
  void accumulate_grads(const Tape<T>& tape, const Binding& b) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!entries_[i].trainable) continue;
      if (!tape.has_grad(b.refs[i])) continue;
      const Tensor<T>& g = tape.grad(b.refs[i]);
      Tensor<T>& dst = entries_[i].grad;
      for (std::int64_t k = 0; k < g.size(); ++k) dst.at(k) += g.at(k);
    }
  }

 private:
  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeMismatch("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  RngState rng_;
};

}  // namespace cqa
