#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>

#include "dyad/common.hpp"

namespace dyad {

namespace detail {

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  bool tape_output = false;  // produced by a recorded operation
  std::vector<T> grad;       // empty until first touched by backward
};

}  // namespace detail

// Dense row-major tensor with shared payload. Copies are shallow; use clone()
// for an independent buffer. Values are immutable by convention once a tensor
// has entered a recorded forward pass; grad is the only mutable slot after.
template <class T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0), bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage<T>>()) {
    s_->shape = std::move(shape);
    s_->values.assign(shape_numel(s_->shape), fill);
    s_->requires_grad = requires_grad;
  }

  TensorT(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage<T>>()) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    s_->shape = std::move(shape);
    s_->values = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return s_->values.size(); }

  std::vector<T>& values() { return s_->values; }
  const std::vector<T>& values() const { return s_->values; }
  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }

  bool requires_grad() const { return s_->requires_grad; }
  TensorT& set_requires_grad(bool b) {
    s_->requires_grad = b;
    return *this;
  }

  // True when gradients must flow through this tensor.
  bool grad_path() const { return s_ && (s_->requires_grad || s_->tape_output); }
  void mark_tape_output() { s_->tape_output = true; }

  // Gradient buffer, allocated zero-filled on first access.
  std::vector<T>& grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
  }
  const std::vector<T>* grad_if() const { return s_->grad.empty() ? nullptr : &s_->grad; }
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return s_->values[0];
  }

  TensorT clone() const {
    TensorT out(s_->shape, s_->values, s_->requires_grad);
    return out;
  }

  bool all_finite() const {
    for (T v : s_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  detail::TensorStorage<T>* storage() const { return s_.get(); }
  std::shared_ptr<detail::TensorStorage<T>> storage_ptr() const { return s_; }

 private:
  std::shared_ptr<detail::TensorStorage<T>> s_;
};

// Reverse-mode tape. Construction pushes the tape as the active recorder for
// the current thread; destruction pops it. Ops append entries in forward
// order; backward() replays them once, in reverse. Intermediate gradients are
// reset on every backward() call while leaf gradients accumulate across calls
// (the caller resets leaves between optimizer steps).
template <class T>
class TapeT {
 public:
  TapeT() {
    prev_ = active_;
    active_ = this;
  }
  ~TapeT() { active_ = prev_; }

  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* active() noexcept { return active_; }

  void record(const char* op, std::vector<TensorT<T>> inputs, TensorT<T> output,
              std::function<void()> pull) {
    output.mark_tape_output();
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(pull)});
  }

  std::size_t size() const { return entries_.size(); }
  const char* op_tag(std::size_t i) const { return entries_[i].op; }

  void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss");
    // Intermediates (tensors produced by entries) restart from zero; leaves
    // keep whatever they have accumulated.
    for (auto& e : entries_) {
      e.output.grad();
      e.output.zero_grad();
    }
    TensorT<T> seed = loss;
    seed.grad()[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->pull();
    }
  }

 private:
  struct Entry {
    const char* op;
    std::vector<TensorT<T>> inputs;
    TensorT<T> output;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;

  static thread_local TapeT* active_;
  TapeT* prev_ = nullptr;
};

template <class T>
thread_local TapeT<T>* TapeT<T>::active_ = nullptr;

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace dyad
