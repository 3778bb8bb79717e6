#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "mfm/common.hpp"

namespace mfm {

// Rank-4 extent. Image tensors read it as (batch, height, width, channels)
// with channels fastest, mirroring the H x W x C convention of the model;
// conv kernels reuse the same struct as (kh, kw, in_ch, out_ch).
struct Shape {
  int b = 1;
  int h = 1;
  int w = 1;
  int c = 1;

  Shape() = default;
  Shape(int b_, int h_, int w_, int c_) : b(b_), h(h_), w(w_), c(c_) {}

  std::size_t numel() const {
    return static_cast<std::size_t>(b) * h * w * c;
  }

  bool operator==(const Shape& o) const = default;

  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

template <Scalar Real>
struct TensorStorage {
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

// Lightweight handle: copies share the underlying buffer (and its gradient
// slot), so a parameter tensor captured by the tape and the one held by the
// optimizer see the same values and accumulated gradient.
template <Scalar Real>
class Tensor {
 public:
  Shape shape;

  Tensor() : st_(std::make_shared<TensorStorage<Real>>()) {}

  explicit Tensor(Shape s) : shape(s), st_(std::make_shared<TensorStorage<Real>>()) {
    st_->data.assign(s.numel(), Real(0));
  }

  static Tensor zeros(Shape s) { return Tensor(s); }

  // For op outputs that are fully overwritten; skips the zero fill.
  static Tensor uninitialized(Shape s) {
    Tensor t;
    t.shape = s;
    t.st_->data.resize(s.numel());
    return t;
  }

  static Tensor full(Shape s, Real v) {
    Tensor t(s);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from_data(Shape s, std::vector<Real> values) {
    if (values.size() != s.numel())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    Tensor t;
    t.shape = s;
    t.st_->data = std::move(values);
    return t;
  }

  std::vector<Real>& data() { return st_->data; }
  const std::vector<Real>& data() const { return st_->data; }

  std::size_t numel() const { return shape.numel(); }
  bool is_scalar() const { return numel() == 1; }
  Real scalar() const { return st_->data.at(0); }

  std::size_t index(int b, int y, int x, int c) const {
    return ((static_cast<std::size_t>(b) * shape.h + y) * shape.w + x) *
               shape.c + c;
  }
  Real& at(int b, int y, int x, int c) { return st_->data[index(b, y, x, c)]; }
  Real at(int b, int y, int x, int c) const {
    return st_->data[index(b, y, x, c)];
  }

  // Watched-leaf flag. Lives in the shared storage so every handle aliasing
  // this buffer (optimizer copy, tape capture) agrees on it.
  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool v) { st_->requires_grad = v; }

  // --- gradient slot ---------------------------------------------------
  bool has_grad() const { return !st_->grad.empty(); }

  std::vector<Real>& grad() {
    ensure_grad();
    return st_->grad;
  }
  const std::vector<Real>& grad_view() const { return st_->grad; }

  void ensure_grad() const {
    if (st_->grad.empty()) st_->grad.assign(numel(), Real(0));
  }

  void zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), Real(0));
  }

  void drop_grad() { st_->grad.clear(); }

  // Deep copy of values (fresh storage, no grad, untracked).
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.st_->data = st_->data;
    return t;
  }

  bool all_finite() const {
    for (Real v : st_->data)
      if (!finite(v)) return false;
    return true;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

  // --- tape tagging (see tape.hpp) -------------------------------------
  // Tapes carry unique ids rather than being compared by address, so a
  // tensor surviving its tape can never alias a later one. 0 = untagged.
  std::uint64_t tape_tag() const { return tag_; }
  void mark_on_tape(std::uint64_t tag) { tag_ = tag; }

 private:
  std::shared_ptr<TensorStorage<Real>> st_;
  std::uint64_t tag_ = 0;
};

template <Scalar Real>
inline void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                             const char* what) {
  if (!(a.shape == b.shape))
    throw ShapeError(std::string(what) + ": shapes differ " + a.shape.str() +
                     " vs " + b.shape.str());
}

}  // namespace mfm
