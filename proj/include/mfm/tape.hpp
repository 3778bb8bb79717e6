#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/tensor.hpp"

namespace mfm {

// Reverse-mode tape. Ops append a backward closure as they execute, so the
// list is topologically ordered by construction; backward() sweeps it once
// in reverse. Gradients accumulate directly in the shared tensor storage.
// A tape belongs to one logical thread: no concurrent record/backward.
template <Scalar Real>
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }

  // RAII activation: ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_slot(); }

  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return ops_.size(); }

  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure exactly once,
  // newest first. Returns the number of closures executed.
  std::size_t backward(Tensor<Real>& loss) {
    if (!loss.is_scalar())
      throw ParamError("backward: loss must be scalar, got shape " +
                       loss.shape.str());
    loss.ensure_grad();
    loss.grad()[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    return ops_.size();
  }

  // True when gradients should flow into t while this tape records:
  // either a watched leaf or an intermediate produced under this tape.
  bool tracks(const Tensor<Real>& t) const {
    return t.requires_grad() || t.tape_tag() == id_;
  }

 private:
  static Tape*& active_slot() {
    thread_local Tape* t = nullptr;
    return t;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::vector<std::function<void()>> ops_;
  std::uint64_t id_ = 0;
};

}  // namespace mfm
