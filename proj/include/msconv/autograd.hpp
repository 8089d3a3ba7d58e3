#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "msconv/tensor.hpp"

namespace msconv {

// Records differentiable operations in execution order. Records are appended
// after their inputs exist, so the list is topologically sorted by
// construction and backward() is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf node bound to a parameter. A parameter watched twice maps to the
  // same leaf, so multiple use sites accumulate into one gradient.
  Tensor watch(const Parameter& p);
  // Leaf node with a tape-local gradient (read back via grad_of).
  Tensor watch(const Tensor& t);

  // Registers an op output. Returns `out` bound to a fresh node.
  Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn);

  void backward(const Tensor& loss);

  // Adds g into the gradient buffer of the given tensor's node, if any.
  void accumulate(const Tensor& t, std::span<const double> g);
  std::span<const double> grad_of(const Tensor& t) const;

  std::size_t size() const { return records_.size(); }
  void clear();

 private:
  struct Record {
    int output = -1;
    BackwardFn fn;
  };
  int new_node(std::int64_t numel);

  std::vector<std::int64_t> node_sizes_;
  std::vector<std::vector<double>> grads_;
  std::vector<Record> records_;
  std::unordered_map<std::uint64_t, Tensor> param_leaves_;
  bool ran_ = false;
};

// Tape shared by the inputs, or nullptr when all inputs are detached.
// Throws if inputs live on different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

// Parameter value, watched on `tape` when one is supplied.
Tensor use(const Parameter& p, Tape* tape);

}  // namespace msconv
