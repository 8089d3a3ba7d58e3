#include "msconv/autograd.hpp"

#include <algorithm>

namespace msconv {

int Tape::new_node(std::int64_t numel) {
  node_sizes_.push_back(numel);
  grads_.emplace_back();
  return static_cast<int>(node_sizes_.size()) - 1;
}

Tensor Tape::watch(const Parameter& p) {
  auto it = param_leaves_.find(p.share_id());
  if (it != param_leaves_.end()) return it->second;
  const int node = new_node(p.numel());
  Parameter target = p;
  records_.push_back({node, [target](std::span<const double> g, Tape&) mutable {
                        target.accumulate_grad(g);
                      }});
  Tensor leaf = attach(p.value(), {this, node});
  param_leaves_.emplace(p.share_id(), leaf);
  return leaf;
}

Tensor Tape::watch(const Tensor& t) {
  const int node = new_node(t.numel());
  return attach(t.detach(), {this, node});
}

Tensor Tape::record(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  for (const Tensor* in : inputs) {
    if (in->grad_ref() && in->grad_ref().tape != this) {
      throw std::logic_error("tensor recorded on a different tape");
    }
  }
  const int node = new_node(out.numel());
  records_.push_back({node, std::move(fn)});
  return attach(std::move(out), {this, node});
}

void Tape::accumulate(const Tensor& t, std::span<const double> g) {
  const GradRef& ref = t.grad_ref();
  if (!ref) return;
  if (ref.tape != this) throw std::logic_error("accumulate into foreign tape");
  auto& buf = grads_[static_cast<std::size_t>(ref.node)];
  if (buf.empty()) {
    buf.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<const double> Tape::grad_of(const Tensor& t) const {
  const GradRef& ref = t.grad_ref();
  if (!ref || ref.tape != this) throw std::logic_error("tensor is not on this tape");
  return grads_[static_cast<std::size_t>(ref.node)];
}

void Tape::backward(const Tensor& loss) {
  const GradRef& ref = loss.grad_ref();
  if (!ref) throw std::logic_error("backward on a detached tensor");
  if (ref.tape != this) throw std::logic_error("backward on a tensor from another tape");
  if (loss.numel() != 1) throw ShapeError("backward expects a scalar loss, got " + loss.shape().str());
  if (ran_) throw std::logic_error("backward already ran on this tape; clear() it first");
  ran_ = true;
  grads_[static_cast<std::size_t>(ref.node)].assign(1, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& g = grads_[static_cast<std::size_t>(it->output)];
    if (g.empty()) continue;
    it->fn(g, *this);
    // Outputs are consumed exactly once; free the buffer.
    std::vector<double>().swap(g);
  }
}

void Tape::clear() {
  node_sizes_.clear();
  grads_.clear();
  records_.clear();
  param_leaves_.clear();
  ran_ = false;
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (t == nullptr || !t->grad_ref()) continue;
    if (tape != nullptr && tape != t->grad_ref().tape) {
      throw std::logic_error("inputs recorded on different tapes");
    }
    tape = t->grad_ref().tape;
  }
  return tape;
}

Tensor use(const Parameter& p, Tape* tape) { return tape ? tape->watch(p) : p.value(); }

}  // namespace msconv
