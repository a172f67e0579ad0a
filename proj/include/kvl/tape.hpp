#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "kvl/tensor.hpp"

namespace kvl {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = static_cast<std::size_t>(-1);

    const Tensor& val() const;
    const Shape& shape() const;
};

// Per-backward-pass gradient accumulation buffers, one slot per tape node.
class GradBuf {
  public:
    explicit GradBuf(std::size_t n) : slots_(n) {}

    // Get-or-create a zero-initialized accumulator for node `id`.
    Tensor& acc(std::size_t id, const Shape& shape);
    bool has(std::size_t id) const { return slots_[id] != nullptr; }
    Tensor& get(std::size_t id) { return *slots_[id]; }
    Tensor take(std::size_t id);
    void drop(std::size_t id) { slots_[id].reset(); }

  private:
    std::vector<std::unique_ptr<Tensor>> slots_;
};

// Reverse-mode differentiation record. Nodes are appended in topological
// order (parents strictly precede children); backward() sweeps the record
// once in reverse. A tape is single-writer: one forward/backward pass owns
// one tape. Parameter values are shared (not copied) via shared_ptr.
class Tape {
  public:
    using Backward =
        std::function<void(const Tensor& gout, const Tape& tape, const std::vector<std::size_t>& parents, GradBuf& gb)>;

    // Non-trainable leaf.
    Var constant(Tensor value);
    Var constant(std::shared_ptr<const Tensor> value);

    // Trainable leaf; `key` identifies the parameter in the returned gradient
    // map (typically a ParamStore index).
    Var param(std::shared_ptr<const Tensor> value, std::size_t key);

    // Interior node produced by an op.
    Var node(Tensor value, std::vector<std::size_t> parents, Backward bw);
    Var node(std::shared_ptr<const Tensor> value, std::vector<std::size_t> parents, Backward bw);

    const Tensor& value(std::size_t id) const { return *nodes_[id].value; }
    bool wants_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Gradients of a scalar loss w.r.t. every trainable leaf reached from it,
    // keyed by the leaf's `key`. Unreached parameters are simply absent
    // (gradient zero). Non-trainable intermediate gradients are freed as the
    // sweep passes them. Each node is visited exactly once.
    std::unordered_map<std::size_t, Tensor> backward(const Var& loss) const;

  private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::vector<std::size_t> parents;
        Backward bw;
        bool trainable = false;
        bool needs_grad = false;
        std::size_t key = 0;
    };
    std::vector<Node> nodes_;
};

// Checks both vars live on the same tape.
Tape& same_tape(const Var& a, const Var& b, const char* op);

}  // namespace kvl
