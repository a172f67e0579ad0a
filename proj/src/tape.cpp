#include "kvl/tape.hpp"

namespace kvl {

const Tensor& Var::val() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape(); }

Tensor& GradBuf::acc(std::size_t id, const Shape& shape) {
    if (!slots_[id]) slots_[id] = std::make_unique<Tensor>(shape);
    return *slots_[id];
}

Tensor GradBuf::take(std::size_t id) {
    Tensor t = std::move(*slots_[id]);
    slots_[id].reset();
    return t;
}

Var Tape::constant(Tensor value) { return constant(std::make_shared<const Tensor>(std::move(value))); }

Var Tape::constant(std::shared_ptr<const Tensor> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false, false, 0});
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(std::shared_ptr<const Tensor> value, std::size_t key) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, true, true, key});
    return Var{this, nodes_.size() - 1};
}

Var Tape::node(Tensor value, std::vector<std::size_t> parents, Backward bw) {
    return node(std::make_shared<const Tensor>(std::move(value)), std::move(parents), std::move(bw));
}

Var Tape::node(std::shared_ptr<const Tensor> value, std::vector<std::size_t> parents, Backward bw) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(bw), false, needs, 0});
    return Var{this, nodes_.size() - 1};
}

std::unordered_map<std::size_t, Tensor> Tape::backward(const Var& loss) const {
    if (loss.tape != this) throw ArgError("backward: loss var belongs to a different tape");
    if (value(loss.id).size() != 1) {
        throw ArgError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape()));
    }
    GradBuf gb(loss.id + 1);
    gb.acc(loss.id, value(loss.id).shape()).fill(1.0);

    std::unordered_map<std::size_t, Tensor> grads;
    for (std::size_t idx = loss.id + 1; idx-- > 0;) {
        if (!gb.has(idx)) continue;
        const Node& n = nodes_[idx];
        if (n.bw && n.needs_grad) n.bw(gb.get(idx), *this, n.parents, gb);
        if (n.trainable) {
            Tensor g = gb.take(idx);
            auto it = grads.find(n.key);
            if (it == grads.end()) {
                grads.emplace(n.key, std::move(g));
            } else {
                // Same parameter used as several leaves: add contributions.
                Tensor& dst = it->second;
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
            }
        } else {
            gb.drop(idx);
        }
    }
    return grads;
}

Tape& same_tape(const Var& a, const Var& b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw ArgError(std::string(op) + ": operands must live on the same tape");
    }
    return *a.tape;
}

}  // namespace kvl
