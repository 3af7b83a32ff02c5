#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace bayesfuse {

using NodeId = std::size_t;

class Tape;

/// Accumulates gradients during backward(); additive across fan-out.
class GradientMap {
public:
    explicit GradientMap(std::size_t nodes = 0) : grads_(nodes) {}

    bool contains(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }

    const Tensor& at(NodeId id) const {
        if (!contains(id)) throw std::out_of_range("GradientMap: no gradient for node " + std::to_string(id));
        return *grads_[id];
    }

    void accumulate(NodeId id, Tensor g) {
        auto& slot = grads_.at(id);
        if (!slot) {
            slot = std::move(g);
            return;
        }
        require_same_shape(*slot, g, "GradientMap::accumulate");
        auto dst = slot->data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    /// Mutable slot, zero-initialised on first use. For kernels that add in place.
    Tensor& slot(NodeId id, const Shape& shape) {
        auto& s = grads_.at(id);
        if (!s) s = Tensor(shape);
        return *s;
    }

    std::optional<Tensor> take(NodeId id) {
        std::optional<Tensor> out = std::move(grads_.at(id));
        grads_[id].reset();
        return out;
    }

private:
    std::vector<std::optional<Tensor>> grads_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradientMap& grads)>;

/// One recorded operation: its tag, inputs, output value and the closure that
/// propagates gradients to the inputs (saved values live in the closure).
struct ComputationRecord {
    NodeId id = 0;
    std::string op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
};

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    NodeId id() const noexcept { return id_; }
    Tape& tape() const { return *tape_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

/// Append-only record of a forward computation. Node ids are assigned in
/// creation order, which is a topological order of the (acyclic) graph.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable leaf.
    Var parameter(Tensor value) { return push("parameter", {}, std::move(value), true, nullptr); }

    /// Leaf that never receives a gradient.
    Var constant(Tensor value) { return push("constant", {}, std::move(value), false, nullptr); }

    /// Records an op. `backward` is only kept when some input requires a gradient.
    Var record(std::string op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
        bool needs = false;
        for (NodeId in : inputs) needs = needs || nodes_.at(in).requires_grad;
        return push(std::move(op), std::move(inputs), std::move(value), needs, needs ? std::move(backward) : nullptr);
    }

    const ComputationRecord& node(NodeId id) const { return nodes_.at(id); }
    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar loss. Returns d(loss)/d(node) for every
    /// node reached that requires a gradient (leaf parameters included).
    GradientMap backward(Var loss) const {
        if (&loss.tape() != this) throw std::invalid_argument("Tape::backward: loss belongs to another tape");
        const Tensor& lv = value(loss.id());
        if (lv.numel() != 1)
            throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
        GradientMap grads(nodes_.size());
        if (!requires_grad(loss.id())) return grads;
        grads.accumulate(loss.id(), Tensor(lv.shape(), 1.0));
        for (NodeId id = loss.id() + 1; id-- > 0;) {
            const auto& n = nodes_[id];
            if (!n.backward || !grads.contains(id)) continue;
            // Interior gradients are released once propagated; leaves keep theirs.
            const std::optional<Tensor> g = grads.take(id);
            n.backward(*g, grads);
        }
        return grads;
    }

private:
    Var push(std::string op, std::vector<NodeId> inputs, Tensor value, bool requires_grad, BackwardFn fn) {
        const NodeId id = nodes_.size();
        nodes_.push_back(ComputationRecord{id, std::move(op), std::move(inputs), std::move(value), requires_grad,
                                           std::move(fn)});
        return Var(this, id);
    }

    std::deque<ComputationRecord> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

} // namespace bayesfuse
