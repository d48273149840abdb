#include "ds2net/autodiff.hpp"

#include <stdexcept>

namespace ds2net {

const Tensor& Var::value() const {
    if (tape == nullptr) throw std::logic_error("Var is not bound to a tape");
    return tape->value(*this);
}

void Tape::check(Var v) const {
    if (v.tape != this) throw std::logic_error("Var belongs to a different tape");
    if (v.id >= nodes_.size()) throw std::logic_error("Var id out of range (tape was reset?)");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back({"leaf", std::move(value), {}, requires_grad, {}});
    return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    if (backward_done_) throw std::logic_error("cannot record onto a tape after backward(); call reset()");
#ifndef NDEBUG
    if (!value.all_finite()) {
        bool inputs_finite = true;
        for (const Var& in : inputs) inputs_finite = inputs_finite && this->value(in).all_finite();
        if (inputs_finite) throw std::runtime_error("op '" + op + "' produced a non-finite value from finite inputs");
    }
#endif
    Node node{std::move(op), std::move(value), {}, false, std::move(backward)};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        check(in);
        node.inputs.push_back(in.id);
        node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    check(v);
    return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
}

const std::string& Tape::op(Var v) const {
    check(v);
    return nodes_[v.id].op;
}

void Tape::backward(Var loss) {
    check(loss);
    if (backward_done_) throw std::logic_error("backward() already ran on this tape; call reset() first");
    const Tensor& loss_value = nodes_[loss.id].value;
    if (loss_value.numel() != 1)
        throw std::invalid_argument("backward() needs a scalar loss, got shape " + shape_string(loss_value.shape()));
    backward_done_ = true;

    grads_.assign(nodes_.size(), Tensor{});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].requires_grad) grads_[i] = Tensor::zeros_like(nodes_[i].value);
    if (!nodes_[loss.id].requires_grad) return;
    grads_[loss.id][0] = 1.0;

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward) continue;
        BackwardContext ctx{node.value, grads_[i], {}, {}};
        ctx.inputs.reserve(node.inputs.size());
        ctx.input_grads.reserve(node.inputs.size());
        for (std::size_t in : node.inputs) {
            ctx.inputs.push_back(&nodes_[in].value);
            ctx.input_grads.push_back(nodes_[in].requires_grad ? &grads_[in] : nullptr);
        }
        node.backward(ctx);
    }
}

const Tensor& Tape::grad(Var v) const {
    check(v);
    if (!backward_done_) throw std::logic_error("grad() requested before backward()");
    if (!nodes_[v.id].requires_grad) throw std::logic_error("grad() requested for a tensor that does not require grad");
    return grads_[v.id];
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    backward_done_ = false;
}

} // namespace ds2net
