#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "ds2net/tensor.hpp"

namespace ds2net {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid until the tape is reset.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

// Everything a backward rule may look at. `input_grads[i]` is null when input i
// does not require a gradient; rules accumulate into the non-null ones.
struct BackwardContext {
    const Tensor& output;
    const Tensor& grad_output;
    std::vector<const Tensor*> inputs;
    std::vector<Tensor*> input_grads;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Append-only record of a forward computation. Nodes are stored in creation
// order, which is a topological order by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op output. The node requires a gradient iff any input does.
    Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    const std::string& op(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    // Reverse-mode sweep from a single-element loss. Throws std::logic_error when
    // called a second time without reset().
    void backward(Var loss);
    bool has_run_backward() const noexcept { return backward_done_; }

    // Gradient of the last backward() loss w.r.t. v; zeros when v was unreachable.
    const Tensor& grad(Var v) const;

    void reset();

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        BackwardFn backward;
    };

    void check(Var v) const;

    std::deque<Node> nodes_;  // deque keeps value() references stable while recording
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

} // namespace ds2net
