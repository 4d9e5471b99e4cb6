#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "aau/param.hpp"
#include "aau/tensor.hpp"

namespace aau {

class Tape;

// Handle to a tape node. Cheap to copy; only valid for the tape that made it.
struct Value {
    Tape* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    const TensorF& val() const;
};

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

inline IndexMap make_index_map(std::vector<std::int64_t> idx) {
    return std::make_shared<const std::vector<std::int64_t>>(std::move(idx));
}

// Append-only record of primitive ops. Nodes are created in forward order, so
// reverse insertion order is a valid reverse topological order for backward.
class Tape {
public:
    Value input(TensorF v);
    Value leaf(Parameter& p); // one node per parameter per tape, cached

    const TensorF& val(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }
    const Shape& shape(Value v) const { return val(v).shape; }

    // Gradient of the last backward() w.r.t. this node (zeros if untouched).
    TensorF grad_of(Value v) const;

    // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse order.
    // root must hold a single scalar. Parameter leaves accumulate into
    // Parameter::grad.
    void backward(Value root);

    std::size_t size() const { return nodes_.size(); }
    std::size_t backward_visits() const { return backward_visits_; }

    // --- internals used by the op implementations ---
    using BackwardFn = std::function<void(Tape&, std::int32_t)>;

    Value make_node(TensorF val, BackwardFn bw);

    TensorF& grad_ref(std::int32_t id);
    bool grad_live(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].grad_live; }
    const TensorF& node_val(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].val; }

private:
    struct Node {
        TensorF val;
        TensorF grad;
        bool grad_live = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::int32_t> param_nodes_;
    std::size_t backward_visits_ = 0;
};

// ---------------------------------------------------------------------------
// Plain forward kernels (no tape). These are the arithmetic contracts; the
// tape ops below wrap them with backward passes.
namespace kernels {

TensorF softmax_lastdim(const TensorF& x);
TensorF logsumexp_lastdim(const TensorF& x); // keeps last dim as 1
TensorF layer_norm(const TensorF& x, const TensorF& gamma, const TensorF& beta, double eps);
TensorF conv2d(const TensorF& x, const TensorF& kernel, const TensorF& bias, int stride, int padding);
TensorF matmul(const TensorF& a, const TensorF& b);

// Test hook: negates softmax inputs when set, breaking order preservation.
bool& softmax_sign_fault();

} // namespace kernels

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation. matmul adds to the active counter while
// enabled; attention kernels scope it around the ops that the complexity
// formulas model.
struct MacCounter {
    static std::uint64_t& count();
    static bool& enabled();

    struct Scope {
        explicit Scope(bool enable) : prev_(enabled()) { enabled() = enable; }
        ~Scope() { enabled() = prev_; }

    private:
        bool prev_;
    };
};

// ---------------------------------------------------------------------------
// Tape ops. All take/return Value handles on the same tape.

Value add(Value a, Value b);                    // same shape
Value sub(Value a, Value b);
Value mul(Value a, Value b);                    // elementwise
Value div(Value a, Value b);                    // elementwise
Value add_bias(Value a, Value b);               // b has shape {last dim of a}
Value add_bcast_col(Value a, Value b);          // a (...,n,m) + b (...,n,1)
Value add_bcast_row(Value a, Value b);          // a (...,n,m) + b (...,1,m)
Value scale(Value a, double c);
Value add_const(Value a, double c);
Value neg(Value a);

// (n,k)x(k,m), (B,n,k)x(k,m) or (B,n,k)x(B,k,m)
Value matmul(Value a, Value b);
Value reshape(Value a, Shape s);
Value transpose_last2(Value a);

// out[i] = idx[i] >= 0 ? a.flat[idx[i]] : 0. Backward scatter-adds.
Value gather(Value a, IndexMap idx, Shape out_shape);
Value concat0(Value a, Value b);

Value softmax_lastdim(Value a);
Value logsumexp_lastdim(Value a); // keepdim: (..., n) -> (..., 1)
Value sum_lastdim(Value a);       // (..., n) -> (...)
Value mean_axis1(Value a);        // (A,B,C) -> (A,C)
Value sum_all(Value a);           // -> scalar
Value mean_all(Value a);          // -> scalar

Value exp_(Value a);
Value log_(Value a);
Value sigmoid(Value a);
Value relu(Value a);
Value gelu(Value a);
Value clamp_min(Value a, double m);
Value huber(Value a); // elementwise smooth-L1: |x|<1 ? x^2/2 : |x|-1/2

Value layer_norm(Value x, Value gamma, Value beta, double eps);

// x (Cin,H,W), kernel (Cout,Cin,kh,kw), bias (Cout) optional; cross-correlation.
Value conv2d(Value x, Value kernel, std::optional<Value> bias, int stride, int padding);

} // namespace aau
