#pragma once

#include <functional>
#include <string>
#include <vector>

#include "usra/tensor.hpp"

namespace usra {

/// Named trainable value with an accumulating gradient buffer of equal shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape(), 0.0f);
    }
    void zero_grad() { grad.fill(0.0f); }
};

/// Ordered, non-owning view over Parameters. Iteration order is the insertion
/// order, which callers keep fixed so runs with equal seeds are reproducible.
class ParamSet {
public:
    void add(Parameter& p);
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }
    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    Parameter* find(const std::string& name) const;
    void zero_grads();
    std::size_t total_elements() const;

private:
    std::vector<Parameter*> params_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over tensor-granularity ops. A Graph is built fresh for
/// every training step and discarded afterwards; node ids are topologically
/// ordered by construction, so the backward sweep is a reverse id scan.
/// Single-threaded: one Graph must not be shared across threads.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Constant leaf; no gradient flows into it.
    Var leaf(Tensor value);
    /// Leaf bound to a Parameter. backward() accumulates into p.grad.
    Var param(Parameter& p);
    /// Read-only view of a parameter's current value; gradient does not flow.
    Var frozen(const Parameter& p) { return leaf(p.value); }

    // -- elementwise --
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, float s);
    Var add_scalar(Var a, float s);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);
    Var square(Var a);
    Var abs(Var a);
    /// Pass-through gradient inside [lo,hi], zero outside.
    Var clamp(Var a, float lo, float hi);

    // -- shape --
    Var reshape(Var a, std::vector<int> shape);
    /// [B,N1] ++ [B,N2] -> [B,N1+N2]
    Var concat_cols(Var a, Var b);
    /// Rows [r0, r1) along the first axis.
    Var slice_rows(Var a, int r0, int r1);
    /// Concatenation along the first axis; trailing extents must match.
    Var concat_rows(Var a, Var b);

    /// Optional activation fused into conv2d so the pre-activation tensor is
    /// never materialized.
    enum class Act { none, tanh_act };

    // -- linear algebra --
    /// x:[B,I] w:[I,O] b:[O] -> [B,O]
    Var dense(Var x, Var w, Var b);
    /// x:[B,C,H,W] k:[O,C,3,3] bias:[O] -> [B,O,H/s,W/s], replicate padding,
    /// stride 1 or 2. Stride-2 output equals decimate2(conv at stride 1).
    Var conv2d(Var x, Var k, Var bias, int stride = 1, Act activation = Act::none);
    /// Keep every 2nd row/col: [B,C,H,W] -> [B,C,H/2,W/2]
    Var decimate2(Var a);
    /// Nearest-neighbour 2x: [B,C,H,W] -> [B,C,2H,2W]
    Var upsample2(Var a);

    // -- reductions & indexing --
    /// Sum of all elements -> scalar. Accumulates in double so downstream
    /// finite-difference checks are not drowned by float32 summation error.
    Var sum(Var a);
    Var mean(Var a);
    /// mean((pred - target)^2) against a constant target, as one fused pass.
    Var mse_against(Var pred, const Tensor& target);
    /// q:[B,A], idx[B] -> [B]; picks q[b, idx[b]].
    Var gather_cols(Var q, std::vector<int> idx);

    /// Seeds d(loss)=1 and sweeps the tape in reverse, accumulating gradients
    /// into every bound Parameter. Repeated calls accumulate. loss must be a
    /// scalar (numel 1).
    void backward(Var loss);

    const Tensor& value(Var v) const;
    float scalar_value(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        Parameter* bound = nullptr;
        bool needs_grad = false;
        int parents[3] = {-1, -1, -1};
        // Propagates this node's grad into parent grads. Null for leaves.
        std::function<void(Graph&, int)> back;
    };

    std::vector<Node> nodes_;

    int push(Node n);
    Var unary(Var a, Tensor value, std::function<void(Graph&, int)> back);
    Tensor& grad_buffer(int id);
    void check(Var v) const;
    friend struct GraphDetail;
};

/// Plain (non-recorded) convolution sharing the graph op's implementation.
/// Accepts [C,H,W] or [B,C,H,W] input; bias may be null.
Tensor conv2d_eval(const Tensor& x, const Tensor& k, const Tensor* bias = nullptr, int stride = 1);

}  // namespace usra
