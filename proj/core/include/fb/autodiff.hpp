#pragma once

#include "fb/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace fb::ad {

// Handle to a node in a Graph. Only meaningful for the graph that issued it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
    leaf,
    add,
    add_bias,
    mul,
    scale,
    relu,
    sigmoid,
    sign,
    swap_forward,
    matmul,
    matmul_nt,
    conv2d,
    layer_norm,
    softmax,
    embed_rows,
    soft_embed,
    ce_sum,
    cosine_rows,
    reduce_sum,
    reduce_mean,
    reshape,
    slice_rows,
    slice_cols,
    concat_rows,
    concat_cols,
};

struct Node {
    Op op = Op::leaf;
    std::array<int, 3> in{-1, -1, -1};
    std::vector<int> in_many;  // concat only
    Tensor value;
    Tensor aux;               // op-specific cache (layer_norm xhat, ce probs, ...)
    std::vector<float> auxv;  // op-specific per-row cache
    std::vector<int> tokens;  // embed ids / cross-entropy targets
    float f0 = 0.0f;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    bool needs_grad = false;
};

// Reverse-mode tape over eagerly evaluated dense ops. Node creation order is
// the topological order; backward walks it once in reverse. A graph instance
// is single-threaded; independent graphs may live on independent threads.
class Graph {
  public:
    Graph();

    Var leaf(const Tensor &t);
    Var leaf(Tensor &&t);
    Var constant(const Tensor &t);  // requires_grad forced off

    Var add(Var a, Var b);
    Var add_bias(Var a, Var b);  // (m,n) + (n)
    Var mul(Var a, Var b);
    Var scale(Var a, float c);
    Var sub(Var a, Var b);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var sign(Var a);
    // Forward value replaced by v (same shape), backward passes gradients to a
    // unchanged. This is the straight-through estimator building block.
    Var swap_forward(Var a, const Tensor &v);
    Var matmul(Var a, Var b);     // (m,k) x (k,n)
    Var matmul_nt(Var a, Var b);  // (m,k) x (n,k)^T
    // x (H,W,Cin), w (kh,kw,Cin,Cout), bias (Cout)
    Var conv2d(Var x, Var w, Var bias, int stride, int pad);
    Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
    Var softmax(Var x, float temperature);
    Var embed_rows(Var table, std::vector<int> ids);
    Var soft_embed(Var dist, Var table);  // (n,K) x (K,d)
    Var cross_entropy_sum(Var logits, std::vector<int> targets);
    Var cross_entropy_mean(Var logits, std::vector<int> targets);
    Var logprob_sum(Var logits, std::vector<int> targets);
    Var cosine_rows(Var a, Var b);  // (n,d) x (n,d) -> (n)
    Var reduce_sum(Var a);
    Var reduce_mean(Var a);
    Var reshape(Var a, std::vector<int> shape);  // same numel, same data order
    Var slice_rows(Var a, int r0, int r1);
    Var slice_cols(Var a, int c0, int c1);
    Var concat_rows(const std::vector<Var> &parts);
    Var concat_cols(const std::vector<Var> &parts);

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards exactly once.
    // Every requires_grad leaf reachable from the loss receives a gradient;
    // disconnected leaves read back as zeros.
    void backward(Var loss);

    const Tensor &value(Var v) const;
    Tensor grad(Var v) const;  // zeros if the loss never reached v
    bool reached_by_backward(Var v) const;
    size_t size() const { return nodes_.size(); }

    // Total graphs ever constructed in this process (used by tests asserting
    // that inference paths build no graph).
    static int64_t constructed_count();

  private:
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<uint8_t> has_grad_;
    bool backward_done_ = false;

    int push(Node &&n);
    Var finish(Node &&n, const char *what);
    const Node &node(Var v) const;
    Tensor &grad_buf(int id);
    void backward_node(int id);
};

// Central finite differences against the analytic gradient. `f` maps a tensor
// to (scalar value, gradient wrt input); it must be deterministic. Returns the
// max over probed coordinates of |analytic - fd| / max(|analytic|, g_inf),
// where g_inf is the largest probed |analytic| value: error is measured
// against the gradient's own scale, so near-zero coordinates (whose fd signal
// sits below fp32 forward noise) do not dominate. `coords` empty = all.
float finite_diff_check(const std::function<std::pair<float, Tensor>(const Tensor &)> &f,
                        const Tensor &x, float step, const std::vector<int64_t> &coords = {});

// Same check, but each coordinate keeps its best mismatch over several step
// sizes. The true derivative is step-independent while fp32 forward noise is
// not, so the per-coordinate minimum is the honest estimate for deep graphs.
float finite_diff_check_multi(const std::function<std::pair<float, Tensor>(const Tensor &)> &f,
                              const Tensor &x, const std::vector<float> &steps,
                              const std::vector<int64_t> &coords = {});

}  // namespace fb::ad
