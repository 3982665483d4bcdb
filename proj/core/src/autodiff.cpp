#include "fb/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#include "fb/nn.hpp"

namespace fb::ad {

namespace {

std::atomic<int64_t> g_graphs_constructed{0};

}  // namespace

Graph::Graph() {
    nodes_.reserve(256);
    g_graphs_constructed.fetch_add(1, std::memory_order_relaxed);
}

int64_t Graph::constructed_count() { return g_graphs_constructed.load(std::memory_order_relaxed); }

int Graph::push(Node &&n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::finish(Node &&n, const char *what) {
    n.value.check_finite(what);
    for (int i : n.in) {
        if (i >= 0 && nodes_[i].needs_grad) n.needs_grad = true;
    }
    for (int i : n.in_many) {
        if (nodes_[i].needs_grad) n.needs_grad = true;
    }
    return Var{push(std::move(n))};
}

const Node &Graph::node(Var v) const {
    require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid Var");
    return nodes_[v.id];
}

const Tensor &Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
    const Node &n = node(v);
    if (v.id < static_cast<int>(has_grad_.size()) && has_grad_[v.id]) return grads_[v.id];
    return Tensor::zeros(n.value.shape);
}

bool Graph::reached_by_backward(Var v) const {
    node(v);
    return v.id < static_cast<int>(has_grad_.size()) && has_grad_[v.id] != 0;
}

Tensor &Graph::grad_buf(int id) {
    if (!has_grad_[id]) {
        grads_[id] = Tensor::zeros(nodes_[id].value.shape);
        has_grad_[id] = 1;
    }
    return grads_[id];
}

Var Graph::leaf(const Tensor &t) { return leaf(Tensor(t)); }

Var Graph::leaf(Tensor &&t) {
    Node n;
    n.op = Op::leaf;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    n.value.check_finite("leaf");
    return Var{push(std::move(n))};
}

Var Graph::constant(const Tensor &t) {
    Tensor c = t;
    c.requires_grad = false;
    return leaf(std::move(c));
}

Var Graph::add(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.same_shape(tb), "add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node n;
    n.op = Op::add;
    n.in = {a.id, b.id, -1};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.data[i] = ta.data[i] + tb.data[i];
    return finish(std::move(n), "add");
}

Var Graph::add_bias(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.rank() == 2 && tb.rank() == 1 && ta.shape[1] == tb.shape[0],
            "add_bias: want (m,n)+(n), got " + ta.shape_str() + " and " + tb.shape_str());
    Node n;
    n.op = Op::add_bias;
    n.in = {a.id, b.id, -1};
    n.value = Tensor(ta.shape);
    int m = ta.shape[0], w = ta.shape[1];
    for (int i = 0; i < m; ++i) {
        const float *src = &ta.data[static_cast<size_t>(i) * w];
        float *dst = &n.value.data[static_cast<size_t>(i) * w];
        for (int j = 0; j < w; ++j) dst[j] = src[j] + tb.data[j];
    }
    return finish(std::move(n), "add_bias");
}

Var Graph::mul(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.same_shape(tb), "mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node n;
    n.op = Op::mul;
    n.in = {a.id, b.id, -1};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.data[i] = ta.data[i] * tb.data[i];
    return finish(std::move(n), "mul");
}

Var Graph::scale(Var a, float c) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::scale;
    n.in = {a.id, -1, -1};
    n.f0 = c;
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.data[i] = ta.data[i] * c;
    return finish(std::move(n), "scale");
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0f)); }

Var Graph::relu(Var a) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::relu;
    n.in = {a.id, -1, -1};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.data[i] = ta.data[i] > 0.0f ? ta.data[i] : 0.0f;
    return finish(std::move(n), "relu");
}

Var Graph::sigmoid(Var a) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::sigmoid;
    n.in = {a.id, -1, -1};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.value.data[i] = 1.0f / (1.0f + std::exp(-ta.data[i]));
    return finish(std::move(n), "sigmoid");
}

Var Graph::sign(Var a) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::sign;
    n.in = {a.id, -1, -1};
    n.value = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) {
        float v = ta.data[i];
        n.value.data[i] = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
    }
    return finish(std::move(n), "sign");
}

Var Graph::swap_forward(Var a, const Tensor &v) {
    require(value(a).same_shape(v), "swap_forward: shape mismatch");
    Node n;
    n.op = Op::swap_forward;
    n.in = {a.id, -1, -1};
    n.value = v;
    return finish(std::move(n), "swap_forward");
}

Var Graph::matmul(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
            "matmul: incompatible " + ta.shape_str() + " x " + tb.shape_str());
    int m = ta.shape[0], k = ta.shape[1], w = tb.shape[1];
    Node n;
    n.op = Op::matmul;
    n.in = {a.id, b.id, -1};
    n.value = Tensor({m, w});
    for (int i = 0; i < m; ++i) {
        float *out = &n.value.data[static_cast<size_t>(i) * w];
        for (int p = 0; p < k; ++p) {
            float av = ta.data[static_cast<size_t>(i) * k + p];
            if (av == 0.0f) continue;
            const float *brow = &tb.data[static_cast<size_t>(p) * w];
            for (int j = 0; j < w; ++j) out[j] += av * brow[j];
        }
    }
    return finish(std::move(n), "matmul");
}

Var Graph::matmul_nt(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[1],
            "matmul_nt: incompatible " + ta.shape_str() + " x " + tb.shape_str() + "^T");
    int m = ta.shape[0], k = ta.shape[1], w = tb.shape[0];
    Node n;
    n.op = Op::matmul_nt;
    n.in = {a.id, b.id, -1};
    n.value = Tensor({m, w});
    for (int i = 0; i < m; ++i) {
        const float *arow = &ta.data[static_cast<size_t>(i) * k];
        float *out = &n.value.data[static_cast<size_t>(i) * w];
        for (int j = 0; j < w; ++j) {
            const float *brow = &tb.data[static_cast<size_t>(j) * k];
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[j] = acc;
        }
    }
    return finish(std::move(n), "matmul_nt");
}

Var Graph::conv2d(Var x, Var w, Var bias, int stride, int pad) {
    const Tensor &tx = value(x), &tw = value(w), &tb = value(bias);
    require(tx.rank() == 3 && tw.rank() == 4, "conv2d: want x (H,W,Cin), w (kh,kw,Cin,Cout)");
    int h = tx.shape[0], wd = tx.shape[1], cin = tx.shape[2];
    int kh = tw.shape[0], kw = tw.shape[1], cout = tw.shape[3];
    require(tw.shape[2] == cin, "conv2d: channel mismatch");
    require(tb.rank() == 1 && tb.shape[0] == cout, "conv2d: bias shape");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output");
    Node n;
    n.op = Op::conv2d;
    n.in = {x.id, w.id, bias.id};
    n.i0 = stride;
    n.i1 = pad;
    n.value = Tensor({ho, wo, cout});
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            float *out = &n.value.at(oy, ox, 0);
            for (int c = 0; c < cout; ++c) out[c] = tb.data[c];
            for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    for (int ci = 0; ci < cin; ++ci) {
                        float xv = tx.at(iy, ix, ci);
                        if (xv == 0.0f) continue;
                        const float *wrow = &tw.data[((static_cast<size_t>(ky) * kw + kx) * cin + ci) * cout];
                        for (int c = 0; c < cout; ++c) out[c] += xv * wrow[c];
                    }
                }
            }
        }
    }
    return finish(std::move(n), "conv2d");
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, float eps) {
    const Tensor &tx = value(x), &tg = value(gamma), &tb = value(beta);
    require(tx.rank() == 2, "layer_norm: want (m,n)");
    int m = tx.shape[0], w = tx.shape[1];
    require(tg.rank() == 1 && tg.shape[0] == w && tb.rank() == 1 && tb.shape[0] == w,
            "layer_norm: gamma/beta shape");
    Node n;
    n.op = Op::layer_norm;
    n.in = {x.id, gamma.id, beta.id};
    n.f0 = eps;
    n.value = Tensor({m, w});
    n.aux = Tensor({m, w});  // xhat
    n.auxv.resize(m);        // inv stddev per row
    for (int i = 0; i < m; ++i) {
        const float *row = &tx.data[static_cast<size_t>(i) * w];
        double mu = 0.0;
        for (int j = 0; j < w; ++j) mu += row[j];
        mu /= w;
        double var = 0.0;
        for (int j = 0; j < w; ++j) {
            double d = row[j] - mu;
            var += d * d;
        }
        var /= w;
        float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        n.auxv[i] = inv;
        float *xh = &n.aux.data[static_cast<size_t>(i) * w];
        float *out = &n.value.data[static_cast<size_t>(i) * w];
        for (int j = 0; j < w; ++j) {
            xh[j] = (row[j] - static_cast<float>(mu)) * inv;
            out[j] = tg.data[j] * xh[j] + tb.data[j];
        }
    }
    return finish(std::move(n), "layer_norm");
}

Var Graph::softmax(Var x, float temperature) {
    const Tensor &tx = value(x);
    require(temperature > 0.0f, "softmax: temperature must be > 0");
    require(tx.rank() >= 1, "softmax: empty tensor");
    int w = tx.shape[tx.rank() - 1];
    int m = static_cast<int>(tx.numel() / w);
    Node n;
    n.op = Op::softmax;
    n.in = {x.id, -1, -1};
    n.f0 = temperature;
    n.value = Tensor(tx.shape);
    float inv_tau = 1.0f / temperature;
    for (int i = 0; i < m; ++i) {
        softmax_row(&tx.data[static_cast<size_t>(i) * w], &n.value.data[static_cast<size_t>(i) * w],
                    w, inv_tau);
    }
    return finish(std::move(n), "softmax");
}

Var Graph::embed_rows(Var table, std::vector<int> ids) {
    const Tensor &tt = value(table);
    require(tt.rank() == 2, "embed_rows: table must be (V,d)");
    int v = tt.shape[0], d = tt.shape[1];
    for (int id : ids) require(id >= 0 && id < v, "embed_rows: id out of range");
    Node n;
    n.op = Op::embed_rows;
    n.in = {table.id, -1, -1};
    n.tokens = std::move(ids);
    int rows = static_cast<int>(n.tokens.size());
    require(rows > 0, "embed_rows: empty id list");
    n.value = Tensor({rows, d});
    for (int i = 0; i < rows; ++i) {
        std::memcpy(&n.value.data[static_cast<size_t>(i) * d],
                    &tt.data[static_cast<size_t>(n.tokens[i]) * d], sizeof(float) * d);
    }
    return finish(std::move(n), "embed_rows");
}

Var Graph::soft_embed(Var dist, Var table) {
    const Tensor &td = value(dist), &tt = value(table);
    require(td.rank() == 2 && tt.rank() == 2 && td.shape[1] == tt.shape[0],
            "soft_embed: want (n,K)x(K,d), got " + td.shape_str() + " and " + tt.shape_str());
    Node n;
    n.op = Op::soft_embed;
    n.in = {dist.id, table.id, -1};
    int rows = td.shape[0], k = td.shape[1], d = tt.shape[1];
    n.value = Tensor({rows, d});
    for (int i = 0; i < rows; ++i) {
        float *out = &n.value.data[static_cast<size_t>(i) * d];
        for (int p = 0; p < k; ++p) {
            float w = td.data[static_cast<size_t>(i) * k + p];
            if (w == 0.0f) continue;
            const float *row = &tt.data[static_cast<size_t>(p) * d];
            for (int j = 0; j < d; ++j) out[j] += w * row[j];
        }
    }
    return finish(std::move(n), "soft_embed");
}

Var Graph::cross_entropy_sum(Var logits, std::vector<int> targets) {
    const Tensor &tl = value(logits);
    require(tl.rank() == 2, "cross_entropy: logits must be (n,V)");
    int rows = tl.shape[0], v = tl.shape[1];
    require(static_cast<int>(targets.size()) == rows, "cross_entropy: target count mismatch");
    for (int t : targets) require(t >= 0 && t < v, "cross_entropy: target out of range");
    Node n;
    n.op = Op::ce_sum;
    n.in = {logits.id, -1, -1};
    n.tokens = std::move(targets);
    n.aux = Tensor({rows, v});  // softmax probs for backward
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
        const float *row = &tl.data[static_cast<size_t>(i) * v];
        float m = row[0];
        for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        float *probs = &n.aux.data[static_cast<size_t>(i) * v];
        for (int j = 0; j < v; ++j) {
            float e = std::exp(row[j] - m);
            probs[j] = e;
            z += e;
        }
        float inv_z = static_cast<float>(1.0 / z);
        for (int j = 0; j < v; ++j) probs[j] *= inv_z;
        double lse = m + std::log(z);
        total += lse - row[n.tokens[i]];
    }
    n.value = Tensor::scalar(static_cast<float>(total));
    return finish(std::move(n), "cross_entropy");
}

Var Graph::cross_entropy_mean(Var logits, std::vector<int> targets) {
    int rows = static_cast<int>(targets.size());
    require(rows > 0, "cross_entropy_mean: empty targets");
    Var s = cross_entropy_sum(logits, std::move(targets));
    return scale(s, 1.0f / static_cast<float>(rows));
}

Var Graph::logprob_sum(Var logits, std::vector<int> targets) {
    return scale(cross_entropy_sum(logits, std::move(targets)), -1.0f);
}

Var Graph::cosine_rows(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.rank() == 2 && ta.same_shape(tb), "cosine_rows: want matching (n,d)");
    int rows = ta.shape[0], d = ta.shape[1];
    Node n;
    n.op = Op::cosine_rows;
    n.in = {a.id, b.id, -1};
    n.value = Tensor({rows});
    n.auxv.resize(static_cast<size_t>(rows) * 2);  // 1/|a|, 1/|b| per row
    for (int i = 0; i < rows; ++i) {
        const float *ra = &ta.data[static_cast<size_t>(i) * d];
        const float *rb = &tb.data[static_cast<size_t>(i) * d];
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
            dot += static_cast<double>(ra[j]) * rb[j];
            na += static_cast<double>(ra[j]) * ra[j];
            nb += static_cast<double>(rb[j]) * rb[j];
        }
        require(na > 0.0 && nb > 0.0, "cosine_rows: zero-norm row");
        double inv_na = 1.0 / std::sqrt(na), inv_nb = 1.0 / std::sqrt(nb);
        n.auxv[static_cast<size_t>(i) * 2] = static_cast<float>(inv_na);
        n.auxv[static_cast<size_t>(i) * 2 + 1] = static_cast<float>(inv_nb);
        n.value.data[i] = static_cast<float>(dot * inv_na * inv_nb);
    }
    return finish(std::move(n), "cosine_rows");
}

Var Graph::reduce_sum(Var a) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::reduce_sum;
    n.in = {a.id, -1, -1};
    double acc = 0.0;
    for (float v : ta.data) acc += v;
    n.value = Tensor::scalar(static_cast<float>(acc));
    return finish(std::move(n), "reduce_sum");
}

Var Graph::reduce_mean(Var a) {
    const Tensor &ta = value(a);
    Node n;
    n.op = Op::reduce_mean;
    n.in = {a.id, -1, -1};
    double acc = 0.0;
    for (float v : ta.data) acc += v;
    n.value = Tensor::scalar(static_cast<float>(acc / static_cast<double>(ta.numel())));
    return finish(std::move(n), "reduce_mean");
}

Var Graph::reshape(Var a, std::vector<int> shape) {
    const Tensor &ta = value(a);
    require(shape_numel(shape) == ta.numel(),
            "reshape: numel mismatch " + ta.shape_str() + " -> " + shape_to_string(shape));
    Node n;
    n.op = Op::reshape;
    n.in = {a.id, -1, -1};
    n.value = Tensor(shape);
    n.value.data = ta.data;
    return finish(std::move(n), "reshape");
}

Var Graph::slice_rows(Var a, int r0, int r1) {
    const Tensor &ta = value(a);
    require(ta.rank() == 2, "slice_rows: want (m,n)");
    require(0 <= r0 && r0 < r1 && r1 <= ta.shape[0], "slice_rows: bad range");
    Node n;
    n.op = Op::slice_rows;
    n.in = {a.id, -1, -1};
    n.i0 = r0;
    n.i1 = r1;
    int w = ta.shape[1];
    n.value = Tensor({r1 - r0, w});
    std::memcpy(n.value.data.data(), &ta.data[static_cast<size_t>(r0) * w],
                sizeof(float) * static_cast<size_t>(r1 - r0) * w);
    return finish(std::move(n), "slice_rows");
}

Var Graph::slice_cols(Var a, int c0, int c1) {
    const Tensor &ta = value(a);
    require(ta.rank() == 2, "slice_cols: want (m,n)");
    require(0 <= c0 && c0 < c1 && c1 <= ta.shape[1], "slice_cols: bad range");
    Node n;
    n.op = Op::slice_cols;
    n.in = {a.id, -1, -1};
    n.i0 = c0;
    n.i1 = c1;
    int m = ta.shape[0], w = ta.shape[1], nw = c1 - c0;
    n.value = Tensor({m, nw});
    for (int i = 0; i < m; ++i) {
        std::memcpy(&n.value.data[static_cast<size_t>(i) * nw],
                    &ta.data[static_cast<size_t>(i) * w + c0], sizeof(float) * nw);
    }
    return finish(std::move(n), "slice_cols");
}

Var Graph::concat_rows(const std::vector<Var> &parts) {
    require(!parts.empty(), "concat_rows: empty list");
    int w = value(parts[0]).shape[1];
    int rows = 0;
    for (Var p : parts) {
        const Tensor &t = value(p);
        require(t.rank() == 2 && t.shape[1] == w, "concat_rows: column mismatch");
        rows += t.shape[0];
    }
    Node n;
    n.op = Op::concat_rows;
    for (Var p : parts) n.in_many.push_back(p.id);
    n.value = Tensor({rows, w});
    size_t off = 0;
    for (Var p : parts) {
        const Tensor &t = value(p);
        std::memcpy(&n.value.data[off], t.data.data(), sizeof(float) * t.data.size());
        off += t.data.size();
    }
    return finish(std::move(n), "concat_rows");
}

Var Graph::concat_cols(const std::vector<Var> &parts) {
    require(!parts.empty(), "concat_cols: empty list");
    int m = value(parts[0]).shape[0];
    int w = 0;
    for (Var p : parts) {
        const Tensor &t = value(p);
        require(t.rank() == 2 && t.shape[0] == m, "concat_cols: row mismatch");
        w += t.shape[1];
    }
    Node n;
    n.op = Op::concat_cols;
    for (Var p : parts) n.in_many.push_back(p.id);
    n.value = Tensor({m, w});
    for (int i = 0; i < m; ++i) {
        int off = 0;
        for (Var p : parts) {
            const Tensor &t = value(p);
            int pw = t.shape[1];
            std::memcpy(&n.value.data[static_cast<size_t>(i) * w + off],
                        &t.data[static_cast<size_t>(i) * pw], sizeof(float) * pw);
            off += pw;
        }
    }
    return finish(std::move(n), "concat_cols");
}

void Graph::backward(Var loss) {
    const Node &ln = node(loss);
    require(ln.value.is_scalar(), "backward: loss must be scalar, got " + ln.value.shape_str());
    require(!backward_done_, "backward: already ran on this graph");
    backward_done_ = true;
    grads_.resize(nodes_.size());
    has_grad_.assign(nodes_.size(), 0);
    grad_buf(loss.id).data[0] = 1.0f;
    for (int id = loss.id; id >= 0; --id) {
        if (!has_grad_[id] || !nodes_[id].needs_grad) continue;
        backward_node(id);
    }
}

void Graph::backward_node(int id) {
    Node &n = nodes_[id];
    const Tensor &g = grads_[id];
    auto needs = [&](int input) { return input >= 0 && nodes_[input].needs_grad; };

    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add: {
            for (int s = 0; s < 2; ++s) {
                int in = n.in[s];
                if (!needs(in)) continue;
                Tensor &d = grad_buf(in);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
            }
            break;
        }
        case Op::add_bias: {
            int m = n.value.shape[0], w = n.value.shape[1];
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
            }
            if (needs(n.in[1])) {
                Tensor &d = grad_buf(n.in[1]);
                for (int i = 0; i < m; ++i) {
                    const float *row = &g.data[static_cast<size_t>(i) * w];
                    for (int j = 0; j < w; ++j) d.data[j] += row[j];
                }
            }
            break;
        }
        case Op::mul: {
            const Tensor &ta = nodes_[n.in[0]].value, &tb = nodes_[n.in[1]].value;
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * tb.data[i];
            }
            if (needs(n.in[1])) {
                Tensor &d = grad_buf(n.in[1]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * ta.data[i];
            }
            break;
        }
        case Op::scale: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * n.f0;
            }
            break;
        }
        case Op::relu: {
            if (needs(n.in[0])) {
                const Tensor &ta = nodes_[n.in[0]].value;
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    if (ta.data[i] > 0.0f) d.data[i] += g.data[i];
                }
            }
            break;
        }
        case Op::sigmoid: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    float y = n.value.data[i];
                    d.data[i] += g.data[i] * y * (1.0f - y);
                }
            }
            break;
        }
        case Op::sign:
            // Defined gradient: zero everywhere.
            break;
        case Op::swap_forward: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
            }
            break;
        }
        case Op::matmul: {
            const Tensor &ta = nodes_[n.in[0]].value, &tb = nodes_[n.in[1]].value;
            int m = ta.shape[0], k = ta.shape[1], w = tb.shape[1];
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int i = 0; i < m; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i) * w];
                    float *drow = &d.data[static_cast<size_t>(i) * k];
                    for (int p = 0; p < k; ++p) {
                        const float *brow = &tb.data[static_cast<size_t>(p) * w];
                        float acc = 0.0f;
                        for (int j = 0; j < w; ++j) acc += grow[j] * brow[j];
                        drow[p] += acc;
                    }
                }
            }
            if (needs(n.in[1])) {
                Tensor &d = grad_buf(n.in[1]);
                for (int i = 0; i < m; ++i) {
                    const float *arow = &ta.data[static_cast<size_t>(i) * k];
                    const float *grow = &g.data[static_cast<size_t>(i) * w];
                    for (int p = 0; p < k; ++p) {
                        float av = arow[p];
                        if (av == 0.0f) continue;
                        float *drow = &d.data[static_cast<size_t>(p) * w];
                        for (int j = 0; j < w; ++j) drow[j] += av * grow[j];
                    }
                }
            }
            break;
        }
        case Op::matmul_nt: {
            const Tensor &ta = nodes_[n.in[0]].value, &tb = nodes_[n.in[1]].value;
            int m = ta.shape[0], k = ta.shape[1], w = tb.shape[0];
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int i = 0; i < m; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i) * w];
                    float *drow = &d.data[static_cast<size_t>(i) * k];
                    for (int j = 0; j < w; ++j) {
                        float gv = grow[j];
                        if (gv == 0.0f) continue;
                        const float *brow = &tb.data[static_cast<size_t>(j) * k];
                        for (int p = 0; p < k; ++p) drow[p] += gv * brow[p];
                    }
                }
            }
            if (needs(n.in[1])) {
                Tensor &d = grad_buf(n.in[1]);
                for (int i = 0; i < m; ++i) {
                    const float *arow = &ta.data[static_cast<size_t>(i) * k];
                    const float *grow = &g.data[static_cast<size_t>(i) * w];
                    for (int j = 0; j < w; ++j) {
                        float gv = grow[j];
                        if (gv == 0.0f) continue;
                        float *drow = &d.data[static_cast<size_t>(j) * k];
                        for (int p = 0; p < k; ++p) drow[p] += gv * arow[p];
                    }
                }
            }
            break;
        }
        case Op::conv2d: {
            const Tensor &tx = nodes_[n.in[0]].value, &tw = nodes_[n.in[1]].value;
            int stride = n.i0, pad = n.i1;
            int h = tx.shape[0], wd = tx.shape[1], cin = tx.shape[2];
            int kh = tw.shape[0], kw = tw.shape[1], cout = tw.shape[3];
            int ho = n.value.shape[0], wo = n.value.shape[1];
            bool nx = needs(n.in[0]), nw = needs(n.in[1]), nb = needs(n.in[2]);
            Tensor *dx = nx ? &grad_buf(n.in[0]) : nullptr;
            Tensor *dw = nw ? &grad_buf(n.in[1]) : nullptr;
            Tensor *db = nb ? &grad_buf(n.in[2]) : nullptr;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const float *grow = &g.at(oy, ox, 0);
                    if (db) {
                        for (int c = 0; c < cout; ++c) db->data[c] += grow[c];
                    }
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= wd) continue;
                            for (int ci = 0; ci < cin; ++ci) {
                                size_t widx = ((static_cast<size_t>(ky) * kw + kx) * cin + ci) * cout;
                                const float *wrow = &tw.data[widx];
                                if (dx) {
                                    float acc = 0.0f;
                                    for (int c = 0; c < cout; ++c) acc += grow[c] * wrow[c];
                                    dx->at(iy, ix, ci) += acc;
                                }
                                if (dw) {
                                    float xv = tx.at(iy, ix, ci);
                                    if (xv != 0.0f) {
                                        float *dwrow = &dw->data[widx];
                                        for (int c = 0; c < cout; ++c) dwrow[c] += xv * grow[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::layer_norm: {
            const Tensor &tg = nodes_[n.in[1]].value;
            int m = n.value.shape[0], w = n.value.shape[1];
            bool nx = needs(n.in[0]), ng = needs(n.in[1]), nb = needs(n.in[2]);
            Tensor *dx = nx ? &grad_buf(n.in[0]) : nullptr;
            Tensor *dgm = ng ? &grad_buf(n.in[1]) : nullptr;
            Tensor *dbt = nb ? &grad_buf(n.in[2]) : nullptr;
            for (int i = 0; i < m; ++i) {
                const float *grow = &g.data[static_cast<size_t>(i) * w];
                const float *xh = &n.aux.data[static_cast<size_t>(i) * w];
                if (dgm) {
                    for (int j = 0; j < w; ++j) dgm->data[j] += grow[j] * xh[j];
                }
                if (dbt) {
                    for (int j = 0; j < w; ++j) dbt->data[j] += grow[j];
                }
                if (dx) {
                    float inv = n.auxv[i];
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < w; ++j) {
                        float dh = grow[j] * tg.data[j];
                        s1 += dh;
                        s2 += static_cast<double>(dh) * xh[j];
                    }
                    float m1 = static_cast<float>(s1 / w), m2 = static_cast<float>(s2 / w);
                    float *drow = &dx->data[static_cast<size_t>(i) * w];
                    for (int j = 0; j < w; ++j) {
                        float dh = grow[j] * tg.data[j];
                        drow[j] += inv * (dh - m1 - xh[j] * m2);
                    }
                }
            }
            break;
        }
        case Op::softmax: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                int w = n.value.shape[n.value.rank() - 1];
                int m = static_cast<int>(n.value.numel() / w);
                float inv_tau = 1.0f / n.f0;
                for (int i = 0; i < m; ++i) {
                    const float *y = &n.value.data[static_cast<size_t>(i) * w];
                    const float *grow = &g.data[static_cast<size_t>(i) * w];
                    double dot = 0.0;
                    for (int j = 0; j < w; ++j) dot += static_cast<double>(grow[j]) * y[j];
                    float *drow = &d.data[static_cast<size_t>(i) * w];
                    for (int j = 0; j < w; ++j) {
                        drow[j] += inv_tau * y[j] * (grow[j] - static_cast<float>(dot));
                    }
                }
            }
            break;
        }
        case Op::embed_rows: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                int dcols = n.value.shape[1];
                for (size_t i = 0; i < n.tokens.size(); ++i) {
                    const float *grow = &g.data[i * dcols];
                    float *drow = &d.data[static_cast<size_t>(n.tokens[i]) * dcols];
                    for (int j = 0; j < dcols; ++j) drow[j] += grow[j];
                }
            }
            break;
        }
        case Op::soft_embed: {
            const Tensor &td = nodes_[n.in[0]].value, &tt = nodes_[n.in[1]].value;
            int rows = td.shape[0], k = td.shape[1], d = tt.shape[1];
            if (needs(n.in[0])) {
                Tensor &dd = grad_buf(n.in[0]);
                for (int i = 0; i < rows; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i) * d];
                    float *drow = &dd.data[static_cast<size_t>(i) * k];
                    for (int p = 0; p < k; ++p) {
                        const float *trow = &tt.data[static_cast<size_t>(p) * d];
                        float acc = 0.0f;
                        for (int j = 0; j < d; ++j) acc += grow[j] * trow[j];
                        drow[p] += acc;
                    }
                }
            }
            if (needs(n.in[1])) {
                Tensor &dt = grad_buf(n.in[1]);
                for (int i = 0; i < rows; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i) * d];
                    const float *drow = &td.data[static_cast<size_t>(i) * k];
                    for (int p = 0; p < k; ++p) {
                        float w = drow[p];
                        if (w == 0.0f) continue;
                        float *trow = &dt.data[static_cast<size_t>(p) * d];
                        for (int j = 0; j < d; ++j) trow[j] += w * grow[j];
                    }
                }
            }
            break;
        }
        case Op::ce_sum: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                float gs = g.data[0];
                int rows = n.aux.shape[0], v = n.aux.shape[1];
                for (int i = 0; i < rows; ++i) {
                    const float *probs = &n.aux.data[static_cast<size_t>(i) * v];
                    float *drow = &d.data[static_cast<size_t>(i) * v];
                    for (int j = 0; j < v; ++j) drow[j] += gs * probs[j];
                    drow[n.tokens[i]] -= gs;
                }
            }
            break;
        }
        case Op::cosine_rows: {
            const Tensor &ta = nodes_[n.in[0]].value, &tb = nodes_[n.in[1]].value;
            int rows = ta.shape[0], d = ta.shape[1];
            bool na = needs(n.in[0]), nb = needs(n.in[1]);
            Tensor *da = na ? &grad_buf(n.in[0]) : nullptr;
            Tensor *db = nb ? &grad_buf(n.in[1]) : nullptr;
            for (int i = 0; i < rows; ++i) {
                float gv = g.data[i];
                if (gv == 0.0f) continue;
                float c = n.value.data[i];
                float inv_na = n.auxv[static_cast<size_t>(i) * 2];
                float inv_nb = n.auxv[static_cast<size_t>(i) * 2 + 1];
                const float *ra = &ta.data[static_cast<size_t>(i) * d];
                const float *rb = &tb.data[static_cast<size_t>(i) * d];
                if (da) {
                    float *dr = &da->data[static_cast<size_t>(i) * d];
                    for (int j = 0; j < d; ++j) {
                        dr[j] += gv * (rb[j] * inv_na * inv_nb - c * ra[j] * inv_na * inv_na);
                    }
                }
                if (db) {
                    float *dr = &db->data[static_cast<size_t>(i) * d];
                    for (int j = 0; j < d; ++j) {
                        dr[j] += gv * (ra[j] * inv_na * inv_nb - c * rb[j] * inv_nb * inv_nb);
                    }
                }
            }
            break;
        }
        case Op::reduce_sum: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                float gv = g.data[0];
                for (auto &v : d.data) v += gv;
            }
            break;
        }
        case Op::reduce_mean: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                float gv = g.data[0] / static_cast<float>(d.numel());
                for (auto &v : d.data) v += gv;
            }
            break;
        }
        case Op::reshape: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
            }
            break;
        }
        case Op::slice_rows: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                int w = d.shape[1];
                for (int i = n.i0; i < n.i1; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i - n.i0) * w];
                    float *drow = &d.data[static_cast<size_t>(i) * w];
                    for (int j = 0; j < w; ++j) drow[j] += grow[j];
                }
            }
            break;
        }
        case Op::slice_cols: {
            if (needs(n.in[0])) {
                Tensor &d = grad_buf(n.in[0]);
                int m = n.value.shape[0], nw = n.value.shape[1], w = d.shape[1];
                for (int i = 0; i < m; ++i) {
                    const float *grow = &g.data[static_cast<size_t>(i) * nw];
                    float *drow = &d.data[static_cast<size_t>(i) * w + n.i0];
                    for (int j = 0; j < nw; ++j) drow[j] += grow[j];
                }
            }
            break;
        }
        case Op::concat_rows: {
            int off = 0;
            int w = n.value.shape[1];
            for (int in : n.in_many) {
                const Tensor &t = nodes_[in].value;
                int rows = t.shape[0];
                if (nodes_[in].needs_grad) {
                    Tensor &d = grad_buf(in);
                    for (int64_t i = 0; i < t.numel(); ++i) {
                        d.data[i] += g.data[static_cast<size_t>(off) * w + i];
                    }
                }
                off += rows;
            }
            break;
        }
        case Op::concat_cols: {
            int m = n.value.shape[0], w = n.value.shape[1];
            int off = 0;
            for (int in : n.in_many) {
                const Tensor &t = nodes_[in].value;
                int pw = t.shape[1];
                if (nodes_[in].needs_grad) {
                    Tensor &d = grad_buf(in);
                    for (int i = 0; i < m; ++i) {
                        const float *grow = &g.data[static_cast<size_t>(i) * w + off];
                        float *drow = &d.data[static_cast<size_t>(i) * pw];
                        for (int j = 0; j < pw; ++j) drow[j] += grow[j];
                    }
                }
                off += pw;
            }
            break;
        }
    }
}

float finite_diff_check_multi(const std::function<std::pair<float, Tensor>(const Tensor &)> &f,
                              const Tensor &x, const std::vector<float> &steps,
                              const std::vector<int64_t> &coords) {
    require(!steps.empty(), "finite_diff_check: need at least one step");
    for (float s : steps) require(s > 0.0f, "finite_diff_check: step must be > 0");
    auto [v0, analytic] = f(x);
    require(std::isfinite(v0), "finite_diff_check: f non-finite at base point");
    require(analytic.same_shape(x), "finite_diff_check: gradient shape mismatch");
    std::vector<int64_t> probe = coords;
    if (probe.empty()) {
        probe.resize(static_cast<size_t>(x.numel()));
        for (int64_t i = 0; i < x.numel(); ++i) probe[static_cast<size_t>(i)] = i;
    }
    double gmax = 0.0;
    for (int64_t i : probe) {
        require(i >= 0 && i < x.numel(), "finite_diff_check: coord out of range");
        gmax = std::max(gmax, std::abs(static_cast<double>(analytic.data[static_cast<size_t>(i)])));
    }
    double max_rel = 0.0;
    Tensor xp = x;
    for (int64_t i : probe) {
        float orig = xp.data[static_cast<size_t>(i)];
        double a = analytic.data[static_cast<size_t>(i)];
        double best = -1.0;
        for (float step : steps) {
            xp.data[static_cast<size_t>(i)] = orig + step;
            float vp = f(xp).first;
            xp.data[static_cast<size_t>(i)] = orig - step;
            float vm = f(xp).first;
            xp.data[static_cast<size_t>(i)] = orig;
            require(std::isfinite(vp) && std::isfinite(vm),
                    "finite_diff_check: f non-finite at probe point");
            double fd = (static_cast<double>(vp) - static_cast<double>(vm)) / (2.0 * step);
            double rel = std::abs(a - fd) / std::max({std::abs(a), gmax, 1e-8});
            if (best < 0.0 || rel < best) best = rel;
        }
        max_rel = std::max(max_rel, best);
    }
    return static_cast<float>(max_rel);
}

float finite_diff_check(const std::function<std::pair<float, Tensor>(const Tensor &)> &f,
                        const Tensor &x, float step, const std::vector<int64_t> &coords) {
    return finite_diff_check_multi(f, x, {step}, coords);
}

}  // namespace fb::ad
