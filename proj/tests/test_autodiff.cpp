#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fb/autodiff.hpp"
#include "fb/rng.hpp"
#include "fb/tensor.hpp"

using fb::Tensor;
namespace ad = fb::ad;

namespace {

using BuildFn = std::function<ad::Var(ad::Graph &, ad::Var)>;

// Evaluates loss = sum(w ⊙ (y(x) − y_base)). Keeping the scalar near zero
// stops the fp32 cast of the loss from swamping central differences.
std::pair<float, Tensor> eval_centered(const BuildFn &build, const Tensor &w, const Tensor &y_base,
                                       const Tensor &xin) {
    ad::Graph g;
    Tensor xc = xin;
    xc.requires_grad = true;
    ad::Var x = g.leaf(std::move(xc));
    ad::Var y = build(g, x);
    ad::Var loss = g.reduce_sum(g.mul(g.sub(y, g.constant(y_base)), g.constant(w)));
    g.backward(loss);
    return {g.value(loss).data[0], g.grad(x)};
}

float centered_fd(const BuildFn &build, const Tensor &x0, uint64_t wseed,
                  std::vector<float> steps = {5e-3f, 1e-2f, 3e-2f}, float wscale = 1.0f) {
    ad::Graph g0;
    ad::Var xv = g0.leaf(x0);
    ad::Var y0 = build(g0, xv);
    Tensor y_base = g0.value(y0);
    auto rng = fb::make_rng(wseed, "fd-weights");
    Tensor w = Tensor::uniform(y_base.shape, rng, 0.6f, 1.4f);
    std::bernoulli_distribution flip(0.5);
    for (auto &v : w.data) {
        if (flip(rng)) v = -v;
        v *= wscale;
    }
    auto f = [&](const Tensor &xin) { return eval_centered(build, w, y_base, xin); };
    return ad::finite_diff_check_multi(f, x0, steps);
}

Tensor randn(std::vector<int> shape, uint64_t seed, float stddev = 1.0f) {
    auto rng = fb::make_rng(seed, "fd-input");
    return Tensor::randn(std::move(shape), rng, stddev);
}

// Uniform magnitudes in [lo,hi] with random signs; keeps relu/sign inputs
// away from their kinks.
Tensor rand_signed(std::vector<int> shape, uint64_t seed, float lo, float hi) {
    auto rng = fb::make_rng(seed, "fd-signed");
    Tensor t = Tensor::uniform(std::move(shape), rng, lo, hi);
    std::bernoulli_distribution flip(0.5);
    for (auto &v : t.data) {
        if (flip(rng)) v = -v;
    }
    return t;
}

constexpr float k_prim_tol = 1e-4f;

}  // namespace

TEST_CASE("forward: softmax matches double-precision reference at tau 1 and 6") {
    for (float tau : {1.0f, 6.0f}) {
        Tensor x = randn({3, 7}, 11);
        ad::Graph g;
        Tensor y = g.value(g.softmax(g.leaf(x), tau));
        for (int i = 0; i < 3; ++i) {
            double m = -1e30;
            for (int j = 0; j < 7; ++j) m = std::max(m, static_cast<double>(x.at(i, j)));
            double z = 0.0;
            for (int j = 0; j < 7; ++j) z += std::exp((x.at(i, j) - m) / tau);
            double row_sum = 0.0;
            for (int j = 0; j < 7; ++j) {
                double ref = std::exp((x.at(i, j) - m) / tau) / z;
                CHECK(y.at(i, j) == doctest::Approx(ref).epsilon(1e-5));
                row_sum += y.at(i, j);
            }
            CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("forward: softmax flattens toward uniform as temperature grows") {
    Tensor x = Tensor::from({1, 2}, {2.0f, 0.0f});
    ad::Graph g;
    Tensor y = g.value(g.softmax(g.leaf(x), 1e6f));
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-4));
    ad::Graph g1;
    Tensor y1 = g1.value(g1.softmax(g1.leaf(x), 1.0f));
    CHECK(y1.at(0, 0) > 0.85f);
}

TEST_CASE("forward: one-hot soft_embed equals embed_rows") {
    Tensor table = randn({6, 4}, 21);
    Tensor dist = Tensor::zeros({3, 6});
    std::vector<int> ids = {4, 0, 5};
    for (int i = 0; i < 3; ++i) dist.at(i, ids[i]) = 1.0f;
    ad::Graph g;
    Tensor soft = g.value(g.soft_embed(g.leaf(dist), g.leaf(table)));
    Tensor hard = g.value(g.embed_rows(g.leaf(table), ids));
    for (int64_t i = 0; i < soft.numel(); ++i) CHECK(soft.data[i] == hard.data[i]);
}

TEST_CASE("forward: cosine of a row with itself is 1") {
    Tensor a = randn({4, 6}, 31);
    ad::Graph g;
    Tensor c = g.value(g.cosine_rows(g.leaf(a), g.leaf(a)));
    for (int i = 0; i < 4; ++i) CHECK(c.data[i] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("forward: matmul matches a double-precision triple loop") {
    Tensor a = randn({4, 5}, 41);
    Tensor b = randn({5, 3}, 42);
    ad::Graph g;
    Tensor y = g.value(g.matmul(g.leaf(a), g.leaf(b)));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int p = 0; p < 5; ++p) {
                acc += static_cast<double>(a.at(i, p)) * b.at(p, j);
            }
            CHECK(y.at(i, j) == doctest::Approx(acc).epsilon(1e-5));
        }
    }
    ad::Graph g2;
    Tensor bt = Tensor::zeros({3, 5});
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 3; ++j) bt.at(j, i) = b.at(i, j);
    }
    Tensor y2 = g2.value(g2.matmul_nt(g2.leaf(a), g2.leaf(bt)));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y2.data[i] == doctest::Approx(y.data[i]).epsilon(1e-5));
}

TEST_CASE("forward: layer_norm rows come out standardized under unit gamma") {
    Tensor x = randn({3, 16}, 51, 2.5f);
    ad::Graph g;
    Tensor y = g.value(g.layer_norm(g.leaf(x), g.leaf(Tensor::full({16}, 1.0f)),
                                    g.leaf(Tensor::zeros({16}))));
    for (int i = 0; i < 3; ++i) {
        double mu = 0.0, var = 0.0;
        for (int j = 0; j < 16; ++j) mu += y.at(i, j);
        mu /= 16;
        for (int j = 0; j < 16; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
        var /= 16;
        CHECK(mu == doctest::Approx(0.0).epsilon(1e-4));
        CHECK(std::abs(var - 1.0) < 1e-2);
    }
}

TEST_CASE("forward: cross_entropy_sum matches manual log-softmax in double") {
    Tensor logits = randn({5, 9}, 61, 2.0f);
    std::vector<int> targets = {3, 0, 8, 1, 4};
    ad::Graph g;
    float ce = g.value(g.cross_entropy_sum(g.leaf(logits), targets)).data[0];
    double ref = 0.0;
    for (int i = 0; i < 5; ++i) {
        double m = -1e30;
        for (int j = 0; j < 9; ++j) m = std::max(m, static_cast<double>(logits.at(i, j)));
        double z = 0.0;
        for (int j = 0; j < 9; ++j) z += std::exp(logits.at(i, j) - m);
        ref += m + std::log(z) - logits.at(i, targets[static_cast<size_t>(i)]);
    }
    CHECK(ce == doctest::Approx(ref).epsilon(1e-5));
    ad::Graph g2;
    float lp = g2.value(g2.logprob_sum(g2.leaf(logits), targets)).data[0];
    CHECK(lp == -ce);
    ad::Graph g3;
    float cm = g3.value(g3.cross_entropy_mean(g3.leaf(logits), targets)).data[0];
    CHECK(cm == doctest::Approx(ce / 5.0).epsilon(1e-6));
}

TEST_CASE("grad: d(x*x)/dx at 3 is 6") {
    ad::Graph g;
    Tensor x0 = Tensor::scalar(3.0f);
    x0.requires_grad = true;
    ad::Var x = g.leaf(x0);
    ad::Var loss = g.reduce_sum(g.mul(x, x));
    g.backward(loss);
    CHECK(g.grad(x).data[0] == 6.0f);
}

TEST_CASE("grad: add reuses the same leaf twice and accumulates") {
    ad::Graph g;
    Tensor x0 = Tensor::from({2}, {1.5f, -2.0f});
    x0.requires_grad = true;
    ad::Var x = g.leaf(x0);
    g.backward(g.reduce_sum(g.add(x, x)));
    CHECK(g.grad(x).data[0] == 2.0f);
    CHECK(g.grad(x).data[1] == 2.0f);
}

TEST_CASE("grad: sign is flat, relu gates by input sign") {
    Tensor x0 = Tensor::from({4}, {-1.0f, -0.3f, 0.4f, 2.0f});
    x0.requires_grad = true;
    ad::Graph g;
    ad::Var x = g.leaf(x0);
    g.backward(g.reduce_sum(g.sign(x)));
    for (float v : g.grad(x).data) CHECK(v == 0.0f);
    ad::Graph g2;
    ad::Var x2 = g2.leaf(x0);
    g2.backward(g2.reduce_sum(g2.relu(x2)));
    Tensor d = g2.grad(x2);
    CHECK(d.data[0] == 0.0f);
    CHECK(d.data[1] == 0.0f);
    CHECK(d.data[2] == 1.0f);
    CHECK(d.data[3] == 1.0f);
}

TEST_CASE("grad: softmax-cross-entropy rows sum to zero") {
    Tensor logits = randn({4, 6}, 71, 1.5f);
    logits.requires_grad = true;
    ad::Graph g;
    ad::Var lv = g.leaf(logits);
    g.backward(g.cross_entropy_sum(lv, {2, 5, 0, 3}));
    Tensor d = g.grad(lv);
    for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 6; ++j) s += d.at(i, j);
        CHECK(s == doctest::Approx(0.0).epsilon(1e-5));
    }
}

TEST_CASE("grad: embed_rows accumulates duplicate ids") {
    Tensor table = randn({4, 3}, 81);
    table.requires_grad = true;
    ad::Graph g;
    ad::Var t = g.leaf(table);
    ad::Var y = g.embed_rows(t, {2, 2});
    Tensor w = randn({2, 3}, 82);
    g.backward(g.reduce_sum(g.mul(y, g.constant(w))));
    Tensor d = g.grad(t);
    for (int j = 0; j < 3; ++j) {
        CHECK(d.at(2, j) == w.at(0, j) + w.at(1, j));
        CHECK(d.at(0, j) == 0.0f);
        CHECK(d.at(1, j) == 0.0f);
        CHECK(d.at(3, j) == 0.0f);
    }
}

TEST_CASE("grad: slices scatter into the right block, concat splits back") {
    Tensor x0 = randn({4, 6}, 91);
    x0.requires_grad = true;
    ad::Graph g;
    ad::Var x = g.leaf(x0);
    ad::Var mid = g.slice_cols(g.slice_rows(x, 1, 3), 2, 5);
    Tensor w = randn({2, 3}, 92);
    g.backward(g.reduce_sum(g.mul(mid, g.constant(w))));
    Tensor d = g.grad(x);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) {
            bool inside = i >= 1 && i < 3 && j >= 2 && j < 5;
            CHECK(d.at(i, j) == (inside ? w.at(i - 1, j - 2) : 0.0f));
        }
    }
    ad::Graph g2;
    Tensor a0 = randn({2, 3}, 93), b0 = randn({2, 2}, 94);
    a0.requires_grad = b0.requires_grad = true;
    ad::Var a = g2.leaf(a0), b = g2.leaf(b0);
    ad::Var cat = g2.concat_cols({a, b});
    Tensor wc = randn({2, 5}, 95);
    g2.backward(g2.reduce_sum(g2.mul(cat, g2.constant(wc))));
    Tensor da = g2.grad(a), db = g2.grad(b);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(da.at(i, j) == wc.at(i, j));
        for (int j = 0; j < 2; ++j) CHECK(db.at(i, j) == wc.at(i, j + 3));
    }
}

TEST_CASE("grad: constants are skipped by backward") {
    Tensor img = randn({3, 4}, 101);
    img.requires_grad = true;
    Tensor weights = randn({4, 4}, 102);
    ad::Graph g;
    ad::Var x = g.leaf(img);
    ad::Var wv = g.constant(weights);
    ad::Var y = g.matmul(x, wv);
    g.backward(g.reduce_sum(y));
    CHECK(g.reached_by_backward(x));
    CHECK_FALSE(g.reached_by_backward(wv));
    bool any = false;
    for (float v : g.grad(x).data) any = any || v != 0.0f;
    CHECK(any);
    for (float v : g.grad(wv).data) CHECK(v == 0.0f);
}

TEST_CASE("grad: backward runs once per graph and needs a scalar loss") {
    ad::Graph g;
    Tensor x0 = Tensor::from({2}, {1.0f, 2.0f});
    x0.requires_grad = true;
    ad::Var x = g.leaf(x0);
    CHECK_THROWS(g.backward(x));
    ad::Var loss = g.reduce_sum(x);
    g.backward(loss);
    CHECK_THROWS(g.backward(loss));
}

TEST_CASE("graph rejects bad shapes and non-finite values") {
    ad::Graph g;
    ad::Var a = g.leaf(Tensor::zeros({2, 3}));
    ad::Var b = g.leaf(Tensor::zeros({2, 3}));
    CHECK_THROWS(g.matmul(a, b));
    CHECK_THROWS(g.softmax(a, 0.0f));
    CHECK_THROWS(g.cross_entropy_sum(a, {0, 1, 2}));
    CHECK_THROWS(g.cross_entropy_sum(a, {0, 5}));
    CHECK_THROWS(g.slice_rows(a, 1, 1));
    Tensor bad = Tensor::zeros({2});
    bad.data[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS(g.leaf(bad));
}

TEST_CASE("graph construction counter moves (inference paths can assert it stays put)") {
    int64_t before = ad::Graph::constructed_count();
    { ad::Graph g; }
    CHECK(ad::Graph::constructed_count() == before + 1);
}

TEST_CASE("fd: linear form is recovered almost exactly") {
    Tensor a = randn({3, 5}, 111);
    BuildFn build = [&](ad::Graph &g, ad::Var x) { return g.mul(x, g.constant(a)); };
    float err = centered_fd(build, randn({3, 5}, 112), 113, {0.1f});
    CHECK(err < 1e-6f);
}

TEST_CASE("fd: 4x4 matmul chain at a 1e-3 step") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor a = randn({4, 4}, 3000 + seed);
        Tensor b = randn({4, 4}, 3100 + seed);
        BuildFn build = [&](ad::Graph &g, ad::Var x) {
            return g.matmul(g.matmul(x, g.constant(a)), g.constant(b));
        };
        CHECK(centered_fd(build, randn({4, 4}, 3200 + seed), seed, {5e-4f, 1e-3f, 2e-3f}) <
              k_prim_tol);
    }
}

TEST_CASE("fd: elementwise primitives") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Tensor b = randn({3, 4}, 200 + seed);
        BuildFn mul_b = [&](ad::Graph &g, ad::Var x) { return g.mul(x, g.constant(b)); };
        CHECK(centered_fd(mul_b, randn({3, 4}, 300 + seed), seed) < k_prim_tol);

        BuildFn sig = [](ad::Graph &g, ad::Var x) { return g.sigmoid(x); };
        CHECK(centered_fd(sig, randn({3, 4}, 400 + seed), seed) < k_prim_tol);

        BuildFn rl = [](ad::Graph &g, ad::Var x) { return g.relu(x); };
        CHECK(centered_fd(rl, rand_signed({3, 4}, 500 + seed, 0.3f, 1.5f), seed) < k_prim_tol);

        BuildFn sc = [](ad::Graph &g, ad::Var x) { return g.scale(x, -1.7f); };
        CHECK(centered_fd(sc, randn({3, 4}, 600 + seed), seed) < k_prim_tol);
    }
}

TEST_CASE("fd: matmul against both arguments") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Tensor a = randn({4, 5}, 700 + seed);
        Tensor b = randn({5, 3}, 800 + seed);
        BuildFn wrt_a = [&](ad::Graph &g, ad::Var x) { return g.matmul(x, g.constant(b)); };
        BuildFn wrt_b = [&](ad::Graph &g, ad::Var x) { return g.matmul(g.constant(a), x); };
        CHECK(centered_fd(wrt_a, a, seed) < k_prim_tol);
        CHECK(centered_fd(wrt_b, b, seed) < k_prim_tol);

        Tensor bt = randn({3, 5}, 900 + seed);
        BuildFn nt_a = [&](ad::Graph &g, ad::Var x) { return g.matmul_nt(x, g.constant(bt)); };
        BuildFn nt_b = [&](ad::Graph &g, ad::Var x) { return g.matmul_nt(g.constant(a), x); };
        CHECK(centered_fd(nt_a, a, seed) < k_prim_tol);
        CHECK(centered_fd(nt_b, bt, seed) < k_prim_tol);
    }
}

TEST_CASE("fd: conv2d against input, kernel and bias") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor x = randn({5, 5, 2}, 1000 + seed);
        Tensor w = randn({3, 3, 2, 4}, 1100 + seed, 0.5f);
        Tensor bias = randn({4}, 1200 + seed);
        BuildFn wrt_x = [&](ad::Graph &g, ad::Var v) {
            return g.conv2d(v, g.constant(w), g.constant(bias), 1, 1);
        };
        BuildFn wrt_w = [&](ad::Graph &g, ad::Var v) {
            return g.conv2d(g.constant(x), v, g.constant(bias), 1, 1);
        };
        BuildFn wrt_b = [&](ad::Graph &g, ad::Var v) {
            return g.conv2d(g.constant(x), g.constant(w), v, 1, 1);
        };
        CHECK(centered_fd(wrt_x, x, seed) < k_prim_tol);
        CHECK(centered_fd(wrt_w, w, seed) < k_prim_tol);
        CHECK(centered_fd(wrt_b, bias, seed) < k_prim_tol);

        Tensor w2 = randn({2, 2, 2, 3}, 1300 + seed, 0.5f);
        BuildFn strided = [&](ad::Graph &g, ad::Var v) {
            return g.conv2d(v, g.constant(w2), g.constant(Tensor::zeros({3})), 2, 0);
        };
        CHECK(centered_fd(strided, x, seed) < k_prim_tol);
    }
}

TEST_CASE("fd: layer_norm against input, gamma and beta") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor x = randn({4, 8}, 1400 + seed);
        auto rng = fb::make_rng(1500 + seed, "ln-gamma");
        Tensor gamma = Tensor::uniform({8}, rng, 0.5f, 1.5f);
        Tensor beta = randn({8}, 1600 + seed, 0.5f);
        BuildFn wrt_x = [&](ad::Graph &g, ad::Var v) {
            return g.layer_norm(v, g.constant(gamma), g.constant(beta));
        };
        BuildFn wrt_g = [&](ad::Graph &g, ad::Var v) {
            return g.layer_norm(g.constant(x), v, g.constant(beta));
        };
        BuildFn wrt_b = [&](ad::Graph &g, ad::Var v) {
            return g.layer_norm(g.constant(x), g.constant(gamma), v);
        };
        CHECK(centered_fd(wrt_x, x, seed, {5e-3f, 1e-2f, 3e-2f}) < k_prim_tol);
        CHECK(centered_fd(wrt_g, gamma, seed) < k_prim_tol);
        CHECK(centered_fd(wrt_b, beta, seed) < k_prim_tol);
    }
}

TEST_CASE("fd: softmax at attack temperatures") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        for (float tau : {1.0f, 6.0f}) {
            BuildFn build = [tau](ad::Graph &g, ad::Var x) { return g.softmax(x, tau); };
            float wscale = tau * 4.0f;
            CHECK(centered_fd(build, randn({3, 7}, 1700 + seed, 2.0f), seed,
                              {5e-3f, 1e-2f, 3e-2f}, wscale) < k_prim_tol);
        }
    }
}

TEST_CASE("fd: soft_embed against distribution and table") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor dist = randn({3, 6}, 1800 + seed);
        Tensor table = randn({6, 4}, 1900 + seed);
        BuildFn wrt_d = [&](ad::Graph &g, ad::Var v) { return g.soft_embed(v, g.constant(table)); };
        BuildFn wrt_t = [&](ad::Graph &g, ad::Var v) { return g.soft_embed(g.constant(dist), v); };
        CHECK(centered_fd(wrt_d, dist, seed) < k_prim_tol);
        CHECK(centered_fd(wrt_t, table, seed) < k_prim_tol);
    }
}

TEST_CASE("fd: cross entropy against logits") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        BuildFn build = [](ad::Graph &g, ad::Var v) {
            return g.cross_entropy_sum(v, {3, 0, 8, 1, 4});
        };
        CHECK(centered_fd(build, randn({5, 9}, 2000 + seed, 2.0f), seed) < k_prim_tol);
    }
}

TEST_CASE("fd: cosine_rows against both sides") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor a = randn({3, 6}, 2100 + seed);
        Tensor b = randn({3, 6}, 2200 + seed);
        BuildFn wrt_a = [&](ad::Graph &g, ad::Var v) { return g.cosine_rows(v, g.constant(b)); };
        BuildFn wrt_b = [&](ad::Graph &g, ad::Var v) { return g.cosine_rows(g.constant(a), v); };
        CHECK(centered_fd(wrt_a, a, seed, {5e-3f, 1e-2f, 3e-2f}, 3.0f) < k_prim_tol);
        CHECK(centered_fd(wrt_b, b, seed, {5e-3f, 1e-2f, 3e-2f}, 3.0f) < k_prim_tol);
    }
}

TEST_CASE("fd: add_bias, reduce_mean, concat, slices") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor a = randn({4, 5}, 2300 + seed);
        BuildFn bias = [&](ad::Graph &g, ad::Var v) { return g.add_bias(g.constant(a), v); };
        CHECK(centered_fd(bias, randn({5}, 2400 + seed), seed) < k_prim_tol);

        BuildFn rm = [](ad::Graph &g, ad::Var v) {
            return g.scale(g.reduce_mean(v), 7.0f);
        };
        CHECK(centered_fd(rm, randn({4, 5}, 2500 + seed), seed) < k_prim_tol);

        BuildFn mix = [&](ad::Graph &g, ad::Var v) {
            ad::Var left = g.slice_cols(v, 0, 2);
            ad::Var right = g.slice_cols(v, 2, 5);
            return g.concat_cols({g.sigmoid(right), left});
        };
        CHECK(centered_fd(mix, randn({4, 5}, 2600 + seed), seed) < k_prim_tol);
    }
}

TEST_CASE("fd: small mlp composite stays within the composite tolerance") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Tensor w1 = randn({8, 16}, 2700 + seed, 0.5f);
        Tensor b1 = randn({16}, 2710 + seed, 0.2f);
        Tensor w2 = randn({16, 5}, 2720 + seed, 0.5f);
        Tensor b2 = randn({5}, 2730 + seed, 0.2f);
        auto rng = fb::make_rng(2740 + seed, "mlp-gamma");
        Tensor gamma = Tensor::uniform({16}, rng, 0.8f, 1.2f);
        BuildFn build = [&](ad::Graph &g, ad::Var x) {
            ad::Var h = g.add_bias(g.matmul(x, g.constant(w1)), g.constant(b1));
            h = g.layer_norm(h, g.constant(gamma), g.constant(Tensor::zeros({16})));
            h = g.relu(h);
            ad::Var logits = g.add_bias(g.matmul(h, g.constant(w2)), g.constant(b2));
            return g.cross_entropy_sum(logits, {2, 4});
        };
        CHECK(centered_fd(build, randn({2, 8}, 2750 + seed), seed, {5e-3f, 1e-2f, 3e-2f}) < 1e-3f);
    }
}
