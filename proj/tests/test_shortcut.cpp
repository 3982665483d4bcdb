#include <cmath>
#include <functional>

#include "doctest.h"
#include "fb/autodiff.hpp"
#include "fb/checkpoint.hpp"
#include "fb/model.hpp"
#include "fb/nn.hpp"
#include "fb/optim.hpp"
#include "fb/rng.hpp"
#include "fb/shortcut.hpp"
#include "fb/synth.hpp"
#include "fb/vocab.hpp"
#include "fb/vqvae.hpp"

using namespace fb;

static LmConfig tiny_lm_cfg() {
    LmConfig cfg;
    cfg.d_model = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.context = 48;
    cfg.d_ff = 64;
    return cfg;
}

static VqVae &shared_vq() {
    static VqVae vq = train_vqvae(synth_dataset(8, 77), VqConfig{}, 77);
    return vq;
}

static FusionModel &shared_lm() {
    static FusionModel m = lm_init(tiny_lm_cfg(), 7);
    return m;
}

static std::vector<Tensor> &shortcut_images() {
    static std::vector<Tensor> imgs = synth_dataset(8, 123);
    return imgs;
}

static EmbeddingShortcut &shared_embed_shortcut() {
    static EmbeddingShortcut s = train_embedding_shortcut(shared_vq(), shared_lm(),
                                                          shortcut_images(), ShortcutConfig{}, 5);
    return s;
}

static OneHotShortcut &shared_onehot_shortcut() {
    static OneHotShortcut s =
        train_onehot_shortcut(shared_vq(), shortcut_images(), ShortcutConfig{}, 5);
    return s;
}

TEST_CASE("forward shapes, zero net, and per-cell independence") {
    EmbeddingShortcut s = embed_shortcut_init(16, 64, 32, 1);
    auto rng = make_rng(1, "test-latents");
    Tensor latents = Tensor::randn({16, 16}, rng);
    Tensor out = forward_embed(s, latents);
    CHECK(out.shape == std::vector<int>({16, 32}));

    EmbeddingShortcut zero = s;
    for (Tensor *p : zero.params()) std::fill(p->data.begin(), p->data.end(), 0.0f);
    Tensor zout = forward_embed(zero, latents);
    for (float v : zout.data) CHECK(v == 0.0f);

    Tensor mod = latents;
    for (int j = 0; j < 16; ++j) mod.at(3, j) += 0.5f;
    Tensor out2 = forward_embed(s, mod);
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 32; ++j) {
            if (i == 3) continue;
            CHECK(out2.at(i, j) == out.at(i, j));
        }
    }

    Tensor bad({4, 9});
    CHECK_THROWS(forward_embed(s, bad));
    CHECK_THROWS(forward_onehot(onehot_shortcut_init(16, 64, 64, 1), bad, 1.0f));
}

TEST_CASE("graph and plain forwards agree") {
    EmbeddingShortcut s = shared_embed_shortcut();
    OneHotShortcut o = shared_onehot_shortcut();
    Tensor z = vq_encode(shared_vq(), shortcut_images()[0]);

    ad::Graph g;
    ad::Var ze = g.constant(z);
    const Tensor &ge = g.value(embed_shortcut_graph(g, s, ze));
    Tensor pe = forward_embed(s, z);
    REQUIRE(ge.same_shape(pe));
    for (int64_t i = 0; i < pe.numel(); ++i) CHECK(std::abs(ge.data[i] - pe.data[i]) <= 1e-6f);

    const Tensor &gp = g.value(onehot_probs_graph(g, o, ze, 6.0f));
    Tensor pp = forward_onehot(o, z, 6.0f);
    REQUIRE(gp.same_shape(pp));
    for (int64_t i = 0; i < pp.numel(); ++i) CHECK(std::abs(gp.data[i] - pp.data[i]) <= 1e-6f);
}

TEST_CASE("linearly reachable two-code targets train to cosine distance zero") {
    auto rng = make_rng(9, "test-twocode");
    Tensor l0 = Tensor::randn({16}, rng);
    Tensor l1 = Tensor::randn({16}, rng);
    Tensor wstar = Tensor::randn({16, 32}, rng);
    Tensor latents({32, 16});
    for (int i = 0; i < 32; ++i) {
        const Tensor &src = (i % 2 == 0) ? l0 : l1;
        for (int j = 0; j < 16; ++j) latents.at(i, j) = src.data[static_cast<size_t>(j)];
    }
    Tensor targets = Tensor::zeros({32, 32});
    matmul_acc(latents.data.data(), wstar.data.data(), targets.data.data(), 32, 16, 32);

    EmbeddingShortcut s = embed_shortcut_init(16, 64, 32, 9);
    Adam opt(s.params(), 3e-3f);
    double final_cos = 0.0;
    for (int step = 0; step < 400; ++step) {
        ad::Graph g;
        std::vector<ad::Var> w;
        for (Tensor *p : s.params()) {
            p->requires_grad = true;
            w.push_back(g.leaf(*p));
        }
        ad::Var pred = g.add_bias(
            g.matmul(g.relu(g.add_bias(g.matmul(g.constant(latents), w[0]), w[1])), w[2]), w[3]);
        ad::Var cos = g.reduce_mean(g.cosine_rows(pred, g.constant(targets)));
        ad::Var loss = g.scale(cos, -1.0f);
        g.backward(loss);
        std::vector<Tensor> grads;
        for (ad::Var v : w) grads.push_back(g.grad(v));
        opt.step(grads);
        final_cos = g.value(cos).data[0];
    }
    CHECK(final_cos >= 0.999);
}

TEST_CASE("untrained shortcut predictions are nearly orthogonal to targets") {
    EmbeddingShortcut s = embed_shortcut_init(16, 64, 128, 31);
    FidelityReport r =
        shortcut_fidelity(s, shared_vq(), lm_init(LmConfig{}, 3), shortcut_images());
    CHECK(std::abs(r.mean_cosine) < 0.3);
}

TEST_CASE("trained embedding shortcut clears its cosine gate") {
    FidelityReport r =
        shortcut_fidelity(shared_embed_shortcut(), shared_vq(), shared_lm(), shortcut_images());
    CHECK(r.mean_cosine >= 0.95);
    CHECK(r.cells == static_cast<int>(shortcut_images().size()) * 16);
    FidelityReport r2 =
        shortcut_fidelity(shared_embed_shortcut(), shared_vq(), shared_lm(), shortcut_images());
    CHECK(r.mean_cosine == r2.mean_cosine);
}

TEST_CASE("trained 1-hot shortcut matches the quantizer cell by cell") {
    const OneHotShortcut &s = shared_onehot_shortcut();
    const VqVae &vq = shared_vq();
    FidelityReport r = shortcut_fidelity(s, vq, shortcut_images(), 1.0f);
    CHECK(r.top1_accuracy >= 0.90);
    CHECK(r.top1_accuracy <= 1.0);

    int agree = 0, total = 0;
    for (const Tensor &img : shortcut_images()) {
        Tensor z = vq_encode(vq, img);
        std::vector<int> codes = vq_quantize(z, vq.codebook);
        Tensor probs = forward_onehot(s, z, 1.0f);
        for (int c = 0; c < probs.shape[0]; ++c) {
            const float *row = &probs.data[static_cast<size_t>(c) * probs.shape[1]];
            int best = 0;
            for (int j = 1; j < probs.shape[1]; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (best == codes[static_cast<size_t>(c)]) ++agree;
            ++total;
        }
    }
    CHECK(static_cast<double>(agree) / total == doctest::Approx(r.top1_accuracy));
}

TEST_CASE("1-hot rows are distributions and tau shapes their entropy") {
    const OneHotShortcut &s = shared_onehot_shortcut();
    Tensor z = vq_encode(shared_vq(), shortcut_images()[3]);

    for (float tau : {1.0f, 6.0f, 1000.0f}) {
        Tensor probs = forward_onehot(s, z, tau);
        for (int i = 0; i < probs.shape[0]; ++i) {
            double sum = 0.0;
            for (int j = 0; j < probs.shape[1]; ++j) {
                CHECK(probs.at(i, j) >= 0.0f);
                sum += probs.at(i, j);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }

    // tau -> inf flattens to uniform.
    Tensor flat = forward_onehot(s, z, 1e6f);
    for (int64_t i = 0; i < flat.numel(); ++i) {
        CHECK(flat.data[i] == doctest::Approx(1.0 / 64.0).epsilon(1e-3));
    }

    // tau -> 0 concentrates all mass on the argmax.
    Tensor logits_probs = forward_onehot(s, z, 1.0f);
    Tensor sharp = forward_onehot(s, z, 0.01f);
    for (int i = 0; i < sharp.shape[0]; ++i) {
        const float *lr = &logits_probs.data[static_cast<size_t>(i) * 64];
        const float *sr = &sharp.data[static_cast<size_t>(i) * 64];
        int best = 0;
        for (int j = 1; j < 64; ++j) {
            if (lr[j] > lr[best]) best = j;
        }
        CHECK(sr[best] == doctest::Approx(1.0).epsilon(1e-4));
    }

    FidelityReport low = shortcut_fidelity(s, shared_vq(), shortcut_images(), 1.0f);
    FidelityReport high = shortcut_fidelity(s, shared_vq(), shortcut_images(), 6.0f);
    CHECK(high.mean_entropy > low.mean_entropy);
    CHECK(high.min_entropy >= low.min_entropy);
    CHECK(low.mean_entropy >= 0.0);
    CHECK(high.max_entropy <= std::log(64.0) + 1e-9);

    CHECK_THROWS(forward_onehot(s, z, 0.0f));
    CHECK_THROWS(forward_onehot(s, z, -1.0f));
    ad::Graph g;
    CHECK_THROWS(onehot_probs_graph(g, s, g.constant(z), 0.0f));
}

TEST_CASE("training mutates neither the tokenizer nor the model") {
    VqVae vq_copy = shared_vq();
    FusionModel lm_copy = lm_from_named(shared_lm().cfg, shared_lm().named());
    std::vector<std::vector<float>> vq_before, lm_before;
    for (Tensor *p : vq_copy.params()) vq_before.push_back(p->data);
    for (Tensor *p : lm_copy.params()) lm_before.push_back(p->data);

    ShortcutConfig cfg;
    cfg.cosine_gate = 0.0f;
    cfg.top1_gate = 0.0f;
    cfg.embed_epochs = 2;
    cfg.onehot_epochs = 2;
    train_embedding_shortcut(vq_copy, lm_copy, shortcut_images(), cfg, 11);
    train_onehot_shortcut(vq_copy, shortcut_images(), cfg, 11);

    size_t i = 0;
    for (Tensor *p : vq_copy.params()) CHECK(p->data == vq_before[i++]);
    i = 0;
    for (Tensor *p : lm_copy.params()) CHECK(p->data == lm_before[i++]);
}

TEST_CASE("training is seed-deterministic and gates abort when unreachable") {
    ShortcutConfig cfg;
    cfg.embed_epochs = 2;
    cfg.onehot_epochs = 2;
    cfg.cosine_gate = 0.0f;
    cfg.top1_gate = 0.0f;
    EmbeddingShortcut a =
        train_embedding_shortcut(shared_vq(), shared_lm(), shortcut_images(), cfg, 21);
    EmbeddingShortcut b =
        train_embedding_shortcut(shared_vq(), shared_lm(), shortcut_images(), cfg, 21);
    CHECK(a.w2.data == b.w2.data);

    ShortcutConfig strict;
    strict.embed_epochs = 1;
    strict.onehot_epochs = 1;
    strict.cosine_gate = 1.01f;
    CHECK_THROWS(
        train_embedding_shortcut(shared_vq(), shared_lm(), shortcut_images(), strict, 21));
    strict.top1_gate = 1.01f;
    CHECK_THROWS(train_onehot_shortcut(shared_vq(), shortcut_images(), strict, 21));

    std::vector<Tensor> few(shortcut_images().begin(), shortcut_images().begin() + 10);
    CHECK_THROWS(train_onehot_shortcut(shared_vq(), few, ShortcutConfig{}, 21));
}

TEST_CASE("checkpoints restore both shortcut flavors") {
    const EmbeddingShortcut &e = shared_embed_shortcut();
    const OneHotShortcut &o = shared_onehot_shortcut();
    checkpoint_save("sc_e.bin", e.named());
    checkpoint_save("sc_o.bin", o.named());
    EmbeddingShortcut e2 = embed_shortcut_from_named(checkpoint_load("sc_e.bin"));
    OneHotShortcut o2 = onehot_shortcut_from_named(checkpoint_load("sc_o.bin"));
    std::remove("sc_e.bin");
    std::remove("sc_o.bin");

    Tensor z = vq_encode(shared_vq(), shortcut_images()[1]);
    CHECK(forward_embed(e2, z).data == forward_embed(e, z).data);
    CHECK(forward_onehot(o2, z, 6.0f).data == forward_onehot(o, z, 6.0f).data);
    CHECK(o2.tau == o.tau);

    TensorMap no_tau = o.named();
    no_tau.erase("tau");
    CHECK_THROWS(onehot_shortcut_from_named(no_tau));
    TensorMap no_w = e.named();
    no_w.erase("w2");
    CHECK_THROWS(embed_shortcut_from_named(no_w));
}

static std::vector<int> soft_path_logit_row(const FusionModel &m, const VqVae &vq,
                                            const OneHotShortcut &s, const Tensor &img,
                                            const std::vector<int> &prefix,
                                            const std::vector<int> &suffix, float tau,
                                            Tensor *out_row) {
    ad::Graph g;
    LmGraphWeights w = lm_constants_on_graph(g, m);
    ad::Var z = vq_encode_graph(g, vq, g.constant(img));
    ad::Var probs = onehot_probs_graph(g, s, z, tau);
    ad::Var img_table = g.slice_rows(w.embed, k_text_vocab, k_vocab);
    ad::Var x = g.concat_rows({g.embed_rows(w.embed, prefix), g.soft_embed(probs, img_table),
                               g.embed_rows(w.embed, suffix)});
    ad::Var logits = lm_forward_graph(g, m.cfg, w, x);
    const Tensor &lv = g.value(logits);
    Tensor row({m.cfg.vocab});
    for (int j = 0; j < m.cfg.vocab; ++j) row.data[static_cast<size_t>(j)] = lv.at(lv.shape[0] - 1, j);
    *out_row = row;

    const Tensor &pv = g.value(probs);
    std::vector<int> argmax;
    for (int i = 0; i < pv.shape[0]; ++i) {
        int best = 0;
        for (int j = 1; j < pv.shape[1]; ++j) {
            if (pv.at(i, j) > pv.at(i, best)) best = j;
        }
        argmax.push_back(best);
    }
    return argmax;
}

TEST_CASE("hard tokens and the near-zero-tau soft path give matching logits") {
    const VqVae &vq = shared_vq();
    const OneHotShortcut &s = shared_onehot_shortcut();
    const FusionModel &m = shared_lm();
    std::vector<int> prefix = {tok::bos, tok::harm, topic_token(1), tok::boi};
    std::vector<int> suffix = {tok::eoi, tok::ask};

    int tested = 0;
    for (const Tensor &img : shortcut_images()) {
        Tensor z = vq_encode(vq, img);
        std::vector<int> codes = vq_quantize(z, vq.codebook);
        Tensor soft_row;
        std::vector<int> argmax =
            soft_path_logit_row(m, vq, s, img, prefix, suffix, 0.01f, &soft_row);
        if (argmax != codes) continue;
        ++tested;
        std::vector<int> hard = prefix;
        for (int c : codes) hard.push_back(image_token(c));
        hard.insert(hard.end(), suffix.begin(), suffix.end());
        Tensor logits = lm_logits(m, hard);
        for (int j = 0; j < m.cfg.vocab; ++j) {
            CHECK(std::abs(soft_row.data[static_cast<size_t>(j)] -
                           logits.at(logits.shape[0] - 1, j)) < 1e-3f);
        }
        if (tested >= 4) break;
    }
    REQUIRE(tested >= 1);
}

static float pixel_fd_worst(const std::function<std::pair<float, Tensor>(const Tensor &)> &f,
                            const Tensor &x) {
    std::vector<int64_t> coords;
    auto rng = make_rng(3, "test-fd-coords");
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    for (int i = 0; i < 8; ++i) coords.push_back(pick(rng));
    return ad::finite_diff_check_multi(f, x, {2e-3f, 5e-3f, 1e-2f, 2e-2f, 4e-2f}, coords);
}

// The probe loss is the squared distance of the final logit row from the row
// produced by a fixed reference image. Centering keeps the loss value small,
// so finite differences stay above fp32 rounding of the loss output.
TEST_CASE("pixels-to-loss stays differentiable through both shortcuts") {
    const VqVae &vq = shared_vq();
    const FusionModel &m = shared_lm();
    const OneHotShortcut &oh = shared_onehot_shortcut();
    const EmbeddingShortcut &es = shared_embed_shortcut();
    std::vector<int> prefix = {tok::bos, tok::harm, topic_token(2), tok::boi};
    std::vector<int> suffix = {tok::eoi, tok::ask};

    Tensor px0 = shortcut_images()[7];
    Tensor px = px0;
    auto orng = make_rng(4, "test-fd-offset");
    std::uniform_int_distribution<int64_t> opick(0, px.numel() - 1);
    for (int i = 0; i < 128; ++i) {
        int64_t c = opick(orng);
        px.data[c] = std::min(1.0f, std::max(0.0f, px.data[c] + 0.15f));
    }
    px.requires_grad = true;

    auto last_row_onehot = [&](ad::Graph &g, ad::Var p) {
        LmGraphWeights w = lm_constants_on_graph(g, m);
        ad::Var z = vq_encode_graph(g, vq, p);
        ad::Var probs = onehot_probs_graph(g, oh, z, 6.0f);
        ad::Var img_table = g.slice_rows(w.embed, k_text_vocab, k_vocab);
        ad::Var x = g.concat_rows({g.embed_rows(w.embed, prefix), g.soft_embed(probs, img_table),
                                   g.embed_rows(w.embed, suffix)});
        ad::Var logits = lm_forward_graph(g, m.cfg, w, x);
        int t = g.value(logits).shape[0];
        return g.slice_rows(logits, t - 1, t);
    };
    auto last_row_embed = [&](ad::Graph &g, ad::Var p) {
        LmGraphWeights w = lm_constants_on_graph(g, m);
        ad::Var z = vq_encode_graph(g, vq, p);
        ad::Var cells = embed_shortcut_graph(g, es, z);
        ad::Var x = g.concat_rows(
            {g.embed_rows(w.embed, prefix), cells, g.embed_rows(w.embed, suffix)});
        ad::Var logits = lm_forward_graph(g, m.cfg, w, x);
        int t = g.value(logits).shape[0];
        return g.slice_rows(logits, t - 1, t);
    };

    auto check_path = [&](auto &&last_row) {
        Tensor base;
        {
            ad::Graph g;
            base = g.value(last_row(g, g.constant(px0)));
        }
        auto f = [&](const Tensor &pxin) {
            ad::Graph g;
            ad::Var p = g.leaf(pxin);
            ad::Var rc = g.sub(last_row(g, p), g.constant(base));
            ad::Var loss = g.reduce_sum(g.mul(rc, rc));
            g.backward(loss);
            return std::make_pair(g.value(loss).data[0], g.grad(p));
        };
        return pixel_fd_worst(f, px);
    };
    CHECK(check_path(last_row_onehot) < 1e-3f);
    CHECK(check_path(last_row_embed) < 1e-3f);

    // A plain attack-style logprob target also reaches the pixels.
    ad::Graph g;
    ad::Var p = g.leaf(px);
    ad::Var loss = g.logprob_sum(last_row_onehot(g, p), {tok::sure});
    g.backward(loss);
    Tensor grad = g.grad(p);
    REQUIRE(g.reached_by_backward(p));
    double norm = 0.0;
    for (float v : grad.data) norm += static_cast<double>(v) * v;
    CHECK(norm > 0.0);
}
