#include "fb/shortcut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fb/nn.hpp"
#include "fb/optim.hpp"
#include "fb/rng.hpp"
#include "fb/vocab.hpp"

namespace fb {

std::vector<Tensor *> EmbeddingShortcut::params() { return {&w1, &b1, &w2, &b2}; }

TensorMap EmbeddingShortcut::named() const {
    return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};
}

std::vector<Tensor *> OneHotShortcut::params() { return {&w1, &b1, &w2, &b2}; }

TensorMap OneHotShortcut::named() const {
    Tensor t({1});
    t.data[0] = tau;
    return {{"tau", t}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};
}

static Tensor he_init(std::vector<int> shape, int fan_in, std::mt19937 &rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0f / static_cast<float>(fan_in)));
}

EmbeddingShortcut embed_shortcut_init(int d_latent, int hidden, int d_model, uint64_t seed) {
    require(d_latent > 0 && hidden > 0 && d_model > 0, "embed_shortcut_init: bad dims");
    auto rng = make_rng(seed, "shortcut-embed-init");
    EmbeddingShortcut s;
    s.w1 = he_init({d_latent, hidden}, d_latent, rng);
    s.b1 = Tensor::zeros({hidden});
    s.w2 = he_init({hidden, d_model}, hidden, rng);
    s.b2 = Tensor::zeros({d_model});
    return s;
}

OneHotShortcut onehot_shortcut_init(int d_latent, int hidden, int codes, uint64_t seed) {
    require(d_latent > 0 && hidden > 0 && codes > 0, "onehot_shortcut_init: bad dims");
    auto rng = make_rng(seed, "shortcut-onehot-init");
    OneHotShortcut s;
    s.w1 = he_init({d_latent, hidden}, d_latent, rng);
    s.b1 = Tensor::zeros({hidden});
    s.w2 = he_init({hidden, codes}, hidden, rng);
    s.b2 = Tensor::zeros({codes});
    return s;
}

template <typename S>
static void assign_named(S &s, const TensorMap &named) {
    auto get = [&](const char *key) {
        auto it = named.find(key);
        require(it != named.end(), std::string("shortcut_from_named: missing ") + key);
        return it->second;
    };
    s.w1 = get("w1");
    s.b1 = get("b1");
    s.w2 = get("w2");
    s.b2 = get("b2");
    require(s.w1.rank() == 2 && s.w2.rank() == 2 && s.w1.shape[1] == s.b1.shape[0] &&
                s.w1.shape[1] == s.w2.shape[0] && s.w2.shape[1] == s.b2.shape[0],
            "shortcut_from_named: inconsistent shapes");
}

EmbeddingShortcut embed_shortcut_from_named(const TensorMap &named) {
    EmbeddingShortcut s;
    assign_named(s, named);
    return s;
}

OneHotShortcut onehot_shortcut_from_named(const TensorMap &named) {
    OneHotShortcut s;
    assign_named(s, named);
    auto it = named.find("tau");
    require(it != named.end() && it->second.numel() == 1, "shortcut_from_named: missing tau");
    s.tau = it->second.data[0];
    require(s.tau > 0.0f, "shortcut_from_named: tau must be > 0");
    return s;
}

template <typename S>
static ad::Var mlp_graph(ad::Graph &g, const S &s, ad::Var latents) {
    require(g.value(latents).rank() == 2 && g.value(latents).shape[1] == s.w1.shape[0],
            "shortcut: latents must be (cells, d_latent)");
    ad::Var h = g.relu(g.add_bias(g.matmul(latents, g.constant(s.w1)), g.constant(s.b1)));
    return g.add_bias(g.matmul(h, g.constant(s.w2)), g.constant(s.b2));
}

ad::Var embed_shortcut_graph(ad::Graph &g, const EmbeddingShortcut &s, ad::Var latents) {
    return mlp_graph(g, s, latents);
}

ad::Var onehot_logits_graph(ad::Graph &g, const OneHotShortcut &s, ad::Var latents) {
    return mlp_graph(g, s, latents);
}

ad::Var onehot_probs_graph(ad::Graph &g, const OneHotShortcut &s, ad::Var latents, float tau) {
    require(tau > 0.0f, "onehot_probs_graph: tau must be > 0");
    return g.softmax(onehot_logits_graph(g, s, latents), tau);
}

template <typename S>
static Tensor mlp_plain(const S &s, const Tensor &latents) {
    require(latents.rank() == 2 && latents.shape[1] == s.w1.shape[0],
            "shortcut: latents must be (cells, d_latent)");
    int n = latents.shape[0], hidden = s.w1.shape[1], out = s.w2.shape[1];
    Tensor h = Tensor::zeros({n, hidden});
    matmul_acc(latents.data.data(), s.w1.data.data(), h.data.data(), n, latents.shape[1], hidden);
    for (int i = 0; i < n; ++i) {
        float *row = &h.data[static_cast<size_t>(i) * hidden];
        for (int j = 0; j < hidden; ++j) {
            float x = row[j] + s.b1.data[static_cast<size_t>(j)];
            row[j] = x > 0.0f ? x : 0.0f;
        }
    }
    Tensor y = Tensor::zeros({n, out});
    matmul_acc(h.data.data(), s.w2.data.data(), y.data.data(), n, hidden, out);
    for (int i = 0; i < n; ++i) {
        float *row = &y.data[static_cast<size_t>(i) * out];
        for (int j = 0; j < out; ++j) row[j] += s.b2.data[static_cast<size_t>(j)];
    }
    return y;
}

Tensor forward_embed(const EmbeddingShortcut &s, const Tensor &latents) {
    return mlp_plain(s, latents);
}

Tensor forward_onehot(const OneHotShortcut &s, const Tensor &latents, float tau) {
    require(tau > 0.0f, "forward_onehot: tau must be > 0");
    Tensor y = mlp_plain(s, latents);
    for (int i = 0; i < y.shape[0]; ++i) {
        float *row = &y.data[static_cast<size_t>(i) * y.shape[1]];
        softmax_row(row, row, y.shape[1], 1.0f / tau);
    }
    return y;
}

struct ShortcutData {
    std::vector<Tensor> train_latents, held_latents;  // (cells, d_latent) each
    std::vector<std::vector<int>> train_codes, held_codes;
};

static ShortcutData encode_split(const VqVae &vq, const std::vector<Tensor> &images) {
    require(images.size() >= 64, "shortcut training needs at least 64 images");
    ShortcutData d;
    for (size_t i = 0; i < images.size(); ++i) {
        Tensor z = vq_encode(vq, images[i]);
        std::vector<int> codes = vq_quantize(z, vq.codebook);
        if (i % 5 == 4) {
            d.held_latents.push_back(std::move(z));
            d.held_codes.push_back(std::move(codes));
        } else {
            d.train_latents.push_back(std::move(z));
            d.train_codes.push_back(std::move(codes));
        }
    }
    return d;
}

static double mean_row_cosine(const Tensor &a, const Tensor &b) {
    require(a.same_shape(b), "mean_row_cosine: shape mismatch");
    double total = 0.0;
    int n = a.shape[0], w = a.shape[1];
    for (int i = 0; i < n; ++i) {
        const float *x = &a.data[static_cast<size_t>(i) * w];
        const float *y = &b.data[static_cast<size_t>(i) * w];
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (int j = 0; j < w; ++j) {
            dot += static_cast<double>(x[j]) * y[j];
            nx += static_cast<double>(x[j]) * x[j];
            ny += static_cast<double>(y[j]) * y[j];
        }
        total += dot / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-12);
    }
    return total / n;
}

static Tensor target_embed_rows(const FusionModel &m, const std::vector<int> &codes) {
    Tensor t({static_cast<int>(codes.size()), m.cfg.d_model});
    for (size_t i = 0; i < codes.size(); ++i) {
        const float *src =
            &m.embed.data[static_cast<size_t>(image_token(codes[i])) * m.cfg.d_model];
        std::copy(src, src + m.cfg.d_model, &t.data[i * static_cast<size_t>(m.cfg.d_model)]);
    }
    return t;
}

EmbeddingShortcut train_embedding_shortcut(const VqVae &vq, const FusionModel &m,
                                           const std::vector<Tensor> &images,
                                           const ShortcutConfig &cfg, uint64_t seed) {
    ShortcutData d = encode_split(vq, images);
    EmbeddingShortcut s =
        embed_shortcut_init(vq.cfg.d_latent, cfg.hidden, m.cfg.d_model, seed);
    Adam opt(s.params(), cfg.lr);
    for (int epoch = 0; epoch < cfg.embed_epochs; ++epoch) {
        for (size_t i = 0; i < d.train_latents.size(); ++i) {
            ad::Graph g;
            std::vector<ad::Var> w;
            for (Tensor *p : s.params()) {
                p->requires_grad = true;
                w.push_back(g.leaf(*p));
            }
            ad::Var pred = g.add_bias(
                g.matmul(g.relu(g.add_bias(g.matmul(g.constant(d.train_latents[i]), w[0]), w[1])),
                         w[2]),
                w[3]);
            Tensor tgt = target_embed_rows(m, d.train_codes[i]);
            ad::Var loss = g.scale(g.reduce_mean(g.cosine_rows(pred, g.constant(tgt))), -1.0f);
            g.backward(loss);
            std::vector<Tensor> grads;
            for (ad::Var v : w) grads.push_back(g.grad(v));
            opt.step(grads);
        }
    }
    for (Tensor *p : s.params()) p->requires_grad = false;

    double cos_sum = 0.0;
    for (size_t i = 0; i < d.held_latents.size(); ++i) {
        Tensor pred = forward_embed(s, d.held_latents[i]);
        cos_sum += mean_row_cosine(pred, target_embed_rows(m, d.held_codes[i]));
    }
    double held_cos = cos_sum / static_cast<double>(d.held_latents.size());
    require(held_cos >= cfg.cosine_gate,
            "train_embedding_shortcut: held-out mean cosine " + std::to_string(held_cos) +
                " below gate " + std::to_string(cfg.cosine_gate));
    return s;
}

OneHotShortcut train_onehot_shortcut(const VqVae &vq, const std::vector<Tensor> &images,
                                     const ShortcutConfig &cfg, uint64_t seed) {
    ShortcutData d = encode_split(vq, images);
    OneHotShortcut s = onehot_shortcut_init(vq.cfg.d_latent, cfg.hidden, vq.cfg.codes, seed);
    Adam opt(s.params(), cfg.lr);
    for (int epoch = 0; epoch < cfg.onehot_epochs; ++epoch) {
        for (size_t i = 0; i < d.train_latents.size(); ++i) {
            ad::Graph g;
            std::vector<ad::Var> w;
            for (Tensor *p : s.params()) {
                p->requires_grad = true;
                w.push_back(g.leaf(*p));
            }
            ad::Var logits = g.add_bias(
                g.matmul(g.relu(g.add_bias(g.matmul(g.constant(d.train_latents[i]), w[0]), w[1])),
                         w[2]),
                w[3]);
            ad::Var loss = g.cross_entropy_mean(logits, d.train_codes[i]);
            g.backward(loss);
            std::vector<Tensor> grads;
            for (ad::Var v : w) grads.push_back(g.grad(v));
            opt.step(grads);
        }
    }
    for (Tensor *p : s.params()) p->requires_grad = false;

    int hit = 0, total = 0;
    for (size_t i = 0; i < d.held_latents.size(); ++i) {
        Tensor logits = mlp_plain(s, d.held_latents[i]);
        for (int c = 0; c < logits.shape[0]; ++c) {
            const float *row = &logits.data[static_cast<size_t>(c) * logits.shape[1]];
            int best = 0;
            for (int j = 1; j < logits.shape[1]; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (best == d.held_codes[i][static_cast<size_t>(c)]) ++hit;
            ++total;
        }
    }
    double top1 = static_cast<double>(hit) / total;
    require(top1 >= cfg.top1_gate, "train_onehot_shortcut: held-out top-1 " +
                                       std::to_string(top1) + " below gate " +
                                       std::to_string(cfg.top1_gate));
    return s;
}

FidelityReport shortcut_fidelity(const EmbeddingShortcut &s, const VqVae &vq,
                                 const FusionModel &m, const std::vector<Tensor> &images) {
    require(!images.empty(), "shortcut_fidelity: no images");
    FidelityReport r;
    double cos_sum = 0.0;
    for (const Tensor &img : images) {
        Tensor z = vq_encode(vq, img);
        Tensor pred = forward_embed(s, z);
        cos_sum += mean_row_cosine(pred, target_embed_rows(m, vq_quantize(z, vq.codebook)));
        r.cells += z.shape[0];
    }
    r.mean_cosine = cos_sum / static_cast<double>(images.size());
    return r;
}

FidelityReport shortcut_fidelity(const OneHotShortcut &s, const VqVae &vq,
                                 const std::vector<Tensor> &images, float tau) {
    require(!images.empty(), "shortcut_fidelity: no images");
    FidelityReport r;
    r.min_entropy = std::numeric_limits<double>::infinity();
    int hit = 0;
    double ent_sum = 0.0;
    for (const Tensor &img : images) {
        Tensor z = vq_encode(vq, img);
        std::vector<int> codes = vq_quantize(z, vq.codebook);
        Tensor probs = forward_onehot(s, z, tau);
        for (int c = 0; c < probs.shape[0]; ++c) {
            const float *row = &probs.data[static_cast<size_t>(c) * probs.shape[1]];
            int best = 0;
            double ent = 0.0;
            for (int j = 0; j < probs.shape[1]; ++j) {
                if (row[j] > row[best]) best = j;
                if (row[j] > 0.0f) ent -= static_cast<double>(row[j]) * std::log(row[j]);
            }
            if (best == codes[static_cast<size_t>(c)]) ++hit;
            ent_sum += ent;
            r.min_entropy = std::min(r.min_entropy, ent);
            r.max_entropy = std::max(r.max_entropy, ent);
            ++r.cells;
        }
    }
    r.top1_accuracy = static_cast<double>(hit) / r.cells;
    r.mean_entropy = ent_sum / r.cells;
    return r;
}

}  // namespace fb
