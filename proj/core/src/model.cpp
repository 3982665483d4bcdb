#include "fb/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fb/nn.hpp"
#include "fb/optim.hpp"
#include "fb/rng.hpp"
#include "fb/synth.hpp"

namespace fb {

std::vector<Tensor *> FusionModel::params() {
    std::vector<Tensor *> out = {&embed, &pos};
    for (LmBlock &b : blocks) {
        for (Tensor *t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b,
                          &b.w1, &b.b1, &b.w2, &b.b2}) {
            out.push_back(t);
        }
    }
    out.push_back(&lnf_g);
    out.push_back(&lnf_b);
    out.push_back(&head);
    return out;
}

TensorMap FusionModel::named() const {
    TensorMap out;
    out["embed"] = embed;
    out["pos"] = pos;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const LmBlock &b = blocks[i];
        std::string p = "block." + std::to_string(i) + ".";
        out[p + "ln1_g"] = b.ln1_g;
        out[p + "ln1_b"] = b.ln1_b;
        out[p + "wq"] = b.wq;
        out[p + "wk"] = b.wk;
        out[p + "wv"] = b.wv;
        out[p + "wo"] = b.wo;
        out[p + "ln2_g"] = b.ln2_g;
        out[p + "ln2_b"] = b.ln2_b;
        out[p + "w1"] = b.w1;
        out[p + "b1"] = b.b1;
        out[p + "w2"] = b.w2;
        out[p + "b2"] = b.b2;
    }
    out["lnf_g"] = lnf_g;
    out["lnf_b"] = lnf_b;
    out["head"] = head;
    return out;
}

FusionModel lm_init(const LmConfig &cfg, uint64_t seed) {
    require(cfg.d_model % cfg.heads == 0, "lm: d_model must divide into heads");
    require(cfg.vocab >= 2 && cfg.layers >= 1 && cfg.context >= 2, "lm: bad config");
    auto rng = make_rng(seed, "lm-init");
    float s = 0.02f;
    float s_res = s / std::sqrt(2.0f * static_cast<float>(cfg.layers));
    FusionModel m;
    m.cfg = cfg;
    m.embed = Tensor::randn({cfg.vocab, cfg.d_model}, rng, s);
    m.pos = Tensor::randn({cfg.context, cfg.d_model}, rng, s);
    m.blocks.resize(static_cast<size_t>(cfg.layers));
    for (LmBlock &b : m.blocks) {
        b.ln1_g = Tensor::full({cfg.d_model}, 1.0f);
        b.ln1_b = Tensor::zeros({cfg.d_model});
        b.wq = Tensor::randn({cfg.d_model, cfg.d_model}, rng, s);
        b.wk = Tensor::randn({cfg.d_model, cfg.d_model}, rng, s);
        b.wv = Tensor::randn({cfg.d_model, cfg.d_model}, rng, s);
        b.wo = Tensor::randn({cfg.d_model, cfg.d_model}, rng, s_res);
        b.ln2_g = Tensor::full({cfg.d_model}, 1.0f);
        b.ln2_b = Tensor::zeros({cfg.d_model});
        b.w1 = Tensor::randn({cfg.d_model, cfg.d_ff}, rng, s);
        b.b1 = Tensor::zeros({cfg.d_ff});
        b.w2 = Tensor::randn({cfg.d_ff, cfg.d_model}, rng, s_res);
        b.b2 = Tensor::zeros({cfg.d_model});
    }
    m.lnf_g = Tensor::full({cfg.d_model}, 1.0f);
    m.lnf_b = Tensor::zeros({cfg.d_model});
    m.head = Tensor::randn({cfg.d_model, cfg.vocab}, rng, s);
    return m;
}

FusionModel lm_from_named(const LmConfig &cfg, const TensorMap &named) {
    FusionModel m = lm_init(cfg, 0);
    require(named.size() == m.named().size(), "lm checkpoint: tensor count mismatch");
    auto assign = [&](const std::string &name, Tensor &d) {
        auto it = named.find(name);
        require(it != named.end(), "lm checkpoint missing " + name);
        require(it->second.same_shape(d), "lm checkpoint shape mismatch for " + name);
        d = it->second;
    };
    assign("embed", m.embed);
    assign("pos", m.pos);
    for (size_t l = 0; l < m.blocks.size(); ++l) {
        LmBlock &b = m.blocks[l];
        std::string p = "block." + std::to_string(l) + ".";
        assign(p + "ln1_g", b.ln1_g);
        assign(p + "ln1_b", b.ln1_b);
        assign(p + "wq", b.wq);
        assign(p + "wk", b.wk);
        assign(p + "wv", b.wv);
        assign(p + "wo", b.wo);
        assign(p + "ln2_g", b.ln2_g);
        assign(p + "ln2_b", b.ln2_b);
        assign(p + "w1", b.w1);
        assign(p + "b1", b.b1);
        assign(p + "w2", b.w2);
        assign(p + "b2", b.b2);
    }
    assign("lnf_g", m.lnf_g);
    assign("lnf_b", m.lnf_b);
    assign("head", m.head);
    return m;
}

static LmGraphWeights weights_on_graph(ad::Graph &g, const FusionModel &m, bool trainable) {
    LmGraphWeights w;
    auto put = [&](const Tensor &t) {
        Tensor c = t;
        c.requires_grad = trainable;
        ad::Var v = g.leaf(std::move(c));
        w.all.push_back(v);
        return v;
    };
    w.embed = put(m.embed);
    w.pos = put(m.pos);
    for (const LmBlock &b : m.blocks) {
        LmGraphWeights::Block gb;
        gb.ln1_g = put(b.ln1_g);
        gb.ln1_b = put(b.ln1_b);
        gb.wq = put(b.wq);
        gb.wk = put(b.wk);
        gb.wv = put(b.wv);
        gb.wo = put(b.wo);
        gb.ln2_g = put(b.ln2_g);
        gb.ln2_b = put(b.ln2_b);
        gb.w1 = put(b.w1);
        gb.b1 = put(b.b1);
        gb.w2 = put(b.w2);
        gb.b2 = put(b.b2);
        w.blocks.push_back(gb);
    }
    w.lnf_g = put(m.lnf_g);
    w.lnf_b = put(m.lnf_b);
    w.head = put(m.head);
    return w;
}

LmGraphWeights lm_weights_on_graph(ad::Graph &g, FusionModel &m, bool trainable) {
    return weights_on_graph(g, m, trainable);
}

LmGraphWeights lm_constants_on_graph(ad::Graph &g, const FusionModel &m) {
    return weights_on_graph(g, m, false);
}

static Tensor causal_mask(int t) {
    Tensor mask({t, t});
    for (int i = 0; i < t; ++i) {
        for (int j = i + 1; j < t; ++j) mask.at(i, j) = -1e9f;
    }
    return mask;
}

ad::Var lm_forward_graph(ad::Graph &g, const LmConfig &cfg, const LmGraphWeights &w, ad::Var x) {
    const Tensor &tx = g.value(x);
    require(tx.rank() == 2 && tx.shape[1] == cfg.d_model, "lm_forward: want (T, d_model)");
    int t = tx.shape[0];
    require(t >= 1 && t <= cfg.context, "lm_forward: sequence length overflows context");
    int dh = cfg.head_dim();
    float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    ad::Var h = g.add(x, g.slice_rows(w.pos, 0, t));
    ad::Var mask = g.constant(causal_mask(t));
    for (const LmGraphWeights::Block &b : w.blocks) {
        ad::Var a_in = g.layer_norm(h, b.ln1_g, b.ln1_b);
        ad::Var q = g.matmul(a_in, b.wq);
        ad::Var k = g.matmul(a_in, b.wk);
        ad::Var v = g.matmul(a_in, b.wv);
        std::vector<ad::Var> heads;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            ad::Var qh = g.slice_cols(q, hd * dh, (hd + 1) * dh);
            ad::Var kh = g.slice_cols(k, hd * dh, (hd + 1) * dh);
            ad::Var vh = g.slice_cols(v, hd * dh, (hd + 1) * dh);
            ad::Var scores = g.add(g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh), mask);
            ad::Var probs = g.softmax(scores, 1.0f);
            heads.push_back(g.matmul(probs, vh));
        }
        ad::Var ctx = g.concat_cols(heads);
        h = g.add(h, g.matmul(ctx, b.wo));
        ad::Var m_in = g.layer_norm(h, b.ln2_g, b.ln2_b);
        ad::Var ff = g.relu(g.add_bias(g.matmul(m_in, b.w1), b.b1));
        h = g.add(h, g.add_bias(g.matmul(ff, b.w2), b.b2));
    }
    ad::Var hf = g.layer_norm(h, w.lnf_g, w.lnf_b);
    return g.matmul(hf, w.head);
}

static void check_tokens(const LmConfig &cfg, const std::vector<int> &tokens) {
    require(!tokens.empty(), "lm: empty token sequence");
    require(static_cast<int>(tokens.size()) <= cfg.context,
            "lm: sequence length " + std::to_string(tokens.size()) + " overflows context " +
                std::to_string(cfg.context));
    for (int id : tokens) {
        require(id >= 0 && id < cfg.vocab, "lm: token id " + std::to_string(id) + " out of range");
    }
}

static void ablate_rows(Tensor &h, const Tensor &dir) {
    int t = h.shape[0], d = h.shape[1];
    for (int i = 0; i < t; ++i) {
        float *row = &h.data[static_cast<size_t>(i) * d];
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(row[j]) * dir.data[j];
        float f = static_cast<float>(dot);
        for (int j = 0; j < d; ++j) row[j] -= f * dir.data[j];
    }
}

// Mirrors lm_forward_graph op for op so that logits match the graph path
// bitwise. Any change here must be made there as well.
Tensor lm_logits_hooked(const FusionModel &m, const std::vector<int> &tokens,
                        const ForwardHooks &hooks) {
    const LmConfig &cfg = m.cfg;
    check_tokens(cfg, tokens);
    if (hooks.ablate_direction) {
        require(hooks.ablate_direction->rank() == 1 &&
                    hooks.ablate_direction->shape[0] == cfg.d_model,
                "ablate direction must be (d_model)");
    }
    int t = static_cast<int>(tokens.size());
    int d = cfg.d_model, dh = cfg.head_dim();
    float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor h({t, d});
    for (int i = 0; i < t; ++i) {
        std::memcpy(&h.data[static_cast<size_t>(i) * d],
                    &m.embed.data[static_cast<size_t>(tokens[i]) * d], sizeof(float) * d);
    }
    for (int64_t i = 0; i < h.numel(); ++i) h.data[i] = h.data[i] + m.pos.data[i];
    if (hooks.ablate_direction) ablate_rows(h, *hooks.ablate_direction);
    if (hooks.block_out) hooks.block_out->clear();

    Tensor mask = causal_mask(t);
    Tensor a_in({t, d}), q({t, d}), k({t, d}), v({t, d}), ctx({t, d}), attn({t, d});
    Tensor scores({t, t});
    Tensor ff1({t, cfg.d_ff}), ff2({t, d});
    for (const LmBlock &b : m.blocks) {
        a_in.data = h.data;
        for (int i = 0; i < t; ++i) {
            layer_norm_row(&a_in.data[static_cast<size_t>(i) * d], b.ln1_g.data.data(),
                           b.ln1_b.data.data(), d);
        }
        std::fill(q.data.begin(), q.data.end(), 0.0f);
        std::fill(k.data.begin(), k.data.end(), 0.0f);
        std::fill(v.data.begin(), v.data.end(), 0.0f);
        matmul_acc(a_in.data.data(), b.wq.data.data(), q.data.data(), t, d, d);
        matmul_acc(a_in.data.data(), b.wk.data.data(), k.data.data(), t, d, d);
        matmul_acc(a_in.data.data(), b.wv.data.data(), v.data.data(), t, d, d);
        for (int hd = 0; hd < cfg.heads; ++hd) {
            int off = hd * dh;
            for (int i = 0; i < t; ++i) {
                const float *qrow = &q.data[static_cast<size_t>(i) * d + off];
                float *srow = &scores.data[static_cast<size_t>(i) * t];
                for (int j = 0; j < t; ++j) {
                    const float *krow = &k.data[static_cast<size_t>(j) * d + off];
                    float acc = 0.0f;
                    for (int p = 0; p < dh; ++p) acc += qrow[p] * krow[p];
                    srow[j] = acc;
                }
                for (int j = 0; j < t; ++j) srow[j] = srow[j] * inv_sqrt_dh;
                for (int j = 0; j < t; ++j) srow[j] = srow[j] + mask.at(i, j);
                softmax_row(srow, srow, t, 1.0f);
                float *crow = &ctx.data[static_cast<size_t>(i) * d + off];
                for (int p = 0; p < dh; ++p) crow[p] = 0.0f;
                for (int j = 0; j < t; ++j) {
                    float av = srow[j];
                    if (av == 0.0f) continue;
                    const float *vrow = &v.data[static_cast<size_t>(j) * d + off];
                    for (int p = 0; p < dh; ++p) crow[p] += av * vrow[p];
                }
            }
        }
        std::fill(attn.data.begin(), attn.data.end(), 0.0f);
        matmul_acc(ctx.data.data(), b.wo.data.data(), attn.data.data(), t, d, d);
        for (int64_t i = 0; i < h.numel(); ++i) h.data[i] = h.data[i] + attn.data[i];
        a_in.data = h.data;
        for (int i = 0; i < t; ++i) {
            layer_norm_row(&a_in.data[static_cast<size_t>(i) * d], b.ln2_g.data.data(),
                           b.ln2_b.data.data(), d);
        }
        std::fill(ff1.data.begin(), ff1.data.end(), 0.0f);
        matmul_acc(a_in.data.data(), b.w1.data.data(), ff1.data.data(), t, d, cfg.d_ff);
        for (int i = 0; i < t; ++i) {
            float *row = &ff1.data[static_cast<size_t>(i) * cfg.d_ff];
            for (int j = 0; j < cfg.d_ff; ++j) {
                float x = row[j] + b.b1.data[j];
                row[j] = x > 0.0f ? x : 0.0f;
            }
        }
        std::fill(ff2.data.begin(), ff2.data.end(), 0.0f);
        matmul_acc(ff1.data.data(), b.w2.data.data(), ff2.data.data(), t, cfg.d_ff, d);
        for (int i = 0; i < t; ++i) {
            const float *src = &ff2.data[static_cast<size_t>(i) * d];
            float *dst = &h.data[static_cast<size_t>(i) * d];
            for (int j = 0; j < d; ++j) dst[j] = dst[j] + (src[j] + b.b2.data[j]);
        }
        if (hooks.ablate_direction) ablate_rows(h, *hooks.ablate_direction);
        if (hooks.block_out) {
            Tensor last({d});
            std::memcpy(last.data.data(), &h.data[static_cast<size_t>(t - 1) * d],
                        sizeof(float) * d);
            hooks.block_out->push_back(std::move(last));
        }
    }
    a_in.data = h.data;
    for (int i = 0; i < t; ++i) {
        layer_norm_row(&a_in.data[static_cast<size_t>(i) * d], m.lnf_g.data.data(),
                       m.lnf_b.data.data(), d);
    }
    Tensor logits({t, cfg.vocab});
    matmul_acc(a_in.data.data(), m.head.data.data(), logits.data.data(), t, d, cfg.vocab);
    logits.check_finite("lm logits");
    return logits;
}

Tensor lm_logits(const FusionModel &m, const std::vector<int> &tokens) {
    return lm_logits_hooked(m, tokens, ForwardHooks{});
}

double prefix_logprob(const FusionModel &m, const std::vector<int> &prompt,
                      const std::vector<int> &prefix) {
    require(!prompt.empty(), "prefix_logprob: empty prompt");
    require(!prefix.empty(), "prefix_logprob: empty prefix");
    std::vector<int> full = prompt;
    full.insert(full.end(), prefix.begin(), prefix.end());
    Tensor logits = lm_logits(m, full);
    int v = m.cfg.vocab;
    double lp = 0.0;
    for (size_t i = 0; i < prefix.size(); ++i) {
        size_t row = prompt.size() + i - 1;
        const float *lr = &logits.data[row * static_cast<size_t>(v)];
        lp += static_cast<double>(lr[prefix[i]]) - log_sum_exp_row(lr, v);
    }
    return lp;
}

std::vector<int> sample_hooked(const FusionModel &m, const std::vector<int> &prompt,
                               float temperature, uint64_t seed, int max_len,
                               const ForwardHooks &hooks) {
    require(temperature >= 0.0f, "sample: temperature must be >= 0");
    require(max_len >= 1, "sample: max_len must be >= 1");
    std::vector<int> cur = prompt;
    std::vector<int> out;
    auto rng = make_rng(seed, "lm-sample");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<float> probs(static_cast<size_t>(m.cfg.vocab));
    for (int step = 0; step < max_len; ++step) {
        if (static_cast<int>(cur.size()) >= m.cfg.context) break;
        Tensor logits = lm_logits_hooked(m, cur, hooks);
        const float *row = &logits.data[(logits.shape[0] - 1) * static_cast<size_t>(m.cfg.vocab)];
        int pick = 0;
        if (temperature == 0.0f) {
            for (int j = 1; j < m.cfg.vocab; ++j) {
                if (row[j] > row[pick]) pick = j;
            }
        } else {
            softmax_row(row, probs.data(), m.cfg.vocab, 1.0f / temperature);
            double r = unit(rng), acc = 0.0;
            pick = m.cfg.vocab - 1;
            for (int j = 0; j < m.cfg.vocab; ++j) {
                acc += probs[static_cast<size_t>(j)];
                if (r < acc) {
                    pick = j;
                    break;
                }
            }
        }
        out.push_back(pick);
        cur.push_back(pick);
        if (pick == tok::eos) break;
    }
    return out;
}

std::vector<int> sample(const FusionModel &m, const std::vector<int> &prompt, float temperature,
                        uint64_t seed, int max_len) {
    return sample_hooked(m, prompt, temperature, seed, max_len, ForwardHooks{});
}

double perplexity_per_token(const FusionModel &m, const std::vector<int> &tokens) {
    require(tokens.size() >= 2, "perplexity: need at least 2 tokens");
    Tensor logits = lm_logits(m, tokens);
    int v = m.cfg.vocab;
    double lp = 0.0;
    for (size_t i = 1; i < tokens.size(); ++i) {
        const float *row = &logits.data[(i - 1) * static_cast<size_t>(v)];
        lp += static_cast<double>(row[tokens[i]]) - log_sum_exp_row(row, v);
    }
    return std::exp(-lp / static_cast<double>(tokens.size() - 1));
}

Tensor activations(const FusionModel &m, const std::vector<int> &tokens, int layer) {
    require(layer >= 0 && layer < m.cfg.layers, "activations: bad layer index");
    std::vector<Tensor> captured;
    ForwardHooks hooks;
    hooks.block_out = &captured;
    lm_logits_hooked(m, tokens, hooks);
    return captured[static_cast<size_t>(layer)];
}

std::vector<int> image_tokens_for(const VqVae &vq, int image_class, uint64_t image_seed) {
    Tensor img = synth_image(image_class, image_seed, SynthConfig{});
    std::vector<int> codes = vq_quantize(vq_encode(vq, img), vq.codebook);
    std::vector<int> out;
    out.reserve(codes.size());
    for (int c : codes) out.push_back(image_token(c));
    return out;
}

std::vector<int> materialize_input(const LmExample &e, const VqVae &vq) {
    if (e.image_pos < 0) return e.input;
    PromptSpec p;
    p.text = e.input;
    p.image_pos = e.image_pos;
    return prompt_with_image(p, image_tokens_for(vq, e.image_class, e.image_seed));
}

namespace {

struct TrainSeq {
    std::vector<int> full;
    int resp_start;
};

std::vector<TrainSeq> materialize(const std::vector<LmExample> &examples, const VqVae &vq,
                                  const LmConfig &cfg) {
    std::vector<TrainSeq> out;
    out.reserve(examples.size());
    for (const LmExample &e : examples) {
        TrainSeq s;
        s.full = materialize_input(e, vq);
        s.resp_start = static_cast<int>(s.full.size());
        require(!e.target.empty(), "train_lm: example with empty target");
        s.full.insert(s.full.end(), e.target.begin(), e.target.end());
        check_tokens(cfg, s.full);
        out.push_back(std::move(s));
    }
    return out;
}

double run_phase(FusionModel &m, const std::vector<TrainSeq> &seqs, int epochs, float lr,
                 uint64_t seed, const char *tag, std::vector<double> *losses) {
    std::vector<Tensor *> params = m.params();
    Adam opt(params, lr);
    std::vector<Tensor> accum;
    for (Tensor *p : params) accum.push_back(Tensor::zeros(p->shape));
    std::vector<size_t> order(seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_rng = make_rng(seed, tag);
    double last = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            size_t batch = std::min<size_t>(m.cfg.batch, order.size() - done);
            for (Tensor &a : accum) std::fill(a.data.begin(), a.data.end(), 0.0f);
            float w = 1.0f / static_cast<float>(batch);
            for (size_t bi = 0; bi < batch; ++bi) {
                const TrainSeq &s = seqs[order[done + bi]];
                ad::Graph g;
                LmGraphWeights gw = lm_weights_on_graph(g, m, true);
                ad::Var x = g.embed_rows(gw.embed, s.full);
                ad::Var logits = lm_forward_graph(g, m.cfg, gw, x);
                int n = static_cast<int>(s.full.size());
                ad::Var resp = g.slice_rows(logits, s.resp_start - 1, n - 1);
                std::vector<int> targets(s.full.begin() + s.resp_start, s.full.end());
                ad::Var loss = g.cross_entropy_mean(resp, targets);
                g.backward(loss);
                epoch_loss += static_cast<double>(g.value(loss).data[0]);
                for (size_t pi = 0; pi < params.size(); ++pi) {
                    Tensor pg = g.grad(gw.all[pi]);
                    float *a = accum[pi].data.data();
                    const float *src = pg.data.data();
                    for (int64_t j = 0; j < pg.numel(); ++j) a[j] += w * src[j];
                }
            }
            opt.step(accum);
            done += batch;
        }
        last = epoch_loss / static_cast<double>(order.size());
        if (losses) losses->push_back(last);
    }
    return last;
}

bool begins_with(const std::vector<int> &gen, const std::vector<int> &prefix) {
    if (gen.size() < prefix.size()) return false;
    return std::equal(prefix.begin(), prefix.end(), gen.begin());
}

}  // namespace

FusionModel train_lm(const Corpus &corpus, const VqVae &vq, const LmConfig &cfg, uint64_t seed,
                     TrainReport *report) {
    require(!corpus.pretrain.empty() && !corpus.safety.empty(), "train_lm: empty corpus");
    require(!corpus.heldout_harmful.empty() && !corpus.benign.empty(),
            "train_lm: corpus lacks evaluation prompts");
    FusionModel m = lm_init(cfg, derive_seed(seed, "lm-weights"));
    std::vector<TrainSeq> pre = materialize(corpus.pretrain, vq, cfg);
    std::vector<TrainSeq> safe = materialize(corpus.safety, vq, cfg);

    TrainReport local;
    TrainReport &rep = report ? *report : local;
    run_phase(m, pre, cfg.pretrain_epochs, cfg.pretrain_lr, derive_seed(seed, "lm-phase1"),
              "lm-epochs-1", &rep.pretrain_loss);
    run_phase(m, safe, cfg.safety_epochs, cfg.safety_lr, derive_seed(seed, "lm-phase2"),
              "lm-epochs-2", &rep.safety_loss);

    int refused = 0;
    for (const PromptSpec &p : corpus.heldout_harmful) {
        std::vector<int> gen = sample(m, p.text, 0.0f, seed, cfg.max_gen);
        if (begins_with(gen, p.refusal_prefix)) ++refused;
    }
    rep.heldout_refusal_rate =
        static_cast<double>(refused) / static_cast<double>(corpus.heldout_harmful.size());

    int complied = 0, checked = 0;
    for (size_t i = 0; i < corpus.benign.size(); i += 4) {
        const PromptSpec &p = corpus.benign[i];
        std::vector<int> gen = sample(m, p.text, 0.0f, seed, cfg.max_gen);
        if (std::find(gen.begin(), gen.end(), p.payload) != gen.end()) ++complied;
        ++checked;
    }
    rep.benign_payload_rate = static_cast<double>(complied) / static_cast<double>(checked);

    if (rep.heldout_refusal_rate < cfg.refusal_gate || rep.benign_payload_rate < cfg.benign_gate) {
        fail("train_lm: safety gates not reached (refusal " +
             std::to_string(rep.heldout_refusal_rate) + " vs gate " +
             std::to_string(cfg.refusal_gate) + ", benign " +
             std::to_string(rep.benign_payload_rate) + " vs gate " +
             std::to_string(cfg.benign_gate) + ")");
    }
    return m;
}

}  // namespace fb
