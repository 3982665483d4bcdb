#include "fb/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "fb/defense.hpp"
#include "fb/nn.hpp"
#include "fb/rng.hpp"
#include "fb/threading.hpp"
#include "fb/vocab.hpp"

namespace fb {

const char *target_mode_name(TargetMode mode) {
    switch (mode) {
        case TargetMode::sure: return "sure";
        case TargetMode::sure_context: return "sure-context";
        case TargetMode::sure_context_minus_refusal: return "sure-context-minus-refusal";
    }
    fail("target_mode_name: bad mode");
}

TargetMode target_mode_from_name(const std::string &name) {
    if (name == "sure") return TargetMode::sure;
    if (name == "sure-context") return TargetMode::sure_context;
    if (name == "sure-context-minus-refusal") return TargetMode::sure_context_minus_refusal;
    fail("unknown target mode: " + name);
}

void validate(const LossConfig &cfg) {
    require(cfg.w_refusal >= 0.0f, "loss config: negative refusal weight");
    if (cfg.mode != TargetMode::sure_context_minus_refusal) {
        require(cfg.w_refusal == 0.0f,
                "loss config: refusal weight only applies to the minus-refusal mode");
    }
}

const std::vector<int> &target_prefix(const PromptSpec &p, TargetMode mode) {
    const std::vector<int> &t =
        mode == TargetMode::sure ? p.sure_prefix : p.sure_context_prefix;
    require(!t.empty(), "prompt lacks a target prefix");
    return t;
}

void validate(const OptConfig &cfg) {
    require(cfg.steps >= 0, "opt config: negative steps");
    require(cfg.halve_period > 0, "opt config: halving period must be positive");
    require(cfg.alpha0 >= 0.0f && cfg.alpha_floor >= 0.0f, "opt config: negative step size");
}

float attack_alpha(const OptConfig &cfg, int step) {
    require(step >= 0, "attack_alpha: negative step");
    float a = cfg.alpha0 * std::exp2f(-static_cast<float>(step / cfg.halve_period));
    return std::max(cfg.alpha_floor, a);
}

ShortcutPath embed_path(const EmbeddingShortcut &s) {
    ShortcutPath p;
    p.embed = &s;
    return p;
}

ShortcutPath onehot_path(const OneHotShortcut &s, float tau) {
    ShortcutPath p;
    p.onehot = &s;
    p.tau = tau;
    return p;
}

void validate(const ShortcutPath &path) {
    require((path.embed != nullptr) != (path.onehot != nullptr),
            "shortcut path: exactly one flavor must be set");
    if (path.onehot) require(path.tau > 0.0f, "shortcut path: tau must be positive");
}

namespace {

// Embedding rows standing in for the image block: either the embedding-space
// net's output directly, or 1-hot probabilities mixed over the image rows of
// the LM embedding table.
ad::Var image_cells_graph(ad::Graph &g, const VqVae &vq, const ShortcutPath &path,
                          const LmGraphWeights &w, ad::Var image) {
    ad::Var latents = vq_encode_graph(g, vq, image);
    if (path.embed) return embed_shortcut_graph(g, *path.embed, latents);
    ad::Var probs = onehot_probs_graph(g, *path.onehot, latents, path.tau);
    ad::Var img_rows = g.slice_rows(w.embed, k_text_vocab, k_vocab);
    return g.soft_embed(probs, img_rows);
}

// Sum of log p(prefix | before, image cells, after) read off a full forward:
// the rows that predict the prefix are the last |prefix| logit rows shifted
// one left.
ad::Var prefix_logprob_graph(ad::Graph &g, const FusionModel &m, const LmGraphWeights &w,
                             const std::vector<int> &before, ad::Var cells,
                             const std::vector<int> &after, const std::vector<int> &prefix) {
    std::vector<int> tail = after;
    tail.insert(tail.end(), prefix.begin(), prefix.end());
    ad::Var x = g.concat_rows({g.embed_rows(w.embed, before), cells, g.embed_rows(w.embed, tail)});
    int n = g.value(x).shape[0];
    int k = static_cast<int>(prefix.size());
    require(n <= m.cfg.context, "attack prompt exceeds the model context");
    ad::Var logits = lm_forward_graph(g, m.cfg, w, x);
    return g.logprob_sum(g.slice_rows(logits, n - k - 1, n - 1), prefix);
}

void split_at_image(const PromptSpec &p, std::vector<int> *before, std::vector<int> *after) {
    require(p.image_pos >= 0 && p.image_pos <= static_cast<int>(p.text.size()),
            "prompt has no image slot");
    before->assign(p.text.begin(), p.text.begin() + p.image_pos);
    before->push_back(tok::boi);
    after->assign(1, tok::eoi);
    after->insert(after->end(), p.text.begin() + p.image_pos, p.text.end());
}

// Builds the whole objective on g. Per-prompt target logprob vars are
// returned through *terms when requested.
ad::Var attack_loss_on_graph(ad::Graph &g, const FusionModel &m, const VqVae &vq,
                             const ShortcutPath &path, ad::Var image,
                             const std::vector<PromptSpec> &prompts, const LossConfig &cfg,
                             std::vector<ad::Var> *terms) {
    LmGraphWeights w = lm_constants_on_graph(g, m);
    ad::Var cells = image_cells_graph(g, vq, path, w, image);
    ad::Var loss;
    for (const PromptSpec &p : prompts) {
        std::vector<int> before, after;
        split_at_image(p, &before, &after);
        ad::Var lp = prefix_logprob_graph(g, m, w, before, cells, after,
                                          target_prefix(p, cfg.mode));
        if (terms) terms->push_back(lp);
        ad::Var term = g.scale(lp, -1.0f);
        if (cfg.w_refusal > 0.0f) {
            require(!p.refusal_prefix.empty(), "prompt lacks a refusal prefix");
            ad::Var rp = prefix_logprob_graph(g, m, w, before, cells, after, p.refusal_prefix);
            term = g.add(term, g.scale(rp, cfg.w_refusal));
        }
        loss = loss.valid() ? g.add(loss, term) : term;
    }
    return loss;
}

double loss_graph_run(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                      const Tensor &image, const std::vector<PromptSpec> &prompts,
                      const LossConfig &cfg, Tensor *grad, std::vector<double> *logprobs) {
    validate(cfg);
    validate(path);
    require(!prompts.empty(), "attack loss needs at least one prompt");
    ad::Graph g;
    Tensor img = image;
    img.requires_grad = grad != nullptr;
    ad::Var iv = g.leaf(std::move(img));
    std::vector<ad::Var> terms;
    ad::Var loss = attack_loss_on_graph(g, m, vq, path, iv, prompts, cfg,
                                        logprobs ? &terms : nullptr);
    if (grad) {
        g.backward(loss);
        *grad = g.grad(iv);
    }
    if (logprobs) {
        logprobs->clear();
        for (ad::Var t : terms) logprobs->push_back(g.value(t).data[0]);
    }
    return g.value(loss).data[0];
}

}  // namespace

double attack_loss(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                   const Tensor &image, const std::vector<PromptSpec> &prompts,
                   const LossConfig &cfg) {
    return loss_graph_run(m, vq, path, image, prompts, cfg, nullptr, nullptr);
}

double attack_loss_grad(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                        const Tensor &image, const std::vector<PromptSpec> &prompts,
                        const LossConfig &cfg, Tensor *grad) {
    require(grad != nullptr, "attack_loss_grad: null grad output");
    return loss_graph_run(m, vq, path, image, prompts, cfg, grad, nullptr);
}

namespace {

std::string trace_tail(const std::vector<double> &trace) {
    std::string s;
    size_t from = trace.size() > 5 ? trace.size() - 5 : 0;
    for (size_t i = from; i < trace.size(); ++i) {
        if (!s.empty()) s += ", ";
        s += std::to_string(trace[i]);
    }
    return s;
}

}  // namespace

AttackResult sign_descent(const LossGradFn &loss_and_grad, const OptConfig &opt_cfg,
                          const Tensor &init_image) {
    validate(opt_cfg);
    for (float v : init_image.data) {
        require(v >= 0.0f && v <= 1.0f, "sign descent: init image outside [0,1]");
    }

    AttackResult r;
    r.opt = opt_cfg;
    r.trace.reserve(opt_cfg.steps + 1);

    Tensor px = init_image;
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t <= opt_cfg.steps; ++t) {
        Tensor grad;
        double loss = loss_and_grad(px, &grad);
        if (!std::isfinite(loss)) {
            fail("sign descent: non-finite loss at step " + std::to_string(t) +
                 " (trace tail: " + trace_tail(r.trace) + ")");
        }
        r.trace.push_back(loss);
        if (loss < best) {
            best = loss;
            r.image = px;
            r.best_step = t;
        }
        if (t == opt_cfg.steps) break;
        require(grad.same_shape(px), "sign descent: gradient shape mismatch");
        float a = attack_alpha(opt_cfg, t);
        for (size_t i = 0; i < px.data.size(); ++i) {
            float gv = grad.data[i];
            float s = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
            px.data[i] = clamp01(px.data[i] - a * s);
        }
    }
    r.best_loss = best;
    return r;
}

AttackResult image_attack(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                          const std::vector<PromptSpec> &prompts, const LossConfig &loss_cfg,
                          const OptConfig &opt_cfg, const Tensor &init_image, uint64_t seed) {
    validate(loss_cfg);
    validate(path);
    require(!prompts.empty(), "image_attack: no prompts");
    AttackResult r = sign_descent(
        [&](const Tensor &px, Tensor *grad) {
            return loss_graph_run(m, vq, path, px, prompts, loss_cfg, grad, nullptr);
        },
        opt_cfg, init_image);
    r.loss = loss_cfg;
    r.seed = seed;
    loss_graph_run(m, vq, path, r.image, prompts, loss_cfg, nullptr, &r.prompt_logprobs);
    return r;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_float(float v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string join_list(const std::vector<double> &v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += fmt_double(v[i]);
    }
    return s.empty() ? "-" : s;
}

std::string join_list(const std::vector<int> &v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s.empty() ? "-" : s;
}

std::vector<double> split_doubles(const std::string &s) {
    std::vector<double> v;
    if (s == "-") return v;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) v.push_back(std::stod(part));
    return v;
}

std::vector<int> split_ints(const std::string &s) {
    std::vector<int> v;
    if (s == "-") return v;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) v.push_back(std::stoi(part));
    return v;
}

void write_text_atomic(const std::string &path, const std::string &content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), "cannot open " + tmp);
        out << content;
        require(out.good(), "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::map<std::string, std::string> read_kv(const std::string &path) {
    std::ifstream in(path);
    require(in.good(), "cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string &s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t\r");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);
        kv[key] = val;
    }
    return kv;
}

const std::string &kv_get(const std::map<std::string, std::string> &kv, const std::string &key) {
    auto it = kv.find(key);
    require(it != kv.end(), "metadata missing field " + key);
    return it->second;
}

std::vector<double> read_trace_csv(const std::string &path) {
    std::ifstream in(path);
    require(in.good(), "cannot open " + path);
    std::vector<double> trace;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        std::getline(row, cell, ',');
        trace.push_back(std::stod(cell));
    }
    return trace;
}

}  // namespace

void attack_save(const std::string &dir, const AttackResult &r) {
    std::filesystem::create_directories(dir);
    checkpoint_save(dir + "/image.ckpt", {{"image", r.image}});

    std::string meta;
    meta += "kind = image\n";
    meta += "mode = " + std::string(target_mode_name(r.loss.mode)) + "\n";
    meta += "w_refusal = " + fmt_float(r.loss.w_refusal) + "\n";
    meta += "steps = " + std::to_string(r.opt.steps) + "\n";
    meta += "alpha0 = " + fmt_float(r.opt.alpha0) + "\n";
    meta += "halve_period = " + std::to_string(r.opt.halve_period) + "\n";
    meta += "alpha_floor = " + fmt_float(r.opt.alpha_floor) + "\n";
    meta += "seed = " + std::to_string(r.seed) + "\n";
    meta += "best_loss = " + fmt_double(r.best_loss) + "\n";
    meta += "best_step = " + std::to_string(r.best_step) + "\n";
    meta += "prompt_logprobs = " + join_list(r.prompt_logprobs) + "\n";
    write_text_atomic(dir + "/meta.txt", meta);

    std::string csv = "step,loss,alpha\n";
    for (size_t t = 0; t < r.trace.size(); ++t) {
        csv += std::to_string(t) + "," + fmt_double(r.trace[t]) + "," +
               fmt_float(attack_alpha(r.opt, static_cast<int>(t))) + "\n";
    }
    write_text_atomic(dir + "/trace.csv", csv);
}

AttackResult attack_load(const std::string &dir) {
    auto kv = read_kv(dir + "/meta.txt");
    require(kv_get(kv, "kind") == "image", "not an image attack artifact: " + dir);
    AttackResult r;
    r.loss.mode = target_mode_from_name(kv_get(kv, "mode"));
    r.loss.w_refusal = std::stof(kv_get(kv, "w_refusal"));
    r.opt.steps = std::stoi(kv_get(kv, "steps"));
    r.opt.alpha0 = std::stof(kv_get(kv, "alpha0"));
    r.opt.halve_period = std::stoi(kv_get(kv, "halve_period"));
    r.opt.alpha_floor = std::stof(kv_get(kv, "alpha_floor"));
    r.seed = std::stoull(kv_get(kv, "seed"));
    r.best_loss = std::stod(kv_get(kv, "best_loss"));
    r.best_step = std::stoi(kv_get(kv, "best_step"));
    r.prompt_logprobs = split_doubles(kv_get(kv, "prompt_logprobs"));
    TensorMap tensors = checkpoint_load(dir + "/image.ckpt");
    auto it = tensors.find("image");
    require(it != tensors.end(), "image.ckpt lacks the image tensor");
    r.image = it->second;
    r.trace = read_trace_csv(dir + "/trace.csv");
    return r;
}

namespace {

Tensor image_cells_plain(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                         const Tensor &image) {
    Tensor latents = vq_encode(vq, image);
    if (path.embed) return forward_embed(*path.embed, latents);
    Tensor probs = forward_onehot(*path.onehot, latents, path.tau);
    int cells = probs.shape[0], codes = probs.shape[1], d = m.cfg.d_model;
    require(codes == k_image_vocab && m.cfg.vocab == k_vocab,
            "1-hot shortcut needs the full joint vocabulary");
    Tensor out({cells, d});
    matmul_acc(probs.data.data(), m.embed.data.data() + static_cast<size_t>(k_text_vocab) * d,
               out.data.data(), cells, codes, d);
    return out;
}

int pick_from_row(const float *row, int n, float temperature, std::mt19937 &rng) {
    if (temperature <= 0.0f) {
        int pick = 0;
        for (int j = 1; j < n; ++j) {
            if (row[j] > row[pick]) pick = j;
        }
        return pick;
    }
    std::vector<float> probs(n);
    softmax_row(row, probs.data(), n, 1.0f / temperature);
    float u = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    float acc = 0.0f;
    for (int j = 0; j < n; ++j) {
        acc += probs[j];
        if (u < acc) return j;
    }
    return n - 1;
}

}  // namespace

std::vector<int> soft_generate(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                               const Tensor &image, const PromptSpec &p, float temperature,
                               uint64_t seed, int max_len) {
    validate(path);
    require(temperature >= 0.0f, "soft_generate: negative temperature");
    std::vector<int> before, after;
    split_at_image(p, &before, &after);
    Tensor cells = image_cells_plain(m, vq, path, image);

    std::mt19937 rng = make_rng(seed, "soft-sample");
    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
        ad::Graph g;
        std::vector<int> tail = after;
        tail.insert(tail.end(), out.begin(), out.end());
        ad::Var emb = g.constant(m.embed);
        ad::Var x = g.concat_rows(
            {g.embed_rows(emb, before), g.constant(cells), g.embed_rows(emb, tail)});
        int n = g.value(x).shape[0];
        require(n < m.cfg.context, "soft_generate: context exhausted");
        LmGraphWeights w = lm_constants_on_graph(g, m);
        ad::Var logits = lm_forward_graph(g, m.cfg, w, x);
        const Tensor &lv = g.value(logits);
        int next = pick_from_row(&lv.data[static_cast<size_t>(n - 1) * m.cfg.vocab], m.cfg.vocab,
                                 temperature, rng);
        if (next == tok::eos) break;
        out.push_back(next);
    }
    return out;
}

namespace {

EvalOutcome judge_all(const std::vector<PromptSpec> &prompts,
                      const std::function<std::vector<int>(const PromptSpec &, uint64_t)> &gen) {
    require(!prompts.empty(), "eval: no prompts");
    EvalOutcome o;
    for (size_t i = 0; i < prompts.size(); ++i) {
        JudgeVerdict v = judge(gen(prompts[i], static_cast<uint64_t>(i)), prompts[i]);
        o.asr += v.unsafe ? 1.0 : 0.0;
        o.rr += v.refusal ? 1.0 : 0.0;
    }
    o.n = static_cast<int>(prompts.size());
    o.asr /= o.n;
    o.rr /= o.n;
    return o;
}

}  // namespace

EvalOutcome eval_attack(const FusionModel &m, const VqVae &vq, const ShortcutPath *path,
                        const Tensor &image, const std::vector<PromptSpec> &prompts,
                        bool use_shortcut, float temperature, uint64_t seed) {
    if (use_shortcut) {
        require(path != nullptr, "eval_attack: shortcut path required");
        return judge_all(prompts, [&](const PromptSpec &p, uint64_t i) {
            return soft_generate(m, vq, *path, image, p, temperature,
                                 derive_seed(seed, "eval-gen", i), m.cfg.max_gen);
        });
    }
    Tensor latents = vq_encode(vq, image);
    std::vector<int> codes = vq_quantize(latents, vq.codebook);
    std::vector<int> toks(codes.size());
    for (size_t i = 0; i < codes.size(); ++i) toks[i] = image_token(codes[i]);
    return judge_all(prompts, [&](const PromptSpec &p, uint64_t i) {
        return sample(m, prompt_with_image(p, toks), temperature, derive_seed(seed, "eval-gen", i),
                      m.cfg.max_gen);
    });
}

void validate(const GcgConfig &cfg) {
    require(cfg.steps > 0 && cfg.suffix_len > 0 && cfg.candidates_per_token > 0 &&
                cfg.candidate_suffixes > 0,
            "gcg config: all fields must be positive");
}

namespace {

double suffix_loss_plain(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                         const std::vector<int> &suffix, const LossConfig &cfg) {
    double loss = 0.0;
    for (const PromptSpec &p : prompts) {
        std::vector<int> ctx = p.text;
        ctx.insert(ctx.end(), suffix.begin(), suffix.end());
        loss -= prefix_logprob(m, ctx, target_prefix(p, cfg.mode));
        if (cfg.w_refusal > 0.0f) {
            loss += cfg.w_refusal * prefix_logprob(m, ctx, p.refusal_prefix);
        }
    }
    return loss;
}

// Gradient of the objective wrt a one-hot suffix encoding over the text
// alphabet. Exact one-hot rows make soft_embed match embed_rows bitwise, so
// the graph value agrees with the plain loss path.
Tensor suffix_grad(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                   const std::vector<int> &suffix, int alphabet, const LossConfig &cfg) {
    ad::Graph g;
    Tensor onehot({static_cast<int>(suffix.size()), alphabet});
    for (size_t i = 0; i < suffix.size(); ++i) onehot.at(static_cast<int>(i), suffix[i]) = 1.0f;
    onehot.requires_grad = true;
    ad::Var u = g.leaf(std::move(onehot));
    LmGraphWeights w = lm_constants_on_graph(g, m);
    ad::Var sfx = g.soft_embed(u, g.slice_rows(w.embed, 0, alphabet));
    ad::Var loss;
    for (const PromptSpec &p : prompts) {
        const std::vector<int> &tgt = target_prefix(p, cfg.mode);
        ad::Var lp = prefix_logprob_graph(g, m, w, p.text, sfx, {}, tgt);
        ad::Var term = g.scale(lp, -1.0f);
        if (cfg.w_refusal > 0.0f) {
            ad::Var rp = prefix_logprob_graph(g, m, w, p.text, sfx, {}, p.refusal_prefix);
            term = g.add(term, g.scale(rp, cfg.w_refusal));
        }
        loss = loss.valid() ? g.add(loss, term) : term;
    }
    g.backward(loss);
    return g.grad(u);
}

}  // namespace

GcgResult gcg_attack(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                     const GcgConfig &cfg, const LossConfig &loss_cfg, uint64_t seed) {
    validate(cfg);
    validate(loss_cfg);
    require(!prompts.empty(), "gcg_attack: no prompts");
    int alphabet = std::min(m.cfg.vocab, k_text_vocab);
    int cand_per_tok = cfg.candidates_per_token;
    if (cand_per_tok > alphabet) {
        std::fprintf(stderr, "gcg: clipping candidates per token %d to text alphabet %d\n",
                     cand_per_tok, alphabet);
        cand_per_tok = alphabet;
    }

    GcgResult r;
    r.cfg = cfg;
    r.loss = loss_cfg;
    r.seed = seed;
    int init_tok = tok::filler0 < alphabet ? tok::filler0 : 0;
    std::vector<int> suffix(cfg.suffix_len, init_tok);
    double best = suffix_loss_plain(m, prompts, suffix, loss_cfg);
    r.trace.push_back(best);

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor grad = suffix_grad(m, prompts, suffix, alphabet, loss_cfg);

        std::vector<std::vector<int>> top(cfg.suffix_len);
        for (int i = 0; i < cfg.suffix_len; ++i) {
            std::vector<int> order(alphabet);
            std::iota(order.begin(), order.end(), 0);
            const float *row = &grad.data[static_cast<size_t>(i) * alphabet];
            std::stable_sort(order.begin(), order.end(),
                             [row](int a, int b) { return row[a] < row[b]; });
            top[i].assign(order.begin(), order.begin() + cand_per_tok);
        }

        std::vector<std::pair<int, int>> picks;
        int64_t space = static_cast<int64_t>(cfg.suffix_len) * cand_per_tok;
        if (space <= cfg.candidate_suffixes) {
            for (int i = 0; i < cfg.suffix_len; ++i) {
                for (int c : top[i]) {
                    if (c != suffix[i]) picks.emplace_back(i, c);
                }
            }
        } else {
            auto rng = make_rng(seed, "gcg-cand", static_cast<uint64_t>(step));
            std::uniform_int_distribution<int> pos_d(0, cfg.suffix_len - 1);
            std::uniform_int_distribution<int> cand_d(0, cand_per_tok - 1);
            for (int j = 0; j < cfg.candidate_suffixes; ++j) {
                int i = pos_d(rng);
                picks.emplace_back(i, top[i][cand_d(rng)]);
            }
        }

        std::vector<double> losses(picks.size());
        parallel_for(static_cast<int64_t>(picks.size()), [&](int64_t j) {
            std::vector<int> cand = suffix;
            cand[picks[j].first] = picks[j].second;
            losses[j] = suffix_loss_plain(m, prompts, cand, loss_cfg);
        });

        int pick = -1;
        for (size_t j = 0; j < losses.size(); ++j) {
            if (losses[j] < best && (pick < 0 || losses[j] < losses[pick])) {
                pick = static_cast<int>(j);
            }
        }
        if (pick >= 0) {
            suffix[picks[pick].first] = picks[pick].second;
            best = losses[pick];
        }
        r.trace.push_back(best);
    }
    r.suffix = suffix;
    r.best_loss = best;
    return r;
}

void gcg_save(const std::string &dir, const GcgResult &r) {
    std::filesystem::create_directories(dir);
    std::string meta;
    meta += "kind = gcg\n";
    meta += "mode = " + std::string(target_mode_name(r.loss.mode)) + "\n";
    meta += "w_refusal = " + fmt_float(r.loss.w_refusal) + "\n";
    meta += "steps = " + std::to_string(r.cfg.steps) + "\n";
    meta += "suffix_len = " + std::to_string(r.cfg.suffix_len) + "\n";
    meta += "candidates_per_token = " + std::to_string(r.cfg.candidates_per_token) + "\n";
    meta += "candidate_suffixes = " + std::to_string(r.cfg.candidate_suffixes) + "\n";
    meta += "seed = " + std::to_string(r.seed) + "\n";
    meta += "best_loss = " + fmt_double(r.best_loss) + "\n";
    meta += "suffix = " + join_list(r.suffix) + "\n";
    write_text_atomic(dir + "/meta.txt", meta);

    std::string csv = "step,loss\n";
    for (size_t t = 0; t < r.trace.size(); ++t) {
        csv += std::to_string(t) + "," + fmt_double(r.trace[t]) + "\n";
    }
    write_text_atomic(dir + "/trace.csv", csv);
}

GcgResult gcg_load(const std::string &dir) {
    auto kv = read_kv(dir + "/meta.txt");
    require(kv_get(kv, "kind") == "gcg", "not a gcg artifact: " + dir);
    GcgResult r;
    r.loss.mode = target_mode_from_name(kv_get(kv, "mode"));
    r.loss.w_refusal = std::stof(kv_get(kv, "w_refusal"));
    r.cfg.steps = std::stoi(kv_get(kv, "steps"));
    r.cfg.suffix_len = std::stoi(kv_get(kv, "suffix_len"));
    r.cfg.candidates_per_token = std::stoi(kv_get(kv, "candidates_per_token"));
    r.cfg.candidate_suffixes = std::stoi(kv_get(kv, "candidate_suffixes"));
    r.seed = std::stoull(kv_get(kv, "seed"));
    r.best_loss = std::stod(kv_get(kv, "best_loss"));
    r.suffix = split_ints(kv_get(kv, "suffix"));
    r.trace = read_trace_csv(dir + "/trace.csv");
    return r;
}

EvalOutcome eval_suffix(const FusionModel &m, const std::vector<int> &suffix,
                        const std::vector<PromptSpec> &prompts, float temperature, uint64_t seed) {
    return judge_all(prompts, [&](const PromptSpec &p, uint64_t i) {
        std::vector<int> ctx = p.text;
        ctx.insert(ctx.end(), suffix.begin(), suffix.end());
        return sample(m, ctx, temperature, derive_seed(seed, "eval-gen", i), m.cfg.max_gen);
    });
}

Tensor refusal_direction_from_activations(const std::vector<Tensor> &harmful,
                                          const std::vector<Tensor> &benign) {
    require(!harmful.empty() && !benign.empty(), "refusal direction: empty activation set");
    int d = harmful.front().shape[0];
    std::vector<double> diff(d, 0.0);
    for (const Tensor &a : harmful) {
        require(a.rank() == 1 && a.shape[0] == d, "refusal direction: shape mismatch");
        for (int i = 0; i < d; ++i) diff[i] += a.data[i] / harmful.size();
    }
    for (const Tensor &a : benign) {
        require(a.rank() == 1 && a.shape[0] == d, "refusal direction: shape mismatch");
        for (int i = 0; i < d; ++i) diff[i] -= a.data[i] / benign.size();
    }
    double norm = 0.0;
    for (double v : diff) norm += v * v;
    norm = std::sqrt(norm);
    require(norm > 1e-12, "refusal direction: mean activations coincide");
    Tensor dir({d});
    for (int i = 0; i < d; ++i) dir.data[i] = static_cast<float>(diff[i] / norm);
    return dir;
}

Tensor compute_refusal_direction(const FusionModel &m, const std::vector<PromptSpec> &harmful,
                                 const std::vector<PromptSpec> &benign, int layer) {
    auto acts = [&](const std::vector<PromptSpec> &ps) {
        std::vector<Tensor> out;
        out.reserve(ps.size());
        for (const PromptSpec &p : ps) out.push_back(activations(m, p.text, layer));
        return out;
    };
    return refusal_direction_from_activations(acts(harmful), acts(benign));
}

std::vector<int> ablated_generate(const FusionModel &m, const Tensor &direction,
                                  const std::vector<int> &prompt, uint64_t seed, int max_len) {
    double norm = 0.0;
    for (float v : direction.data) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    require(norm == 0.0 || std::abs(norm - 1.0) <= 1e-3,
            "ablated_generate: direction must be unit length or zero");
    ForwardHooks hooks;
    hooks.ablate_direction = &direction;
    return sample_hooked(m, prompt, 0.0f, seed, max_len, hooks);
}

EvalOutcome eval_ablated(const FusionModel &m, const Tensor &direction,
                         const std::vector<PromptSpec> &prompts, uint64_t seed) {
    return judge_all(prompts, [&](const PromptSpec &p, uint64_t i) {
        return ablated_generate(m, direction, p.text, derive_seed(seed, "eval-gen", i),
                                m.cfg.max_gen);
    });
}

EvalOutcome eval_plain(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                       float temperature, uint64_t seed) {
    return judge_all(prompts, [&](const PromptSpec &p, uint64_t i) {
        return sample(m, p.text, temperature, derive_seed(seed, "eval-gen", i), m.cfg.max_gen);
    });
}

std::vector<PromptSpec> transfer_train_slice(const std::vector<PromptSpec> &heldout, int n_train,
                                             const std::vector<PromptSpec> &test) {
    require(n_train >= 1 && n_train <= static_cast<int>(heldout.size()),
            "transfer: n_train outside the held-out pool");
    for (int i = 0; i < n_train; ++i) {
        for (const PromptSpec &t : test) {
            require(heldout[i].text != t.text, "transfer: train and test prompts overlap");
        }
    }
    return {heldout.begin(), heldout.begin() + n_train};
}

}  // namespace fb
