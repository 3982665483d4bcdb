#include "fb/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "fb/defense.hpp"
#include "fb/rng.hpp"
#include "fb/synth.hpp"
#include "fb/vocab.hpp"

namespace fb {

int64_t flop_cost(const CostModel &c) {
    require(c.tokens > 0 && c.fwd_per_step >= 0 && c.bwd_per_step >= 0 && c.bwd_ratio > 0,
            "cost model: nonpositive field");
    require(c.steps >= 0, "cost model: negative steps");
    return c.tokens * c.steps * (c.fwd_per_step + c.bwd_ratio * c.bwd_per_step);
}

CostModel cost_preset(const std::string &name) {
    if (name == "paper-image") return {1024, 100, 1, 1, 3};
    if (name == "paper-gcg") return {20, 100, 512, 1, 3};
    if (name == "toy-image") return {16, 500, 1, 1, 3};
    if (name == "toy-gcg") return {8, 40, 64, 1, 3};
    fail("unknown cost preset: " + name);
}

std::vector<std::string> cost_preset_names() {
    return {"paper-image", "paper-gcg", "toy-image", "toy-gcg"};
}

double percent_1dp(double fraction) {
    return static_cast<double>(std::llround(fraction * 1000.0)) / 10.0;
}

namespace {

std::string fmt(const char *spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_text_atomic(const std::string &path, const std::string &content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), "cannot open " + tmp);
        out << content;
        require(out.good(), "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

const char *k_csv_header = "attack,train_prompts,seed,asr_pct,rr_pct,delta_ppl,flops_per_token,wall_time_s";

}  // namespace

std::string results_csv(const ResultsTable &t) {
    std::string out = k_csv_header;
    out += '\n';
    for (const ResultRow &r : t.rows) {
        require(r.attack.find(',') == std::string::npos, "attack name holds a comma");
        require(r.asr_pct >= 0.0 && r.asr_pct <= 100.0 && r.rr_pct >= 0.0 && r.rr_pct <= 100.0,
                "percentages must lie in [0,100]");
        out += r.attack;
        out += ',' + std::to_string(r.train_prompts);
        out += ',' + std::to_string(r.seed);
        out += ',' + fmt("%.1f", r.asr_pct);
        out += ',' + fmt("%.1f", r.rr_pct);
        out += ',' + fmt("%.3f", r.delta_ppl);
        out += ',' + std::to_string(r.flops_per_token);
        out += ',' + fmt("%.3f", r.wall_time_s);
        out += '\n';
    }
    return out;
}

void results_save(const std::string &path, const ResultsTable &t) {
    write_text_atomic(path, results_csv(t));
}

ResultsTable results_load(const std::string &path) {
    std::ifstream in(path);
    require(in.good(), "cannot open results file " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "empty results file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == k_csv_header, "unexpected results header in " + path);
    ResultsTable t;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        ResultRow r;
        auto next = [&] {
            require(static_cast<bool>(std::getline(row, cell, ',')), "short results row: " + line);
            return cell;
        };
        r.attack = next();
        r.train_prompts = std::stoi(next());
        r.seed = std::stoull(next());
        r.asr_pct = std::stod(next());
        r.rr_pct = std::stod(next());
        r.delta_ppl = std::stod(next());
        r.flops_per_token = std::stoll(next());
        r.wall_time_s = std::stod(next());
        t.rows.push_back(std::move(r));
    }
    return t;
}

namespace {

Tensor arch_tensor(const std::vector<int> &fields) {
    std::vector<float> v(fields.begin(), fields.end());
    return Tensor::from({static_cast<int>(v.size())}, v);
}

std::vector<int> arch_fields(TensorMap &t, const std::string &path, size_t n) {
    auto it = t.find("arch");
    require(it != t.end(), path + ": checkpoint lacks the arch tensor");
    require(it->second.numel() == static_cast<int64_t>(n), path + ": unexpected arch length");
    std::vector<int> fields;
    for (float v : it->second.data) fields.push_back(static_cast<int>(std::lround(v)));
    t.erase(it);
    return fields;
}

}  // namespace

void lm_save(const std::string &path, const FusionModel &m) {
    TensorMap t = m.named();
    t["arch"] = arch_tensor({m.cfg.vocab, m.cfg.d_model, m.cfg.layers, m.cfg.heads, m.cfg.context,
                             m.cfg.d_ff, m.cfg.max_gen});
    checkpoint_save(path, t);
}

FusionModel lm_load(const std::string &path) {
    TensorMap t = checkpoint_load(path);
    std::vector<int> a = arch_fields(t, path, 7);
    LmConfig cfg;
    cfg.vocab = a[0];
    cfg.d_model = a[1];
    cfg.layers = a[2];
    cfg.heads = a[3];
    cfg.context = a[4];
    cfg.d_ff = a[5];
    cfg.max_gen = a[6];
    return lm_from_named(cfg, t);
}

void vq_save(const std::string &path, const VqVae &vq) {
    TensorMap t = vq.named();
    const VqConfig &c = vq.cfg;
    t["arch"] = arch_tensor({c.image_h, c.image_w, c.channels, c.grid, c.d_latent, c.codes,
                             c.enc_hidden, c.dec_hidden});
    checkpoint_save(path, t);
}

VqVae vq_load(const std::string &path) {
    TensorMap t = checkpoint_load(path);
    std::vector<int> a = arch_fields(t, path, 8);
    VqConfig cfg;
    cfg.image_h = a[0];
    cfg.image_w = a[1];
    cfg.channels = a[2];
    cfg.grid = a[3];
    cfg.d_latent = a[4];
    cfg.codes = a[5];
    cfg.enc_hidden = a[6];
    cfg.dec_hidden = a[7];
    return vqvae_from_named(cfg, t);
}

void embed_shortcut_save(const std::string &path, const EmbeddingShortcut &s) {
    checkpoint_save(path, s.named());
}

EmbeddingShortcut embed_shortcut_load(const std::string &path) {
    return embed_shortcut_from_named(checkpoint_load(path));
}

void onehot_shortcut_save(const std::string &path, const OneHotShortcut &s) {
    checkpoint_save(path, s.named());
}

OneHotShortcut onehot_shortcut_load(const std::string &path) {
    return onehot_shortcut_from_named(checkpoint_load(path));
}

namespace {

const std::set<std::string> k_kinds = {"direct",        "transfer", "ablate-temperature",
                                       "ablate-target", "flops",    "cross-model"};
const std::set<std::string> k_attacks = {"none", "embed", "onehot", "gcg", "refusal-dir"};

std::vector<std::string> default_attacks(const std::string &kind) {
    if (kind == "direct") return {"none", "embed", "onehot", "gcg", "refusal-dir"};
    if (kind == "transfer") return {"onehot", "gcg", "refusal-dir"};
    if (kind == "flops") return {};
    return {"onehot"};
}

}  // namespace

Tensor attack_init_image(uint64_t seed, uint64_t salt) {
    auto rng = make_rng(seed, "attack-init-class", salt);
    int cls = std::uniform_int_distribution<int>(0, SynthConfig{}.classes - 1)(rng);
    return synth_image(cls, derive_seed(seed, "attack-init", salt));
}

ExperimentConfig experiment_from_config(const ConfigFile &f) {
    ExperimentConfig e;
    e.kind = f.get("experiment", "kind");
    require(k_kinds.count(e.kind) > 0, "unknown experiment kind: " + e.kind);
    e.seeds = parse_u64_list(f.get("experiment", "seeds"));
    require(!e.seeds.empty(), "experiment needs at least one seed");

    e.corpus_path = f.get_or("data", "corpus", "");
    e.vq_ckpt = f.get_or("models", "vqvae", "");
    e.lm_ckpt = f.get_or("models", "lm", "");
    e.lm_b_ckpt = f.get_or("models", "lm_b", "");
    e.embed_ckpt = f.get_or("models", "embed_shortcut", "");
    e.onehot_ckpt = f.get_or("models", "onehot_shortcut", "");
    e.out_csv = f.get_or("experiment", "out", "");

    std::string attacks = f.get_or("experiment", "attacks", "");
    e.attacks = attacks.empty() ? default_attacks(e.kind) : parse_name_list(attacks);
    for (const std::string &a : e.attacks) {
        require(k_attacks.count(a) > 0, "unknown attack kind: " + a);
    }
    e.eval_with_shortcut = f.get_int_or("experiment", "eval_with_shortcut", 1) != 0;
    e.tau = static_cast<float>(f.get_double_or("experiment", "tau", 6.0));
    if (f.has("experiment", "taus")) e.taus = parse_double_list(f.get("experiment", "taus"));
    if (f.has("experiment", "n_train")) {
        e.n_train = parse_int_list(f.get("experiment", "n_train"));
    }
    e.n_eval = static_cast<int>(f.get_int_or("experiment", "n_eval", 10));
    require(e.n_eval >= 1, "n_eval must be at least 1");
    e.layer = static_cast<int>(f.get_int_or("experiment", "layer", 2));
    e.measure_time = f.get_int_or("experiment", "measure_time", 0) != 0;

    e.loss.mode = target_mode_from_name(f.get_or("attack", "mode", "sure-context"));
    e.loss.w_refusal = static_cast<float>(f.get_double_or("attack", "w_refusal", 0.0));
    validate(e.loss);
    e.opt.steps = static_cast<int>(f.get_int_or("attack", "steps", e.opt.steps));
    e.opt.alpha0 = static_cast<float>(f.get_double_or("attack", "alpha0", e.opt.alpha0));
    e.opt.halve_period =
        static_cast<int>(f.get_int_or("attack", "halve_period", e.opt.halve_period));
    e.opt.alpha_floor =
        static_cast<float>(f.get_double_or("attack", "alpha_floor", e.opt.alpha_floor));
    validate(e.opt);
    e.gcg.steps = static_cast<int>(f.get_int_or("gcg", "steps", e.gcg.steps));
    e.gcg.suffix_len = static_cast<int>(f.get_int_or("gcg", "suffix_len", e.gcg.suffix_len));
    e.gcg.candidates_per_token =
        static_cast<int>(f.get_int_or("gcg", "candidates_per_token", e.gcg.candidates_per_token));
    e.gcg.candidate_suffixes =
        static_cast<int>(f.get_int_or("gcg", "candidate_suffixes", e.gcg.candidate_suffixes));
    validate(e.gcg);
    return e;
}

namespace {

struct Artifacts {
    Corpus corpus;
    VqVae vq;
    FusionModel lm;
    FusionModel lm_b;
    bool has_lm_b = false;
    EmbeddingShortcut es;
    bool has_es = false;
    OneHotShortcut os;
    bool has_os = false;
};

bool wants(const ExperimentConfig &cfg, const std::string &attack) {
    return std::find(cfg.attacks.begin(), cfg.attacks.end(), attack) != cfg.attacks.end();
}

Artifacts load_artifacts(const ExperimentConfig &cfg) {
    Artifacts art;
    require(!cfg.corpus_path.empty(), "experiment config lacks a corpus path");
    require(!cfg.vq_ckpt.empty(), "experiment config lacks a tokenizer checkpoint");
    require(!cfg.lm_ckpt.empty(), "experiment config lacks a model checkpoint");
    art.corpus = corpus_load(cfg.corpus_path);
    art.vq = vq_load(cfg.vq_ckpt);
    art.lm = lm_load(cfg.lm_ckpt);
    if (wants(cfg, "embed") || cfg.kind == "ablate-target") {
        require(!cfg.embed_ckpt.empty(), "experiment needs the embedding shortcut checkpoint");
    }
    if (!cfg.embed_ckpt.empty()) {
        art.es = embed_shortcut_load(cfg.embed_ckpt);
        art.has_es = true;
    }
    if (wants(cfg, "onehot")) {
        require(!cfg.onehot_ckpt.empty(), "experiment needs the 1-hot shortcut checkpoint");
    }
    if (!cfg.onehot_ckpt.empty()) {
        art.os = onehot_shortcut_load(cfg.onehot_ckpt);
        art.has_os = true;
    }
    if (cfg.kind == "cross-model") {
        require(!cfg.lm_b_ckpt.empty(), "cross-model experiment needs the second model");
        art.lm_b = lm_load(cfg.lm_b_ckpt);
        art.has_lm_b = true;
    }
    return art;
}

struct StopWatch {
    bool on;
    std::chrono::steady_clock::time_point t0;
    explicit StopWatch(bool enabled) : on(enabled), t0(std::chrono::steady_clock::now()) {}
    double secs() const {
        if (!on) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::vector<PromptSpec> eval_prompts(const Corpus &corpus, int n_eval) {
    require(!corpus.test_harmful.empty(), "corpus has no test prompts");
    int n = std::min<int>(n_eval, static_cast<int>(corpus.test_harmful.size()));
    return {corpus.test_harmful.begin(), corpus.test_harmful.begin() + n};
}

std::vector<PromptSpec> benign_pool(const Corpus &corpus, size_t cap = 20) {
    require(!corpus.benign.empty(), "corpus has no benign prompts");
    size_t n = std::min(cap, corpus.benign.size());
    return {corpus.benign.begin(), corpus.benign.begin() + n};
}

std::vector<int> hard_tokens(const VqVae &vq, const Tensor &image) {
    std::vector<int> codes = vq_quantize(vq_encode(vq, image), vq.codebook);
    std::vector<int> toks(codes.size());
    for (size_t i = 0; i < codes.size(); ++i) toks[i] = image_token(codes[i]);
    return toks;
}

double image_delta(const FusionModel &m, const VqVae &vq, const PromptSpec &p, const Tensor &img,
                   const PplBaseline &base) {
    return delta_ppl(m, prompt_with_image(p, hard_tokens(vq, img)), base);
}

double text_delta(const FusionModel &m, const PromptSpec &p, const std::vector<int> &suffix,
                  const PplBaseline &base) {
    std::vector<int> ctx = p.text;
    ctx.insert(ctx.end(), suffix.begin(), suffix.end());
    return delta_ppl(m, ctx, base);
}

ResultRow make_row(const std::string &attack, int train_prompts, uint64_t seed,
                   const EvalOutcome &o, double dppl, int64_t flops, double secs) {
    ResultRow r;
    r.attack = attack;
    r.train_prompts = train_prompts;
    r.seed = seed;
    r.asr_pct = percent_1dp(o.asr);
    r.rr_pct = percent_1dp(o.rr);
    r.delta_ppl = dppl;
    r.flops_per_token = flops;
    r.wall_time_s = secs;
    return r;
}

int64_t image_flops(const VqVae &vq, const OptConfig &opt) {
    return flop_cost({vq.cfg.cells(), opt.steps, 1, 1, 3});
}

int64_t gcg_flops(const GcgConfig &g) {
    return flop_cost({g.suffix_len, g.steps, g.candidate_suffixes, 1, 3});
}

std::string tau_name(double tau) {
    std::ostringstream s;
    s << "onehot-tau" << tau;
    return s.str();
}

// Per-prompt image attacks for one shortcut path; emits hard-path rows named
// `name` and soft-path rows named `name+shortcut`.
void direct_image_rows(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                       const std::string &name, const ShortcutPath &path,
                       const LossConfig &loss_cfg, const std::vector<PromptSpec> &prompts,
                       const std::vector<PplBaseline> &bases, bool aggregate,
                       ResultsTable &out) {
    EvalOutcome agg_hard{}, agg_soft{};
    double agg_dppl = 0.0;
    StopWatch watch(cfg.measure_time);
    for (size_t i = 0; i < prompts.size(); ++i) {
        const PromptSpec &p = prompts[i];
        StopWatch row_watch(cfg.measure_time);
        Tensor init = attack_init_image(seed, i);
        AttackResult r = image_attack(art.lm, art.vq, path, {p}, loss_cfg, cfg.opt, init,
                                      derive_seed(seed, "direct-" + name, i));
        EvalOutcome hard = eval_attack(art.lm, art.vq, nullptr, r.image, {p}, false);
        double dppl = image_delta(art.lm, art.vq, p, r.image, bases[i]);
        if (aggregate) {
            agg_hard.asr += hard.asr;
            agg_hard.rr += hard.rr;
            agg_dppl += dppl;
        } else {
            out.rows.push_back(make_row(name, 1, seed, hard, dppl, image_flops(art.vq, cfg.opt),
                                        row_watch.secs()));
        }
        if (cfg.eval_with_shortcut) {
            EvalOutcome soft = eval_attack(art.lm, art.vq, &path, r.image, {p}, true);
            if (aggregate) {
                agg_soft.asr += soft.asr;
                agg_soft.rr += soft.rr;
            } else {
                out.rows.push_back(make_row(name + "+shortcut", 1, seed, soft, dppl,
                                            image_flops(art.vq, cfg.opt), row_watch.secs()));
            }
        }
    }
    if (aggregate) {
        int n = static_cast<int>(prompts.size());
        agg_hard.asr /= n;
        agg_hard.rr /= n;
        agg_hard.n = n;
        out.rows.push_back(make_row(name, 1, seed, agg_hard, agg_dppl / n,
                                    image_flops(art.vq, cfg.opt), watch.secs()));
        if (cfg.eval_with_shortcut) {
            agg_soft.asr /= n;
            agg_soft.rr /= n;
            agg_soft.n = n;
            out.rows.push_back(make_row(name + "+shortcut", 1, seed, agg_soft, agg_dppl / n,
                                        image_flops(art.vq, cfg.opt), watch.secs()));
        }
    }
}

void run_direct(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                ResultsTable &out) {
    std::vector<PromptSpec> prompts = eval_prompts(art.corpus, cfg.n_eval);

    bool needs_image_base = wants(cfg, "none") || wants(cfg, "embed") || wants(cfg, "onehot");
    std::vector<PplBaseline> img_base(prompts.size());
    std::vector<PplBaseline> text_base(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        if (needs_image_base) {
            img_base[i] = ppl_baseline_image(art.lm, art.vq, prompts[i],
                                             derive_seed(seed, "ppl-baseline-set"));
        }
        if (wants(cfg, "gcg")) text_base[i] = ppl_baseline_text(art.lm, prompts[i]);
    }

    for (const std::string &attack : cfg.attacks) {
        if (attack == "none") {
            for (size_t i = 0; i < prompts.size(); ++i) {
                StopWatch watch(cfg.measure_time);
                Tensor init = attack_init_image(seed, i);
                EvalOutcome o = eval_attack(art.lm, art.vq, nullptr, init, {prompts[i]}, false);
                double dppl = image_delta(art.lm, art.vq, prompts[i], init, img_base[i]);
                out.rows.push_back(make_row("none", 0, seed, o, dppl, 0, watch.secs()));
            }
        } else if (attack == "embed") {
            require(art.has_es, "direct experiment: embedding shortcut not loaded");
            direct_image_rows(cfg, art, seed, "embed", embed_path(art.es), cfg.loss, prompts,
                              img_base, false, out);
        } else if (attack == "onehot") {
            require(art.has_os, "direct experiment: 1-hot shortcut not loaded");
            direct_image_rows(cfg, art, seed, "onehot", onehot_path(art.os, cfg.tau), cfg.loss,
                              prompts, img_base, false, out);
        } else if (attack == "gcg") {
            for (size_t i = 0; i < prompts.size(); ++i) {
                const PromptSpec &p = prompts[i];
                StopWatch watch(cfg.measure_time);
                GcgResult g =
                    gcg_attack(art.lm, {p}, cfg.gcg, cfg.loss, derive_seed(seed, "direct-gcg", i));
                EvalOutcome o = eval_suffix(art.lm, g.suffix, {p});
                double dppl = text_delta(art.lm, p, g.suffix, text_base[i]);
                out.rows.push_back(
                    make_row("gcg", 1, seed, o, dppl, gcg_flops(cfg.gcg), watch.secs()));
            }
        } else if (attack == "refusal-dir") {
            StopWatch watch(cfg.measure_time);
            std::vector<PromptSpec> benign = benign_pool(art.corpus);
            Tensor dir = compute_refusal_direction(art.lm, art.corpus.heldout_harmful, benign,
                                                   cfg.layer);
            int n_dir = static_cast<int>(art.corpus.heldout_harmful.size());
            double secs = watch.secs();
            for (const PromptSpec &p : prompts) {
                StopWatch row_watch(cfg.measure_time);
                EvalOutcome o = eval_ablated(art.lm, dir, {p});
                out.rows.push_back(
                    make_row("refusal-dir", n_dir, seed, o, 0.0, 0, secs + row_watch.secs()));
                secs = 0.0;
            }
        }
    }
}

void run_transfer(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                  ResultsTable &out) {
    std::vector<PromptSpec> test = eval_prompts(art.corpus, cfg.n_eval);

    bool needs_image_base = wants(cfg, "embed") || wants(cfg, "onehot");
    std::vector<PplBaseline> img_base(test.size());
    std::vector<PplBaseline> text_base(test.size());
    for (size_t i = 0; i < test.size(); ++i) {
        if (needs_image_base) {
            img_base[i] = ppl_baseline_image(art.lm, art.vq, test[i],
                                             derive_seed(seed, "ppl-baseline-set"));
        }
        if (wants(cfg, "gcg")) text_base[i] = ppl_baseline_text(art.lm, test[i]);
    }

    for (int64_t n64 : cfg.n_train) {
        int n = static_cast<int>(n64);
        std::vector<PromptSpec> train = transfer_train_slice(art.corpus.heldout_harmful, n, test);
        for (const std::string &attack : cfg.attacks) {
            StopWatch watch(cfg.measure_time);
            if (attack == "embed" || attack == "onehot") {
                ShortcutPath path;
                if (attack == "embed") {
                    require(art.has_es, "transfer experiment: embedding shortcut not loaded");
                    path = embed_path(art.es);
                } else {
                    require(art.has_os, "transfer experiment: 1-hot shortcut not loaded");
                    path = onehot_path(art.os, cfg.tau);
                }
                Tensor init = attack_init_image(seed, 1000 + static_cast<uint64_t>(n));
                AttackResult r = image_attack(art.lm, art.vq, path, train, cfg.loss, cfg.opt, init,
                                              derive_seed(seed, "transfer-" + attack, n));
                EvalOutcome o = eval_attack(art.lm, art.vq, nullptr, r.image, test, false);
                double dppl = 0.0;
                for (size_t i = 0; i < test.size(); ++i) {
                    dppl += image_delta(art.lm, art.vq, test[i], r.image, img_base[i]);
                }
                out.rows.push_back(make_row(attack, n, seed, o, dppl / test.size(),
                                            image_flops(art.vq, cfg.opt), watch.secs()));
            } else if (attack == "gcg") {
                GcgResult g = gcg_attack(art.lm, train, cfg.gcg, cfg.loss,
                                         derive_seed(seed, "transfer-gcg", n));
                EvalOutcome o = eval_suffix(art.lm, g.suffix, test);
                double dppl = 0.0;
                for (size_t i = 0; i < test.size(); ++i) {
                    dppl += text_delta(art.lm, test[i], g.suffix, text_base[i]);
                }
                out.rows.push_back(make_row("gcg", n, seed, o, dppl / test.size(),
                                            gcg_flops(cfg.gcg), watch.secs()));
            } else if (attack == "refusal-dir") {
                std::vector<PromptSpec> benign = benign_pool(art.corpus);
                Tensor dir = compute_refusal_direction(art.lm, train, benign, cfg.layer);
                EvalOutcome o = eval_ablated(art.lm, dir, test);
                out.rows.push_back(make_row("refusal-dir", n, seed, o, 0.0, 0, watch.secs()));
            } else if (attack == "none") {
                Tensor init = attack_init_image(seed, 1000 + static_cast<uint64_t>(n));
                EvalOutcome o = eval_attack(art.lm, art.vq, nullptr, init, test, false);
                out.rows.push_back(make_row("none", 0, seed, o, 0.0, 0, watch.secs()));
            }
        }
    }
}

void run_ablate_temperature(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                            ResultsTable &out) {
    require(art.has_os, "temperature ablation needs the 1-hot shortcut");
    std::vector<PromptSpec> prompts = eval_prompts(art.corpus, cfg.n_eval);
    std::vector<PplBaseline> img_base(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        img_base[i] =
            ppl_baseline_image(art.lm, art.vq, prompts[i], derive_seed(seed, "ppl-baseline-set"));
    }
    for (double tau : cfg.taus) {
        require(tau > 0.0, "temperature ablation: tau must be positive");
        direct_image_rows(cfg, art, seed, tau_name(tau),
                          onehot_path(art.os, static_cast<float>(tau)), cfg.loss, prompts,
                          img_base, true, out);
    }
}

void run_ablate_target(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                       ResultsTable &out) {
    require(art.has_os, "target ablation needs the 1-hot shortcut");
    std::vector<PromptSpec> prompts = eval_prompts(art.corpus, cfg.n_eval);
    std::vector<PplBaseline> img_base(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        img_base[i] =
            ppl_baseline_image(art.lm, art.vq, prompts[i], derive_seed(seed, "ppl-baseline-set"));
    }
    for (TargetMode mode : {TargetMode::sure, TargetMode::sure_context,
                            TargetMode::sure_context_minus_refusal}) {
        LossConfig lc;
        lc.mode = mode;
        if (mode == TargetMode::sure_context_minus_refusal) {
            lc.w_refusal = cfg.loss.w_refusal > 0.0f ? cfg.loss.w_refusal : 1.0f;
        }
        direct_image_rows(cfg, art, seed, std::string("onehot-") + target_mode_name(mode),
                          onehot_path(art.os, cfg.tau), lc, prompts, img_base, true, out);
    }
}

void run_cross_model(const ExperimentConfig &cfg, const Artifacts &art, uint64_t seed,
                     ResultsTable &out) {
    require(art.has_lm_b, "cross-model experiment needs the second model");
    require(art.has_os, "cross-model experiment needs the 1-hot shortcut");
    std::vector<PromptSpec> test = eval_prompts(art.corpus, cfg.n_eval);
    int n = static_cast<int>(cfg.n_train.front());
    std::vector<PromptSpec> train = transfer_train_slice(art.corpus.heldout_harmful, n, test);

    StopWatch watch(cfg.measure_time);
    ShortcutPath path = onehot_path(art.os, cfg.tau);
    Tensor init = attack_init_image(seed, 3000);
    AttackResult r = image_attack(art.lm, art.vq, path, train, cfg.loss, cfg.opt, init,
                                  derive_seed(seed, "cross-model", n));
    double secs = watch.secs();

    EvalOutcome base_b = eval_attack(art.lm_b, art.vq, nullptr, init, test, false);
    out.rows.push_back(make_row("none-cross", 0, seed, base_b, 0.0, 0, 0.0));
    EvalOutcome self = eval_attack(art.lm, art.vq, nullptr, r.image, test, false);
    out.rows.push_back(
        make_row("onehot-self", n, seed, self, 0.0, image_flops(art.vq, cfg.opt), secs));
    EvalOutcome cross = eval_attack(art.lm_b, art.vq, nullptr, r.image, test, false);
    out.rows.push_back(
        make_row("onehot-cross", n, seed, cross, 0.0, image_flops(art.vq, cfg.opt), secs));
}

}  // namespace

ResultsTable run_experiment(const ExperimentConfig &cfg) {
    ResultsTable out;
    if (cfg.kind == "flops") {
        for (const std::string &name : cost_preset_names()) {
            ResultRow r;
            r.attack = name;
            r.flops_per_token = flop_cost(cost_preset(name));
            out.rows.push_back(std::move(r));
        }
    } else {
        Artifacts art = load_artifacts(cfg);
        for (uint64_t seed : cfg.seeds) {
            if (cfg.kind == "direct") {
                run_direct(cfg, art, seed, out);
            } else if (cfg.kind == "transfer") {
                run_transfer(cfg, art, seed, out);
            } else if (cfg.kind == "ablate-temperature") {
                run_ablate_temperature(cfg, art, seed, out);
            } else if (cfg.kind == "ablate-target") {
                run_ablate_target(cfg, art, seed, out);
            } else if (cfg.kind == "cross-model") {
                run_cross_model(cfg, art, seed, out);
            } else {
                fail("unknown experiment kind: " + cfg.kind);
            }
        }
    }
    if (!cfg.out_csv.empty()) results_save(cfg.out_csv, out);
    return out;
}

std::string report_text(const std::vector<ResultsTable> &tables) {
    struct Key {
        std::string attack;
        int train_prompts;
        bool operator<(const Key &o) const {
            return attack != o.attack ? attack < o.attack : train_prompts < o.train_prompts;
        }
    };
    struct SeedAgg {
        double asr = 0.0, rr = 0.0, dppl = 0.0;
        int n = 0;
    };
    std::map<Key, std::map<uint64_t, SeedAgg>> groups;
    for (const ResultsTable &t : tables) {
        for (const ResultRow &r : t.rows) {
            SeedAgg &a = groups[{r.attack, r.train_prompts}][r.seed];
            a.asr += r.asr_pct;
            a.rr += r.rr_pct;
            a.dppl += r.delta_ppl;
            ++a.n;
        }
    }

    std::ostringstream out;
    out << std::left << std::setw(34) << "attack" << std::right << std::setw(8) << "n_train"
        << std::setw(7) << "seeds" << "  " << std::left << std::setw(22) << "asr_pct"
        << std::setw(22) << "rr_pct" << "delta_ppl\n";
    auto span = [](const std::vector<double> &v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        std::ostringstream s;
        s << fmt("%.1f", mean);
        if (v.size() > 1) s << " (" << fmt("%.1f", *lo) << ".." << fmt("%.1f", *hi) << ")";
        return s.str();
    };
    for (const auto &[key, by_seed] : groups) {
        std::vector<double> asr, rr, dppl;
        for (const auto &[seed, a] : by_seed) {
            asr.push_back(a.asr / a.n);
            rr.push_back(a.rr / a.n);
            dppl.push_back(a.dppl / a.n);
        }
        double dppl_mean = 0.0;
        for (double x : dppl) dppl_mean += x;
        dppl_mean /= dppl.size();
        out << std::left << std::setw(34) << key.attack << std::right << std::setw(8)
            << key.train_prompts << std::setw(7) << by_seed.size() << "  " << std::left
            << std::setw(22) << span(asr) << std::setw(22) << span(rr) << fmt("%.3f", dppl_mean)
            << "\n";
    }
    return out.str();
}

}  // namespace fb
