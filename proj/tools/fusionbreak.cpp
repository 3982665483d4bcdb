#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "fb/experiment.hpp"
#include "fb/rng.hpp"
#include "fb/synth.hpp"
#include "fb/threading.hpp"

using namespace fb;

namespace {

struct Args {
    std::string config;
    std::string out;
    uint64_t seed = 1;
    bool seed_given = false;
    bool out_given = false;
};

void log_line(const std::string &msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

std::string ensure_parent(const std::string &path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    return path;
}

ConfigFile load_config(const Args &a) {
    if (a.config.empty()) fail("missing config: pass --config <path>");
    return config_load(a.config);
}

int geti(const ConfigFile &f, const std::string &sec, const std::string &key, int dflt) {
    return static_cast<int>(f.get_int_or(sec, key, dflt));
}

float getf(const ConfigFile &f, const std::string &sec, const std::string &key, float dflt) {
    return static_cast<float>(f.get_double_or(sec, key, dflt));
}

std::string out_path(const Args &a, const ConfigFile &f, const std::string &sec,
                     const std::string &key) {
    if (a.out_given) return ensure_parent(a.out);
    std::string p = f.get_or(sec, key, "");
    if (p.empty()) fail("no output path: set [" + sec + "] " + key + " or pass --out");
    return ensure_parent(p);
}

CorpusConfig corpus_config(const ConfigFile &f) {
    CorpusConfig c;
    c.topics = geti(f, "data", "topics", c.topics);
    c.harmful_templates = geti(f, "data", "harmful_templates", c.harmful_templates);
    c.benign_templates = geti(f, "data", "benign_templates", c.benign_templates);
    c.heldout_harmful = geti(f, "data", "heldout_harmful", c.heldout_harmful);
    c.test_harmful = geti(f, "data", "test_harmful", c.test_harmful);
    c.describe_per_class = geti(f, "data", "describe_per_class", c.describe_per_class);
    c.image_after_text = geti(f, "data", "image_after_text", c.image_after_text ? 1 : 0) != 0;
    return c;
}

VqConfig vq_config(const ConfigFile &f) {
    VqConfig c;
    c.grid = geti(f, "vqvae", "grid", c.grid);
    c.d_latent = geti(f, "vqvae", "d_latent", c.d_latent);
    c.codes = geti(f, "vqvae", "codes", c.codes);
    c.enc_hidden = geti(f, "vqvae", "enc_hidden", c.enc_hidden);
    c.dec_hidden = geti(f, "vqvae", "dec_hidden", c.dec_hidden);
    c.beta_commit = getf(f, "vqvae", "beta_commit", c.beta_commit);
    c.epochs = geti(f, "vqvae", "epochs", c.epochs);
    c.lr = getf(f, "vqvae", "lr", c.lr);
    c.heldout_mse_gate = getf(f, "vqvae", "heldout_mse_gate", c.heldout_mse_gate);
    return c;
}

LmConfig lm_config(const ConfigFile &f) {
    LmConfig c;
    c.vocab = geti(f, "lm", "vocab", c.vocab);
    c.d_model = geti(f, "lm", "d_model", c.d_model);
    c.layers = geti(f, "lm", "layers", c.layers);
    c.heads = geti(f, "lm", "heads", c.heads);
    c.context = geti(f, "lm", "context", c.context);
    c.d_ff = geti(f, "lm", "d_ff", c.d_ff);
    c.pretrain_epochs = geti(f, "lm", "pretrain_epochs", c.pretrain_epochs);
    c.safety_epochs = geti(f, "lm", "safety_epochs", c.safety_epochs);
    c.batch = geti(f, "lm", "batch", c.batch);
    c.pretrain_lr = getf(f, "lm", "pretrain_lr", c.pretrain_lr);
    c.safety_lr = getf(f, "lm", "safety_lr", c.safety_lr);
    c.refusal_gate = getf(f, "lm", "refusal_gate", c.refusal_gate);
    c.benign_gate = getf(f, "lm", "benign_gate", c.benign_gate);
    c.max_gen = geti(f, "lm", "max_gen", c.max_gen);
    return c;
}

ShortcutConfig shortcut_config(const ConfigFile &f) {
    ShortcutConfig c;
    c.hidden = geti(f, "shortcut", "hidden", c.hidden);
    c.embed_epochs = geti(f, "shortcut", "embed_epochs", c.embed_epochs);
    c.onehot_epochs = geti(f, "shortcut", "onehot_epochs", c.onehot_epochs);
    c.lr = getf(f, "shortcut", "lr", c.lr);
    c.cosine_gate = getf(f, "shortcut", "cosine_gate", c.cosine_gate);
    c.top1_gate = getf(f, "shortcut", "top1_gate", c.top1_gate);
    return c;
}

LossConfig loss_config(const ConfigFile &f) {
    LossConfig c;
    c.mode = target_mode_from_name(f.get_or("attack", "mode", "sure-context"));
    c.w_refusal = getf(f, "attack", "w_refusal", 0.0f);
    validate(c);
    return c;
}

OptConfig opt_config(const ConfigFile &f) {
    OptConfig c;
    c.steps = geti(f, "attack", "steps", c.steps);
    c.alpha0 = getf(f, "attack", "alpha0", c.alpha0);
    c.halve_period = geti(f, "attack", "halve_period", c.halve_period);
    c.alpha_floor = getf(f, "attack", "alpha_floor", c.alpha_floor);
    validate(c);
    return c;
}

GcgConfig gcg_config(const ConfigFile &f) {
    GcgConfig c;
    c.steps = geti(f, "gcg", "steps", c.steps);
    c.suffix_len = geti(f, "gcg", "suffix_len", c.suffix_len);
    c.candidates_per_token = geti(f, "gcg", "candidates_per_token", c.candidates_per_token);
    c.candidate_suffixes = geti(f, "gcg", "candidate_suffixes", c.candidate_suffixes);
    validate(c);
    return c;
}

std::vector<PromptSpec> attack_prompts(const Corpus &corpus, int n) {
    return transfer_train_slice(corpus.heldout_harmful, n, corpus.test_harmful);
}

std::vector<PromptSpec> benign_slice(const Corpus &corpus, size_t cap = 20) {
    require(!corpus.benign.empty(), "corpus has no benign prompts");
    size_t n = std::min(cap, corpus.benign.size());
    return {corpus.benign.begin(), corpus.benign.begin() + n};
}

int cmd_gen_data(const Args &a) {
    ConfigFile f = load_config(a);
    std::string path = out_path(a, f, "data", "corpus");
    Corpus c = build_corpus(corpus_config(f), a.seed);
    corpus_save(path, c);
    log_line("wrote corpus to " + path + ": " + std::to_string(c.pretrain.size()) +
             " pretrain, " + std::to_string(c.safety.size()) + " safety examples, " +
             std::to_string(c.heldout_harmful.size()) + " heldout + " +
             std::to_string(c.test_harmful.size()) + " test harmful prompts");
    return 0;
}

int cmd_train_vqvae(const Args &a) {
    ConfigFile f = load_config(a);
    std::string path = out_path(a, f, "models", "vqvae");
    int per_class = geti(f, "data", "images_per_class", 200);
    std::vector<Tensor> images = synth_dataset(per_class, derive_seed(a.seed, "vq-data"));
    log_line("training tokenizer on " + std::to_string(images.size()) + " images");
    VqVae vq = train_vqvae(images, vq_config(f), a.seed);
    vq_save(path, vq);
    log_line("wrote tokenizer to " + path);
    return 0;
}

int cmd_train_lm(const Args &a) {
    ConfigFile f = load_config(a);
    std::string path = out_path(a, f, "models", "lm");
    Corpus corpus = corpus_load(f.get("data", "corpus"));
    VqVae vq = vq_load(f.get("models", "vqvae"));
    TrainReport report;
    FusionModel m = train_lm(corpus, vq, lm_config(f), a.seed, &report);
    lm_save(path, m);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "final losses: pretrain %.4f, safety %.4f; heldout refusal %.3f, benign "
                  "payload %.3f",
                  report.pretrain_loss.empty() ? 0.0 : report.pretrain_loss.back(),
                  report.safety_loss.empty() ? 0.0 : report.safety_loss.back(),
                  report.heldout_refusal_rate, report.benign_payload_rate);
    log_line(buf);
    log_line("wrote model to " + path);
    return 0;
}

int cmd_train_shortcut(const Args &a) {
    ConfigFile f = load_config(a);
    std::string which = f.get_or("shortcut", "which", "both");
    require(which == "embed" || which == "onehot" || which == "both",
            "shortcut which must be embed, onehot, or both");
    VqVae vq = vq_load(f.get("models", "vqvae"));
    ShortcutConfig cfg = shortcut_config(f);
    int per_class = geti(f, "shortcut", "images_per_class", 40);
    std::vector<Tensor> images = synth_dataset(per_class, derive_seed(a.seed, "shortcut-data"));
    if (which != "onehot") {
        FusionModel m = lm_load(f.get("models", "lm"));
        std::string path = ensure_parent(a.out_given && which == "embed"
                                             ? a.out
                                             : f.get("models", "embed_shortcut"));
        EmbeddingShortcut s = train_embedding_shortcut(vq, m, images, cfg, a.seed);
        FidelityReport r = shortcut_fidelity(s, vq, m, images);
        embed_shortcut_save(path, s);
        log_line("embedding shortcut cosine " + std::to_string(r.mean_cosine) + ", wrote " + path);
    }
    if (which != "embed") {
        std::string path = ensure_parent(a.out_given && which == "onehot"
                                             ? a.out
                                             : f.get("models", "onehot_shortcut"));
        OneHotShortcut s = train_onehot_shortcut(vq, images, cfg, a.seed);
        float tau = getf(f, "attack", "tau", 6.0f);
        FidelityReport r = shortcut_fidelity(s, vq, images, tau);
        onehot_shortcut_save(path, s);
        log_line("1-hot shortcut top-1 " + std::to_string(r.top1_accuracy) + ", wrote " + path);
    }
    return 0;
}

int cmd_attack_image(const Args &a) {
    ConfigFile f = load_config(a);
    std::string dir = out_path(a, f, "attack", "out");
    Corpus corpus = corpus_load(f.get("data", "corpus"));
    VqVae vq = vq_load(f.get("models", "vqvae"));
    FusionModel m = lm_load(f.get("models", "lm"));
    std::string which = f.get_or("attack", "path", "onehot");
    float tau = getf(f, "attack", "tau", 6.0f);
    EmbeddingShortcut es;
    OneHotShortcut os;
    ShortcutPath path;
    if (which == "embed") {
        es = embed_shortcut_load(f.get("models", "embed_shortcut"));
        path = embed_path(es);
    } else if (which == "onehot") {
        os = onehot_shortcut_load(f.get("models", "onehot_shortcut"));
        path = onehot_path(os, tau);
    } else {
        fail("attack path must be embed or onehot");
    }
    int n = geti(f, "attack", "n_prompts", 1);
    std::vector<PromptSpec> prompts = attack_prompts(corpus, n);
    Tensor init = attack_init_image(a.seed, 0);
    AttackResult r =
        image_attack(m, vq, path, prompts, loss_config(f), opt_config(f), init, a.seed);
    attack_save(dir, r);
    char buf[120];
    std::snprintf(buf, sizeof buf, "best loss %.6f at step %d over %d prompts", r.best_loss,
                  r.best_step, n);
    log_line(buf);
    log_line("wrote attack artifact to " + dir);
    return 0;
}

int cmd_attack_gcg(const Args &a) {
    ConfigFile f = load_config(a);
    std::string dir = out_path(a, f, "gcg", "out");
    Corpus corpus = corpus_load(f.get("data", "corpus"));
    FusionModel m = lm_load(f.get("models", "lm"));
    int n = geti(f, "gcg", "n_prompts", 1);
    std::vector<PromptSpec> prompts = attack_prompts(corpus, n);
    GcgResult r = gcg_attack(m, prompts, gcg_config(f), loss_config(f), a.seed);
    gcg_save(dir, r);
    std::string toks;
    for (int t : r.suffix) toks += (toks.empty() ? "" : " ") + std::to_string(t);
    char buf[120];
    std::snprintf(buf, sizeof buf, "best loss %.6f over %d prompts", r.best_loss, n);
    log_line(buf);
    log_line("suffix tokens: " + toks);
    log_line("wrote suffix artifact to " + dir);
    return 0;
}

int cmd_refusal_dir(const Args &a) {
    ConfigFile f = load_config(a);
    std::string path = out_path(a, f, "attack", "out");
    Corpus corpus = corpus_load(f.get("data", "corpus"));
    FusionModel m = lm_load(f.get("models", "lm"));
    int n = geti(f, "attack", "n_prompts", 20);
    int layer = geti(f, "experiment", "layer", 2);
    std::vector<PromptSpec> harmful = attack_prompts(corpus, n);
    Tensor dir = compute_refusal_direction(m, harmful, benign_slice(corpus), layer);
    checkpoint_save(path, {{"direction", dir}});
    log_line("refusal direction from " + std::to_string(n) + " prompts at layer " +
             std::to_string(layer) + ", wrote " + path);
    return 0;
}

int run_configured_experiment(const Args &a, const std::string &forced_kind) {
    ConfigFile f = load_config(a);
    auto &exp = f.sections["experiment"];
    if (!forced_kind.empty()) exp["kind"] = forced_kind;
    if (!exp.count("kind")) exp["kind"] = "direct";
    if (a.seed_given) exp["seeds"] = std::to_string(a.seed);
    if (!exp.count("seeds")) exp["seeds"] = "1,2,3";
    if (a.out_given) exp["out"] = a.out;
    ExperimentConfig cfg = experiment_from_config(f);
    log_line("running " + cfg.kind + " experiment over " + std::to_string(cfg.seeds.size()) +
             " seed(s), " + std::to_string(thread_count()) + " thread(s)");
    ResultsTable t = run_experiment(cfg);
    std::cout << results_csv(t);
    if (!cfg.out_csv.empty()) log_line("wrote " + cfg.out_csv);
    log_line("summary:\n" + report_text({t}));
    return 0;
}

int cmd_flops(const Args &a, const std::string &preset) {
    if (!preset.empty()) {
        std::cout << flop_cost(cost_preset(preset)) << "\n";
        return 0;
    }
    if (!a.config.empty()) return run_configured_experiment(a, "flops");
    ExperimentConfig cfg;
    cfg.kind = "flops";
    cfg.seeds = {1};
    std::cout << results_csv(run_experiment(cfg));
    return 0;
}

int cmd_report(const Args &a, std::vector<std::string> files) {
    if (files.empty()) {
        ConfigFile f = load_config(a);
        std::string out = f.get_or("experiment", "out", "");
        require(!out.empty(), "report needs csv paths or [experiment] out in the config");
        files.push_back(out);
    }
    std::vector<ResultsTable> tables;
    for (const std::string &p : files) tables.push_back(results_load(p));
    std::cout << report_text(tables);
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"gradient jailbreaks on a toy early-fusion multimodal LM"};
    app.require_subcommand(1);

    Args args;
    std::string flops_preset;
    std::vector<std::string> report_files;

    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", args.config, "config file path");
        sub->add_option("--seed", args.seed, "base random seed");
        sub->add_option("--out", args.out, "override the configured output path");
        return sub;
    };

    auto *gen_data = add_common(app.add_subcommand("gen-data", "build and save the prompt corpus"));
    auto *train_vq =
        add_common(app.add_subcommand("train-vqvae", "train the image tokenizer on synthetic data"));
    auto *train_lm_cmd =
        add_common(app.add_subcommand("train-lm", "pretrain and safety-tune the fusion LM"));
    auto *train_sc =
        add_common(app.add_subcommand("train-shortcut", "fit the differentiable tokenizer shortcuts"));
    auto *atk_img = add_common(
        app.add_subcommand("attack-image", "optimize a jailbreak image and save the artifact"));
    auto *atk_gcg = add_common(
        app.add_subcommand("attack-gcg", "search a jailbreak token suffix and save the artifact"));
    auto *ref_dir = add_common(
        app.add_subcommand("refusal-dir", "extract the refusal direction from activations"));
    auto *eval_cmd =
        add_common(app.add_subcommand("eval", "run the experiment declared in the config"));
    auto *transfer_cmd =
        add_common(app.add_subcommand("transfer", "attack on held-out prompts, evaluate on test"));
    auto *ablate_cmd = add_common(
        app.add_subcommand("ablate-temp", "sweep the relaxation temperature of the 1-hot path"));
    auto *flops_cmd = add_common(app.add_subcommand("flops", "attack cost model in token units"));
    flops_cmd->add_option("--preset", flops_preset, "named cost preset");
    auto *report_cmd =
        add_common(app.add_subcommand("report", "aggregate result csv files across seeds"));
    report_cmd->add_option("files", report_files, "result csv files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    CLI::App *sub = app.get_subcommands().front();
    args.seed_given = sub->count("--seed") > 0;
    args.out_given = sub->count("--out") > 0;

    try {
        if (sub == gen_data) return cmd_gen_data(args);
        if (sub == train_vq) return cmd_train_vqvae(args);
        if (sub == train_lm_cmd) return cmd_train_lm(args);
        if (sub == train_sc) return cmd_train_shortcut(args);
        if (sub == atk_img) return cmd_attack_image(args);
        if (sub == atk_gcg) return cmd_attack_gcg(args);
        if (sub == ref_dir) return cmd_refusal_dir(args);
        if (sub == eval_cmd) return run_configured_experiment(args, "");
        if (sub == transfer_cmd) return run_configured_experiment(args, "transfer");
        if (sub == ablate_cmd) return run_configured_experiment(args, "ablate-temperature");
        if (sub == flops_cmd) return cmd_flops(args, flops_preset);
        if (sub == report_cmd) return cmd_report(args, report_files);
        fail("unhandled subcommand");
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
