#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fb/experiment.hpp"

using namespace fb;

namespace {

std::string slurp(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

LmConfig tiny_lm_config() {
    LmConfig cfg;
    cfg.d_model = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.context = 64;
    cfg.d_ff = 64;
    return cfg;
}

Corpus tiny_corpus() {
    CorpusConfig cfg;
    cfg.topics = 10;
    cfg.harmful_templates = 4;
    cfg.benign_templates = 4;
    cfg.heldout_harmful = 3;
    cfg.test_harmful = 4;
    cfg.describe_per_class = 1;
    return build_corpus(cfg, 99);
}

// Untrained artifacts written once; determinism tests only need fixed bytes.
struct Workspace {
    std::string corpus = "harness_corpus.txt";
    std::string vq = "harness_vq.ckpt";
    std::string lm = "harness_lm.ckpt";
    std::string lm_b = "harness_lm_b.ckpt";
    std::string embed = "harness_embed.ckpt";
    std::string onehot = "harness_onehot.ckpt";

    Workspace() {
        corpus_save(corpus, tiny_corpus());
        vq_save(vq, vqvae_init(VqConfig{}, 7));
        lm_save(lm, lm_init(tiny_lm_config(), 404));
        lm_save(lm_b, lm_init(tiny_lm_config(), 405));
        embed_shortcut_save(embed, embed_shortcut_init(16, 32, 32, 5));
        onehot_shortcut_save(onehot, onehot_shortcut_init(16, 32, 64, 6));
    }
};

const Workspace &workspace() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("config parser handles sections, comments, and whitespace") {
    ConfigFile f = config_parse(
        "top = 1\n"
        "# full-line comment\n"
        "[experiment]\n"
        "kind = direct   # trailing comment\n"
        "  seeds=1, 2,3  \n"
        "name = two  words\n"
        "\n"
        "[attack]\n"
        "steps = 120\n");
    CHECK(f.get("", "top") == "1");
    CHECK(f.get("experiment", "kind") == "direct");
    CHECK(f.get("experiment", "seeds") == "1, 2,3");
    CHECK(f.get("experiment", "name") == "two  words");
    CHECK(f.get_int("attack", "steps") == 120);
    CHECK(f.has("attack", "steps"));
    CHECK_FALSE(f.has("attack", "missing"));
    CHECK_FALSE(f.has("nope", "steps"));
    CHECK(f.get_or("attack", "missing", "dflt") == "dflt");
    CHECK(f.get_int_or("attack", "missing", 9) == 9);
    CHECK(f.get_double_or("attack", "alpha", 0.25) == 0.25);
    CHECK(f.get_u64("", "top") == 1);
}

TEST_CASE("config parser rejects malformed input") {
    CHECK_THROWS_WITH_AS(config_parse("[experiment\nkind = x\n"),
                         doctest::Contains("unterminated section header"), std::runtime_error);
    CHECK_THROWS_WITH_AS(config_parse("[]\n"), doctest::Contains("empty section"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(config_parse("[a]\njust a bare line\n"),
                         doctest::Contains("expected key = value"), std::runtime_error);
    CHECK_THROWS_WITH_AS(config_parse("[a]\n= value\n"), doctest::Contains("empty key"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(config_parse("[a]\nk = 1\nk = 2\n"),
                         doctest::Contains("line 3: duplicate key k"), std::runtime_error);
    ConfigFile f = config_parse("[a]\nk = 1\n");
    CHECK_THROWS_WITH_AS(f.get("a", "missing"), doctest::Contains("missing key"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(f.get("b", "k"), doctest::Contains("missing section"),
                         std::runtime_error);
    CHECK_THROWS(config_load("no_such_config.ini"));
}

TEST_CASE("list parsing splits on commas and trims") {
    CHECK(parse_int_list("1, 2,3") == std::vector<int64_t>{1, 2, 3});
    CHECK(parse_int_list("") == std::vector<int64_t>{});
    CHECK(parse_u64_list("7") == std::vector<uint64_t>{7});
    CHECK(parse_double_list("1.5, 2") == std::vector<double>{1.5, 2.0});
    CHECK(parse_name_list(" a, b ,c ") == std::vector<std::string>{"a", "b", "c"});
    CHECK_THROWS(parse_int_list("1, x"));
}

TEST_CASE("flop cost matches the closed form and its presets") {
    CHECK(flop_cost(cost_preset("paper-image")) == 409600);
    CHECK(flop_cost(cost_preset("paper-gcg")) == 1030000);
    CHECK(flop_cost(cost_preset("toy-image")) == 32000);
    CHECK(flop_cost(cost_preset("toy-gcg")) == 21440);
    CHECK(cost_preset_names().size() == 4);
    CHECK_THROWS_WITH_AS(cost_preset("paper-video"), doctest::Contains("unknown cost preset"),
                         std::runtime_error);

    CostModel c = cost_preset("paper-image");
    int64_t base = flop_cost(c);
    c.steps *= 2;
    CHECK(flop_cost(c) == 2 * base);
    c.steps /= 2;
    c.tokens *= 3;
    CHECK(flop_cost(c) == 3 * base);
    c.tokens /= 3;
    c.steps = 0;
    CHECK(flop_cost(c) == 0);
    c.steps = -1;
    CHECK_THROWS(flop_cost(c));
    c.steps = 1;
    c.tokens = 0;
    CHECK_THROWS(flop_cost(c));
    c.tokens = 1;
    c.bwd_ratio = 0;
    CHECK_THROWS(flop_cost(c));
}

TEST_CASE("percentages round half up to one decimal") {
    CHECK(percent_1dp(0.0) == 0.0);
    CHECK(percent_1dp(1.0) == 100.0);
    CHECK(percent_1dp(0.875) == 87.5);
    CHECK(percent_1dp(1.0 / 3.0) == doctest::Approx(33.3).epsilon(1e-12));
    CHECK(percent_1dp(2.0 / 3.0) == doctest::Approx(66.7).epsilon(1e-12));
    // exact .x5 ties, representable in binary
    CHECK(percent_1dp(0.0625) == 6.3);
    CHECK(percent_1dp(0.1875) == 18.8);
}

TEST_CASE("results csv has the fixed columns and round-trips") {
    ResultsTable t;
    ResultRow a;
    a.attack = "onehot+shortcut";
    a.train_prompts = 1;
    a.seed = 42;
    a.asr_pct = percent_1dp(0.75);
    a.rr_pct = percent_1dp(0.125);
    a.delta_ppl = 1.23456;
    a.flops_per_token = 32000;
    a.wall_time_s = 0.0;
    ResultRow b;
    b.attack = "none";
    b.rr_pct = 100.0;
    t.rows = {a, b};

    CHECK(results_csv(t) ==
          "attack,train_prompts,seed,asr_pct,rr_pct,delta_ppl,flops_per_token,wall_time_s\n"
          "onehot+shortcut,1,42,75.0,12.5,1.235,32000,0.000\n"
          "none,0,0,0.0,100.0,0.000,0,0.000\n");

    std::string path = "harness_results_rt.csv";
    results_save(path, t);
    ResultsTable back = results_load(path);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].attack == "onehot+shortcut");
    CHECK(back.rows[0].train_prompts == 1);
    CHECK(back.rows[0].seed == 42);
    CHECK(back.rows[0].asr_pct == 75.0);
    CHECK(back.rows[0].rr_pct == 12.5);
    CHECK(back.rows[0].delta_ppl == 1.235);
    CHECK(back.rows[0].flops_per_token == 32000);
    CHECK(back.rows[1].attack == "none");

    results_save(path + ".2", back);
    CHECK(slurp(path) == slurp(path + ".2"));

    ResultRow bad;
    bad.attack = "a,b";
    CHECK_THROWS(results_csv(ResultsTable{{bad}}));
    bad.attack = "ok";
    bad.asr_pct = 101.0;
    CHECK_THROWS(results_csv(ResultsTable{{bad}}));
    CHECK_THROWS(results_load("no_such_results.csv"));
    std::ofstream("harness_bad_header.csv") << "a,b,c\n";
    CHECK_THROWS_WITH_AS(results_load("harness_bad_header.csv"),
                         doctest::Contains("unexpected results header"), std::runtime_error);
}

TEST_CASE("model checkpoints round-trip with their architecture") {
    const Workspace &w = workspace();

    FusionModel m = lm_init(tiny_lm_config(), 404);
    FusionModel m2 = lm_load(w.lm);
    CHECK(m2.cfg.d_model == 32);
    CHECK(m2.cfg.layers == 2);
    CHECK(m2.cfg.heads == 2);
    CHECK(m2.cfg.context == 64);
    CHECK(m2.cfg.d_ff == 64);
    CHECK(m2.cfg.vocab == m.cfg.vocab);
    CHECK(m2.cfg.max_gen == m.cfg.max_gen);
    TensorMap a = m.named(), b = m2.named();
    REQUIRE(a.size() == b.size());
    for (const auto &[name, t] : a) {
        REQUIRE(b.count(name) == 1);
        CHECK(b.at(name).shape == t.shape);
        CHECK(b.at(name).data == t.data);
    }

    VqVae vq = vqvae_init(VqConfig{}, 7);
    VqVae vq2 = vq_load(w.vq);
    CHECK(vq2.cfg.grid == vq.cfg.grid);
    CHECK(vq2.cfg.codes == vq.cfg.codes);
    CHECK(vq2.cfg.d_latent == vq.cfg.d_latent);
    CHECK(vq2.codebook.data == vq.codebook.data);

    TensorMap es = embed_shortcut_load(w.embed).named();
    for (const auto &[name, t] : embed_shortcut_init(16, 32, 32, 5).named()) {
        REQUIRE(es.count(name) == 1);
        CHECK(es.at(name).shape == t.shape);
        CHECK(es.at(name).data == t.data);
    }
    TensorMap os = onehot_shortcut_load(w.onehot).named();
    for (const auto &[name, t] : onehot_shortcut_init(16, 32, 64, 6).named()) {
        REQUIRE(os.count(name) == 1);
        CHECK(os.at(name).shape == t.shape);
        CHECK(os.at(name).data == t.data);
    }

    CHECK_THROWS_WITH_AS(lm_load(w.vq), doctest::Contains("unexpected arch length"),
                         std::runtime_error);
    checkpoint_save("harness_no_arch.ckpt", m.named());
    CHECK_THROWS_WITH_AS(lm_load("harness_no_arch.ckpt"),
                         doctest::Contains("lacks the arch tensor"), std::runtime_error);
}

TEST_CASE("experiment config fills defaults per kind") {
    ExperimentConfig e = experiment_from_config(config_parse(
        "[experiment]\nkind = flops\nseeds = 1\n"));
    CHECK(e.kind == "flops");
    CHECK(e.seeds == std::vector<uint64_t>{1});
    CHECK(e.attacks.empty());
    CHECK(e.eval_with_shortcut);
    CHECK(e.tau == 6.0f);
    CHECK(e.taus == std::vector<double>{1, 2, 4, 6, 8, 10});
    CHECK(e.n_train == std::vector<int64_t>{1, 10, 20});
    CHECK(e.n_eval == 10);
    CHECK(e.layer == 2);
    CHECK_FALSE(e.measure_time);
    CHECK(e.opt.steps == 500);
    CHECK(e.opt.alpha0 == 0.01f);
    CHECK(e.gcg.candidates_per_token == 256);
    CHECK(e.loss.mode == TargetMode::sure_context);

    ExperimentConfig d = experiment_from_config(config_parse(
        "[experiment]\nkind = direct\nseeds = 1,2\n"));
    CHECK(d.attacks ==
          std::vector<std::string>{"none", "embed", "onehot", "gcg", "refusal-dir"});
    ExperimentConfig tr = experiment_from_config(config_parse(
        "[experiment]\nkind = transfer\nseeds = 1\n"));
    CHECK(tr.attacks == std::vector<std::string>{"onehot", "gcg", "refusal-dir"});
    ExperimentConfig ab = experiment_from_config(config_parse(
        "[experiment]\nkind = ablate-temperature\nseeds = 1\n"));
    CHECK(ab.attacks == std::vector<std::string>{"onehot"});

    ExperimentConfig o = experiment_from_config(config_parse(
        "[experiment]\n"
        "kind = direct\n"
        "seeds = 3\n"
        "attacks = none, gcg\n"
        "n_eval = 2\n"
        "tau = 2\n"
        "taus = 1,4\n"
        "n_train = 5\n"
        "layer = 1\n"
        "eval_with_shortcut = 0\n"
        "[attack]\n"
        "mode = sure\n"
        "steps = 12\n"
        "alpha0 = 0.02\n"
        "[gcg]\n"
        "steps = 4\n"
        "suffix_len = 3\n"));
    CHECK(o.attacks == std::vector<std::string>{"none", "gcg"});
    CHECK(o.n_eval == 2);
    CHECK(o.tau == 2.0f);
    CHECK(o.taus == std::vector<double>{1, 4});
    CHECK(o.n_train == std::vector<int64_t>{5});
    CHECK(o.layer == 1);
    CHECK_FALSE(o.eval_with_shortcut);
    CHECK(o.loss.mode == TargetMode::sure);
    CHECK(o.opt.steps == 12);
    CHECK(o.opt.alpha0 == 0.02f);
    CHECK(o.gcg.steps == 4);
    CHECK(o.gcg.suffix_len == 3);

    CHECK_THROWS_WITH_AS(
        experiment_from_config(config_parse("[experiment]\nkind = sideways\nseeds = 1\n")),
        doctest::Contains("unknown experiment kind"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        experiment_from_config(
            config_parse("[experiment]\nkind = direct\nseeds = 1\nattacks = laser\n")),
        doctest::Contains("unknown attack kind"), std::runtime_error);
    CHECK_THROWS(experiment_from_config(config_parse("[experiment]\nkind = direct\n")));
    CHECK_THROWS(
        experiment_from_config(config_parse("[experiment]\nkind = direct\nseeds = 1\nn_eval = 0\n")));
}

TEST_CASE("flops experiment lists every preset") {
    ExperimentConfig e = experiment_from_config(config_parse(
        "[experiment]\nkind = flops\nseeds = 1\nout = harness_flops.csv\n"));
    ResultsTable t = run_experiment(e);
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0].attack == "paper-image");
    CHECK(t.rows[0].flops_per_token == 409600);
    CHECK(t.rows[1].attack == "paper-gcg");
    CHECK(t.rows[1].flops_per_token == 1030000);
    CHECK(t.rows[2].attack == "toy-image");
    CHECK(t.rows[2].flops_per_token == 32000);
    CHECK(t.rows[3].attack == "toy-gcg");
    CHECK(t.rows[3].flops_per_token == 21440);
    std::string first = slurp("harness_flops.csv");
    run_experiment(e);
    CHECK(slurp("harness_flops.csv") == first);
}

TEST_CASE("direct experiment reruns byte-identically") {
    const Workspace &w = workspace();
    std::string text =
        "[experiment]\n"
        "kind = direct\n"
        "seeds = 5\n"
        "attacks = none, onehot\n"
        "n_eval = 2\n"
        "tau = 2\n"
        "out = harness_direct.csv\n"
        "[data]\ncorpus = " + w.corpus + "\n" +
        "[models]\nvqvae = " + w.vq + "\nlm = " + w.lm + "\nonehot_shortcut = " + w.onehot +
        "\n[attack]\nsteps = 2\n";
    ExperimentConfig e = experiment_from_config(config_parse(text));
    ResultsTable t = run_experiment(e);

    // 2 prompts for none, hard + shortcut rows per prompt for onehot
    REQUIRE(t.rows.size() == 6);
    CHECK(t.rows[0].attack == "none");
    CHECK(t.rows[0].train_prompts == 0);
    CHECK(t.rows[0].flops_per_token == 0);
    CHECK(t.rows[2].attack == "onehot");
    CHECK(t.rows[2].train_prompts == 1);
    CHECK(t.rows[2].flops_per_token == flop_cost({16, 2, 1, 1, 3}));
    CHECK(t.rows[3].attack == "onehot+shortcut");
    for (const ResultRow &r : t.rows) {
        CHECK(r.seed == 5);
        CHECK(r.wall_time_s == 0.0);
        CHECK(r.asr_pct >= 0.0);
        CHECK(r.rr_pct <= 100.0);
    }

    std::string first = slurp("harness_direct.csv");
    run_experiment(e);
    CHECK(slurp("harness_direct.csv") == first);
}

TEST_CASE("transfer experiment emits one row per training size") {
    const Workspace &w = workspace();
    std::string text =
        "[experiment]\n"
        "kind = transfer\n"
        "seeds = 5\n"
        "attacks = refusal-dir\n"
        "n_train = 1, 2\n"
        "n_eval = 2\n"
        "layer = 1\n"
        "out = harness_transfer.csv\n"
        "[data]\ncorpus = " + w.corpus + "\n" +
        "[models]\nvqvae = " + w.vq + "\nlm = " + w.lm + "\n";
    ExperimentConfig e = experiment_from_config(config_parse(text));
    ResultsTable t = run_experiment(e);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].attack == "refusal-dir");
    CHECK(t.rows[0].train_prompts == 1);
    CHECK(t.rows[1].train_prompts == 2);
    std::string first = slurp("harness_transfer.csv");
    run_experiment(e);
    CHECK(slurp("harness_transfer.csv") == first);
}

TEST_CASE("cross-model experiment compares self and cross evaluation") {
    const Workspace &w = workspace();
    std::string text =
        "[experiment]\n"
        "kind = cross-model\n"
        "seeds = 5\n"
        "n_train = 2\n"
        "n_eval = 2\n"
        "tau = 2\n"
        "[data]\ncorpus = " + w.corpus + "\n" +
        "[models]\nvqvae = " + w.vq + "\nlm = " + w.lm + "\nlm_b = " + w.lm_b +
        "\nonehot_shortcut = " + w.onehot + "\n[attack]\nsteps = 2\n";
    ExperimentConfig e = experiment_from_config(config_parse(text));
    ResultsTable t = run_experiment(e);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].attack == "none-cross");
    CHECK(t.rows[1].attack == "onehot-self");
    CHECK(t.rows[2].attack == "onehot-cross");
    CHECK(t.rows[1].train_prompts == 2);
}

TEST_CASE("report aggregates per-seed means with a range") {
    ResultsTable s1, s2;
    ResultRow r;
    r.attack = "onehot";
    r.train_prompts = 1;
    r.seed = 1;
    r.asr_pct = 40.0;
    r.rr_pct = 50.0;
    r.delta_ppl = 1.0;
    s1.rows.push_back(r);
    r.asr_pct = 60.0;
    s1.rows.push_back(r);
    r.seed = 2;
    r.asr_pct = 80.0;
    r.delta_ppl = 3.0;
    s2.rows.push_back(r);

    std::string rep = report_text({s1, s2});
    CHECK(rep.find("onehot") != std::string::npos);
    // seed 1 mean 50.0, seed 2 mean 80.0 -> mean 65.0, range 50..80
    CHECK(rep.find("65.0 (50.0..80.0)") != std::string::npos);
    CHECK(rep.find("2.000") != std::string::npos);

    std::string single = report_text({s1});
    CHECK(single.find("50.0") != std::string::npos);
    CHECK(single.find("..") == std::string::npos);
}
