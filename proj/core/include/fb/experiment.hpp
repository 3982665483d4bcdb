#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fb/attack.hpp"
#include "fb/config.hpp"
#include "fb/corpus.hpp"
#include "fb/model.hpp"
#include "fb/shortcut.hpp"
#include "fb/vqvae.hpp"

namespace fb {

// Attack cost in forward-token-operation units: one unit is one forward pass
// over one token; a backward pass counts bwd_ratio units.
struct CostModel {
    int64_t tokens = 16;
    int64_t steps = 500;
    int64_t fwd_per_step = 1;
    int64_t bwd_per_step = 1;
    int64_t bwd_ratio = 3;
};

int64_t flop_cost(const CostModel &c);
CostModel cost_preset(const std::string &name);
std::vector<std::string> cost_preset_names();

struct ResultRow {
    std::string attack;
    int train_prompts = 0;
    uint64_t seed = 0;
    double asr_pct = 0.0;
    double rr_pct = 0.0;
    double delta_ppl = 0.0;
    int64_t flops_per_token = 0;
    double wall_time_s = 0.0;
};

struct ResultsTable {
    std::vector<ResultRow> rows;
};

// Exact fraction -> percentage with half-up rounding to one decimal.
double percent_1dp(double fraction);

std::string results_csv(const ResultsTable &t);
void results_save(const std::string &path, const ResultsTable &t);
ResultsTable results_load(const std::string &path);

// Model checkpoints carry their architecture in an extra "arch" tensor, so a
// load needs no side channel.
void lm_save(const std::string &path, const FusionModel &m);
FusionModel lm_load(const std::string &path);
void vq_save(const std::string &path, const VqVae &vq);
VqVae vq_load(const std::string &path);
void embed_shortcut_save(const std::string &path, const EmbeddingShortcut &s);
EmbeddingShortcut embed_shortcut_load(const std::string &path);
void onehot_shortcut_save(const std::string &path, const OneHotShortcut &s);
OneHotShortcut onehot_shortcut_load(const std::string &path);

struct ExperimentConfig {
    // direct | transfer | ablate-temperature | ablate-target | flops | cross-model
    std::string kind;
    std::vector<uint64_t> seeds;
    std::string corpus_path;
    std::string vq_ckpt;
    std::string lm_ckpt;
    std::string lm_b_ckpt;  // cross-model victim
    std::string embed_ckpt;
    std::string onehot_ckpt;
    std::string out_csv;

    std::vector<std::string> attacks;  // subset of none, embed, onehot, gcg, refusal-dir
    bool eval_with_shortcut = true;    // also emit +shortcut rows for image attacks
    float tau = 6.0f;
    std::vector<double> taus = {1, 2, 4, 6, 8, 10};
    std::vector<int64_t> n_train = {1, 10, 20};
    int n_eval = 10;  // cap on evaluated test prompts
    int layer = 2;    // residual stream tap for the refusal direction

    LossConfig loss;
    OptConfig opt;
    GcgConfig gcg;

    // Off by default so reruns stay byte-identical; on, rows carry measured
    // wall time.
    bool measure_time = false;
};

ExperimentConfig experiment_from_config(const ConfigFile &f);

// Benign synthetic image of a seed-chosen class, the standard attack start.
Tensor attack_init_image(uint64_t seed, uint64_t salt);

// Runs the declared protocol over all seeds; writes out_csv atomically when
// set. Deterministic given (config, checkpoints) unless measure_time is on.
ResultsTable run_experiment(const ExperimentConfig &cfg);

// Per-(attack, train_prompts) aggregation across seeds: mean and min..max
// range of the per-seed means.
std::string report_text(const std::vector<ResultsTable> &tables);

}  // namespace fb
