#pragma once

#include <cstdint>
#include <vector>

#include "fb/autodiff.hpp"
#include "fb/checkpoint.hpp"
#include "fb/corpus.hpp"
#include "fb/tensor.hpp"
#include "fb/vocab.hpp"
#include "fb/vqvae.hpp"

namespace fb {

struct LmConfig {
    int vocab = k_vocab;
    int d_model = 128;
    int layers = 4;
    int heads = 4;
    int context = 128;
    int d_ff = 256;
    int pretrain_epochs = 10;
    int safety_epochs = 8;
    int batch = 16;
    float pretrain_lr = 3e-4f;
    float safety_lr = 1e-4f;
    float refusal_gate = 0.95f;
    float benign_gate = 0.90f;
    int max_gen = 5;
    int head_dim() const { return d_model / heads; }
};

struct LmBlock {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;  // (d, d)
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;  // (d, ff), (ff)
    Tensor w2, b2;  // (ff, d), (d)
};

// Decoder-only causal transformer over the joint text+image vocabulary.
struct FusionModel {
    LmConfig cfg;
    Tensor embed;  // (V, d)
    Tensor pos;    // (context, d)
    std::vector<LmBlock> blocks;
    Tensor lnf_g, lnf_b;
    Tensor head;  // (d, V)
    std::vector<Tensor *> params();
    TensorMap named() const;
};

FusionModel lm_init(const LmConfig &cfg, uint64_t seed);
FusionModel lm_from_named(const LmConfig &cfg, const TensorMap &named);

// Model weights registered on a graph, either as trainable leaves or as
// constants (attack graphs differentiate inputs, not weights).
struct LmGraphWeights {
    ad::Var embed, pos;
    struct Block {
        ad::Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    ad::Var lnf_g, lnf_b, head;
    std::vector<ad::Var> all;  // same order as FusionModel::params()
};
LmGraphWeights lm_weights_on_graph(ad::Graph &g, FusionModel &m, bool trainable);
LmGraphWeights lm_constants_on_graph(ad::Graph &g, const FusionModel &m);

// x: (T, d_model) input embeddings before positions are added. Returns
// logits (T, V); position t attends only to positions <= t.
ad::Var lm_forward_graph(ad::Graph &g, const LmConfig &cfg, const LmGraphWeights &w, ad::Var x);

// Plain forward paths share the kernel loops with the graph ops, so a graph
// run and a plain run produce bitwise-identical logits.
struct ForwardHooks {
    const Tensor *ablate_direction = nullptr;  // unit (d); projected out of the
                                               // residual stream at the input and
                                               // after every block
    std::vector<Tensor> *block_out = nullptr;  // filled with last-position (d)
                                               // vectors, one per block
};
Tensor lm_logits(const FusionModel &m, const std::vector<int> &tokens);
Tensor lm_logits_hooked(const FusionModel &m, const std::vector<int> &tokens,
                        const ForwardHooks &hooks);

// Sum of log p(prefix[i] | prompt, prefix[<i]) in nats.
double prefix_logprob(const FusionModel &m, const std::vector<int> &prompt,
                      const std::vector<int> &prefix);

// temperature 0 samples greedily (lowest index on ties). Generation stops at
// <eos> or after max_len tokens; the prompt is not echoed.
std::vector<int> sample(const FusionModel &m, const std::vector<int> &prompt, float temperature,
                        uint64_t seed, int max_len);
std::vector<int> sample_hooked(const FusionModel &m, const std::vector<int> &prompt,
                               float temperature, uint64_t seed, int max_len,
                               const ForwardHooks &hooks);

// exp(-mean log p(token_t | tokens_<t)) over every position after the first,
// image tokens included.
double perplexity_per_token(const FusionModel &m, const std::vector<int> &tokens);

// Residual-stream vector after block `layer` at the last position.
Tensor activations(const FusionModel &m, const std::vector<int> &tokens, int layer);

std::vector<int> image_tokens_for(const VqVae &vq, int image_class, uint64_t image_seed);
std::vector<int> materialize_input(const LmExample &e, const VqVae &vq);

struct TrainReport {
    std::vector<double> pretrain_loss;  // per-epoch mean loss
    std::vector<double> safety_loss;
    double heldout_refusal_rate = 0.0;
    double benign_payload_rate = 0.0;
};

// Two-phase training: next-token pretraining on the compliance corpus, then
// safety tuning on the refusal corpus. Aborts if the trained model refuses
// fewer than cfg.refusal_gate of held-out harmful prompts or completes fewer
// than cfg.benign_gate of benign prompts with their payload.
FusionModel train_lm(const Corpus &corpus, const VqVae &vq, const LmConfig &cfg, uint64_t seed,
                     TrainReport *report = nullptr);

}  // namespace fb
