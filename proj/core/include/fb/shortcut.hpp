#pragma once

#include <cstdint>
#include <vector>

#include "fb/autodiff.hpp"
#include "fb/checkpoint.hpp"
#include "fb/model.hpp"
#include "fb/vqvae.hpp"

namespace fb {

struct ShortcutConfig {
    int hidden = 64;
    int embed_epochs = 600;  // cosine regression has a long convergence tail
    int onehot_epochs = 60;
    float lr = 3e-3f;
    float cosine_gate = 0.95f;
    float top1_gate = 0.90f;
};

// 2-layer relu net from pre-quantization latents straight to the LM embedding
// space, applied independently per grid cell.
struct EmbeddingShortcut {
    Tensor w1, b1;  // (d_latent, hidden), (hidden)
    Tensor w2, b2;  // (hidden, d_model), (d_model)

    std::vector<Tensor *> params();
    TensorMap named() const;
};

// 2-layer relu net from latents to logits over the image-token codes. tau
// reshapes the softmax at use time; training uses plain cross-entropy.
struct OneHotShortcut {
    float tau = 6.0f;
    Tensor w1, b1;  // (d_latent, hidden), (hidden)
    Tensor w2, b2;  // (hidden, codes), (codes)

    std::vector<Tensor *> params();
    TensorMap named() const;
};

EmbeddingShortcut embed_shortcut_init(int d_latent, int hidden, int d_model, uint64_t seed);
OneHotShortcut onehot_shortcut_init(int d_latent, int hidden, int codes, uint64_t seed);
EmbeddingShortcut embed_shortcut_from_named(const TensorMap &named);
OneHotShortcut onehot_shortcut_from_named(const TensorMap &named);

// (cells, d_latent) -> (cells, d_model).
ad::Var embed_shortcut_graph(ad::Graph &g, const EmbeddingShortcut &s, ad::Var latents);
Tensor forward_embed(const EmbeddingShortcut &s, const Tensor &latents);

// (cells, d_latent) -> (cells, codes). Logits carry no temperature; probs are
// softmax(logits / tau) per cell.
ad::Var onehot_logits_graph(ad::Graph &g, const OneHotShortcut &s, ad::Var latents);
ad::Var onehot_probs_graph(ad::Graph &g, const OneHotShortcut &s, ad::Var latents, float tau);
Tensor forward_onehot(const OneHotShortcut &s, const Tensor &latents, float tau);

// Fits the net to reproduce the embedding rows the LM would see for the true
// quantized tokens, by maximizing row cosine similarity. Holds out every 5th
// image for the gate and aborts below cfg.cosine_gate.
EmbeddingShortcut train_embedding_shortcut(const VqVae &vq, const FusionModel &m,
                                           const std::vector<Tensor> &images,
                                           const ShortcutConfig &cfg, uint64_t seed);

// Fits the net to predict the quantizer's code choice per cell by
// cross-entropy. Same holdout scheme; aborts below cfg.top1_gate top-1.
OneHotShortcut train_onehot_shortcut(const VqVae &vq, const std::vector<Tensor> &images,
                                     const ShortcutConfig &cfg, uint64_t seed);

struct FidelityReport {
    double mean_cosine = 0.0;    // embedding flavor
    double top1_accuracy = 0.0;  // 1-hot flavor
    double mean_entropy = 0.0;   // nats, 1-hot flavor at the given tau
    double min_entropy = 0.0;
    double max_entropy = 0.0;
    int cells = 0;
};

FidelityReport shortcut_fidelity(const EmbeddingShortcut &s, const VqVae &vq,
                                 const FusionModel &m, const std::vector<Tensor> &images);
FidelityReport shortcut_fidelity(const OneHotShortcut &s, const VqVae &vq,
                                 const std::vector<Tensor> &images, float tau);

}  // namespace fb
