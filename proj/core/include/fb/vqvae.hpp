#pragma once

#include <cstdint>
#include <vector>

#include "fb/autodiff.hpp"
#include "fb/checkpoint.hpp"
#include "fb/tensor.hpp"

namespace fb {

struct VqConfig {
    int image_h = 32;
    int image_w = 32;
    int channels = 3;
    int grid = 4;      // G: latent cells per side
    int d_latent = 16;
    int codes = 64;    // K
    int enc_hidden = 24;
    int dec_hidden = 64;
    float beta_commit = 0.25f;
    int epochs = 30;
    float lr = 2e-3f;
    float heldout_mse_gate = 0.02f;

    int cells() const { return grid * grid; }
    int patch() const { return (image_h / grid) * (image_w / grid) * channels; }
};

// Latents are handled as (cells, d_latent) row-major matrices, cell order
// (gy*G + gx). Token grids are flat vectors in the same cell order.
struct VqVae {
    VqConfig cfg;
    Tensor enc_w1, enc_b1;  // conv (4,4,C,enc_hidden), stride 4
    Tensor enc_w2, enc_b2;  // conv (2,2,enc_hidden,d_latent), stride 2
    Tensor dec_w1, dec_b1;  // per-cell (d_latent, dec_hidden)
    Tensor dec_w2, dec_b2;  // per-cell (dec_hidden, patch)
    Tensor codebook;        // (codes, d_latent)

    std::vector<Tensor *> params();
    TensorMap named() const;
};

VqVae vqvae_init(const VqConfig &cfg, uint64_t seed);
VqVae vqvae_from_named(const VqConfig &cfg, const TensorMap &named);

// Pixels -> pre-quantization latents z_e.
Tensor vq_encode(const VqVae &vq, const Tensor &image);
ad::Var vq_encode_graph(ad::Graph &g, const VqVae &vq, ad::Var image);

// Nearest codeword per cell by Euclidean distance (double accumulation), ties
// to the lowest index. Deliberately not differentiable.
std::vector<int> vq_quantize(const Tensor &latents, const Tensor &codebook);

// Codeword rows for a token grid.
Tensor vq_tokens_to_latents(const Tensor &codebook, const std::vector<int> &tokens);

// Latents (quantized or not) -> image in [0,1].
Tensor vq_decode(const VqVae &vq, const Tensor &latents);

// Straight-through surrogate: value equals z_q, gradient passes to z_e.
ad::Var vq_ste(ad::Graph &g, ad::Var z_e, const Tensor &z_q);

// (H,W,C) image <-> (cells, patch) per-cell pixel blocks.
Tensor image_to_patches(const Tensor &image, const VqConfig &cfg);
Tensor patches_to_image(const Tensor &patches, const VqConfig &cfg);

// Standard VQ-VAE objective: reconstruction + codebook + beta * commitment,
// straight-through gradient through the quantizer. Holds out every 8th image
// and requires held-out reconstruction MSE under cfg.heldout_mse_gate.
VqVae train_vqvae(const std::vector<Tensor> &images, const VqConfig &cfg, uint64_t seed);

double vq_reconstruction_mse(const VqVae &vq, const Tensor &image);

}  // namespace fb
