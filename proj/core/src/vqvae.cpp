#include "fb/vqvae.hpp"

#include <algorithm>
#include <cmath>

#include "fb/nn.hpp"
#include "fb/optim.hpp"
#include "fb/rng.hpp"

namespace fb {

std::vector<Tensor *> VqVae::params() {
    return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2, &codebook};
}

TensorMap VqVae::named() const {
    return {{"enc.w1", enc_w1}, {"enc.b1", enc_b1}, {"enc.w2", enc_w2}, {"enc.b2", enc_b2},
            {"dec.w1", dec_w1}, {"dec.b1", dec_b1}, {"dec.w2", dec_w2}, {"dec.b2", dec_b2},
            {"codebook", codebook}};
}

static Tensor he_init(std::vector<int> shape, int fan_in, std::mt19937 &rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0f / static_cast<float>(fan_in)));
}

VqVae vqvae_init(const VqConfig &cfg, uint64_t seed) {
    require(cfg.image_h % cfg.grid == 0 && cfg.image_w % cfg.grid == 0,
            "vqvae: image size must be divisible by grid");
    require(cfg.codes >= 2, "vqvae: need at least 2 codes");
    int s1 = cfg.image_h / cfg.grid / 2;  // first conv stride; second conv halves again
    require(s1 >= 1 && cfg.image_h / cfg.grid == s1 * 2, "vqvae: unsupported grid ratio");
    auto rng = make_rng(seed, "vqvae-init");
    VqVae vq;
    vq.cfg = cfg;
    vq.enc_w1 = he_init({s1, s1, cfg.channels, cfg.enc_hidden}, s1 * s1 * cfg.channels, rng);
    vq.enc_b1 = Tensor::zeros({cfg.enc_hidden});
    vq.enc_w2 = he_init({2, 2, cfg.enc_hidden, cfg.d_latent}, 4 * cfg.enc_hidden, rng);
    vq.enc_b2 = Tensor::zeros({cfg.d_latent});
    vq.dec_w1 = he_init({cfg.d_latent, cfg.dec_hidden}, cfg.d_latent, rng);
    vq.dec_b1 = Tensor::zeros({cfg.dec_hidden});
    vq.dec_w2 = he_init({cfg.dec_hidden, cfg.patch()}, cfg.dec_hidden, rng);
    vq.dec_b2 = Tensor::zeros({cfg.patch()});
    vq.codebook = Tensor::randn({cfg.codes, cfg.d_latent}, rng, 1.0f);
    return vq;
}

VqVae vqvae_from_named(const VqConfig &cfg, const TensorMap &named) {
    VqVae vq = vqvae_init(cfg, 0);
    for (auto &[name, dst] : std::vector<std::pair<const char *, Tensor *>>{
             {"enc.w1", &vq.enc_w1}, {"enc.b1", &vq.enc_b1}, {"enc.w2", &vq.enc_w2},
             {"enc.b2", &vq.enc_b2}, {"dec.w1", &vq.dec_w1}, {"dec.b1", &vq.dec_b1},
             {"dec.w2", &vq.dec_w2}, {"dec.b2", &vq.dec_b2}, {"codebook", &vq.codebook}}) {
        auto it = named.find(name);
        require(it != named.end(), std::string("vqvae checkpoint missing ") + name);
        require(it->second.same_shape(*dst),
                std::string("vqvae checkpoint shape mismatch for ") + name);
        *dst = it->second;
    }
    return vq;
}

static void check_image(const VqVae &vq, const Tensor &image) {
    require(image.rank() == 3 && image.shape[0] == vq.cfg.image_h &&
                image.shape[1] == vq.cfg.image_w && image.shape[2] == vq.cfg.channels,
            "vqvae: image shape " + image.shape_str() + " does not match config");
}

Tensor vq_encode(const VqVae &vq, const Tensor &image) {
    check_image(vq, image);
    int s1 = vq.enc_w1.shape[0];
    Tensor h1;
    conv2d_fwd(image, vq.enc_w1, vq.enc_b1, s1, 0, h1);
    for (auto &v : h1.data) v = v > 0.0f ? v : 0.0f;
    Tensor h2;
    conv2d_fwd(h1, vq.enc_w2, vq.enc_b2, 2, 0, h2);
    Tensor out({vq.cfg.cells(), vq.cfg.d_latent});
    out.data = h2.data;
    return out;
}

ad::Var vq_encode_graph(ad::Graph &g, const VqVae &vq, ad::Var image) {
    int s1 = vq.enc_w1.shape[0];
    ad::Var h1 = g.relu(g.conv2d(image, g.constant(vq.enc_w1), g.constant(vq.enc_b1), s1, 0));
    ad::Var h2 = g.conv2d(h1, g.constant(vq.enc_w2), g.constant(vq.enc_b2), 2, 0);
    return g.reshape(h2, {vq.cfg.cells(), vq.cfg.d_latent});
}

std::vector<int> vq_quantize(const Tensor &latents, const Tensor &codebook) {
    require(latents.rank() == 2 && codebook.rank() == 2 && latents.shape[1] == codebook.shape[1],
            "vq_quantize: latent dim " + latents.shape_str() + " vs codebook " +
                codebook.shape_str());
    int n = latents.shape[0], d = latents.shape[1], k = codebook.shape[0];
    std::vector<int> tokens(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float *row = &latents.data[static_cast<size_t>(i) * d];
        double best = 0.0;
        int best_j = -1;
        for (int j = 0; j < k; ++j) {
            const float *code = &codebook.data[static_cast<size_t>(j) * d];
            double dist = 0.0;
            for (int p = 0; p < d; ++p) {
                double diff = static_cast<double>(row[p]) - code[p];
                dist += diff * diff;
            }
            if (best_j < 0 || dist < best) {
                best = dist;
                best_j = j;
            }
        }
        tokens[static_cast<size_t>(i)] = best_j;
    }
    return tokens;
}

Tensor vq_tokens_to_latents(const Tensor &codebook, const std::vector<int> &tokens) {
    int d = codebook.shape[1];
    Tensor out({static_cast<int>(tokens.size()), d});
    for (size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] >= 0 && tokens[i] < codebook.shape[0], "token id out of codebook range");
        std::copy_n(&codebook.data[static_cast<size_t>(tokens[i]) * d], d,
                    &out.data[i * static_cast<size_t>(d)]);
    }
    return out;
}

Tensor vq_decode(const VqVae &vq, const Tensor &latents) {
    require(latents.rank() == 2 && latents.shape[0] == vq.cfg.cells() &&
                latents.shape[1] == vq.cfg.d_latent,
            "vq_decode: latents shape " + latents.shape_str());
    int cells = vq.cfg.cells(), hid = vq.cfg.dec_hidden, patch = vq.cfg.patch();
    Tensor h(std::vector<int>{cells, hid});
    for (int i = 0; i < cells; ++i) {
        std::copy_n(vq.dec_b1.data.data(), hid, &h.data[static_cast<size_t>(i) * hid]);
    }
    matmul_acc(latents.data.data(), vq.dec_w1.data.data(), h.data.data(), cells, vq.cfg.d_latent,
               hid);
    for (auto &v : h.data) v = v > 0.0f ? v : 0.0f;
    Tensor p(std::vector<int>{cells, patch});
    for (int i = 0; i < cells; ++i) {
        std::copy_n(vq.dec_b2.data.data(), patch, &p.data[static_cast<size_t>(i) * patch]);
    }
    matmul_acc(h.data.data(), vq.dec_w2.data.data(), p.data.data(), cells, hid, patch);
    for (auto &v : p.data) v = sigmoid1(v);
    return patches_to_image(p, vq.cfg);
}

ad::Var vq_ste(ad::Graph &g, ad::Var z_e, const Tensor &z_q) {
    return g.swap_forward(z_e, z_q);
}

Tensor image_to_patches(const Tensor &image, const VqConfig &cfg) {
    int ph = cfg.image_h / cfg.grid, pw = cfg.image_w / cfg.grid, c = cfg.channels;
    Tensor out({cfg.cells(), cfg.patch()});
    for (int gy = 0; gy < cfg.grid; ++gy) {
        for (int gx = 0; gx < cfg.grid; ++gx) {
            float *dst = &out.data[static_cast<size_t>(gy * cfg.grid + gx) * cfg.patch()];
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) {
                    for (int ch = 0; ch < c; ++ch) {
                        dst[(y * pw + x) * c + ch] = image.at(gy * ph + y, gx * pw + x, ch);
                    }
                }
            }
        }
    }
    return out;
}

Tensor patches_to_image(const Tensor &patches, const VqConfig &cfg) {
    int ph = cfg.image_h / cfg.grid, pw = cfg.image_w / cfg.grid, c = cfg.channels;
    Tensor out({cfg.image_h, cfg.image_w, cfg.channels});
    for (int gy = 0; gy < cfg.grid; ++gy) {
        for (int gx = 0; gx < cfg.grid; ++gx) {
            const float *src = &patches.data[static_cast<size_t>(gy * cfg.grid + gx) * cfg.patch()];
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) {
                    for (int ch = 0; ch < c; ++ch) {
                        out.at(gy * ph + y, gx * pw + x, ch) = src[(y * pw + x) * c + ch];
                    }
                }
            }
        }
    }
    return out;
}

double vq_reconstruction_mse(const VqVae &vq, const Tensor &image) {
    Tensor z_e = vq_encode(vq, image);
    auto tokens = vq_quantize(z_e, vq.codebook);
    Tensor recon = vq_decode(vq, vq_tokens_to_latents(vq.codebook, tokens));
    double acc = 0.0;
    for (int64_t i = 0; i < image.numel(); ++i) {
        double d = static_cast<double>(recon.data[i]) - image.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(image.numel());
}

VqVae train_vqvae(const std::vector<Tensor> &images, const VqConfig &cfg, uint64_t seed) {
    require(images.size() >= 64, "train_vqvae: need at least 64 images");
    VqVae vq = vqvae_init(cfg, seed);
    for (const Tensor &img : images) check_image(vq, img);

    std::vector<size_t> train_idx, held_idx;
    for (size_t i = 0; i < images.size(); ++i) {
        (i % 8 == 7 ? held_idx : train_idx).push_back(i);
    }

    // Seed the codebook from actual encoder outputs so most codes start alive.
    {
        auto rng = make_rng(seed, "vqvae-codebook");
        std::vector<Tensor> pool;
        for (size_t i = 0; i < train_idx.size() && i < 64; ++i) {
            pool.push_back(vq_encode(vq, images[train_idx[i]]));
        }
        std::uniform_int_distribution<size_t> pick_img(0, pool.size() - 1);
        std::uniform_int_distribution<int> pick_cell(0, cfg.cells() - 1);
        for (int j = 0; j < cfg.codes; ++j) {
            const Tensor &lat = pool[pick_img(rng)];
            int cell = pick_cell(rng);
            std::copy_n(&lat.data[static_cast<size_t>(cell) * cfg.d_latent], cfg.d_latent,
                        &vq.codebook.data[static_cast<size_t>(j) * cfg.d_latent]);
        }
    }

    Adam opt(vq.params(), cfg.lr);
    auto shuffle_rng = make_rng(seed, "vqvae-shuffle");
    std::vector<size_t> order = train_idx;
    Tensor reservoir;  // recent latents for reviving dead codes

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::vector<int64_t> usage(static_cast<size_t>(cfg.codes), 0);
        for (size_t idx : order) {
            const Tensor &img = images[idx];
            ad::Graph g;
            for (Tensor *p : vq.params()) p->requires_grad = true;
            std::vector<ad::Var> pvars;
            for (Tensor *p : vq.params()) pvars.push_back(g.leaf(*p));
            ad::Var img_v = g.constant(img);
            int s1 = vq.enc_w1.shape[0];
            ad::Var h1 = g.relu(g.conv2d(img_v, pvars[0], pvars[1], s1, 0));
            ad::Var z_e = g.reshape(g.conv2d(h1, pvars[2], pvars[3], 2, 0),
                                    {cfg.cells(), cfg.d_latent});
            const Tensor &z_e_val = g.value(z_e);
            auto tokens = vq_quantize(z_e_val, vq.codebook);
            for (int t : tokens) ++usage[static_cast<size_t>(t)];
            ad::Var z_q = g.embed_rows(pvars[8], tokens);
            ad::Var dec_in = vq_ste(g, z_e, g.value(z_q));
            ad::Var h = g.relu(g.add_bias(g.matmul(dec_in, pvars[4]), pvars[5]));
            ad::Var recon = g.sigmoid(g.add_bias(g.matmul(h, pvars[6]), pvars[7]));
            Tensor target = image_to_patches(img, cfg);
            ad::Var err = g.sub(recon, g.constant(target));
            ad::Var recon_mse = g.reduce_mean(g.mul(err, err));
            ad::Var code_err = g.sub(g.constant(z_e_val), z_q);
            ad::Var code_mse = g.reduce_mean(g.mul(code_err, code_err));
            ad::Var commit_err = g.sub(z_e, g.constant(g.value(z_q)));
            ad::Var commit_mse = g.reduce_mean(g.mul(commit_err, commit_err));
            ad::Var loss =
                g.add(recon_mse, g.add(code_mse, g.scale(commit_mse, cfg.beta_commit)));
            g.backward(loss);
            std::vector<Tensor> grads;
            for (ad::Var v : pvars) grads.push_back(g.grad(v));
            opt.step(grads);
            reservoir = z_e_val;
        }
        // Revive codes unused for a whole epoch with a recent latent.
        auto revive_rng = make_rng(seed, "vqvae-revive", static_cast<uint64_t>(epoch));
        std::uniform_int_distribution<int> pick_cell(0, cfg.cells() - 1);
        std::normal_distribution<float> jitter(0.0f, 0.01f);
        for (int j = 0; j < cfg.codes; ++j) {
            if (usage[static_cast<size_t>(j)] > 0 || reservoir.numel() == 0) continue;
            int cell = pick_cell(revive_rng);
            for (int p = 0; p < cfg.d_latent; ++p) {
                vq.codebook.at(j, p) =
                    reservoir.at(cell, p) + jitter(revive_rng);
            }
        }
    }
    for (Tensor *p : vq.params()) p->requires_grad = false;

    double held_mse = 0.0;
    for (size_t idx : held_idx) held_mse += vq_reconstruction_mse(vq, images[idx]);
    held_mse /= static_cast<double>(held_idx.size());
    require(held_mse < cfg.heldout_mse_gate,
            "train_vqvae: held-out reconstruction MSE " + std::to_string(held_mse) +
                " above gate " + std::to_string(cfg.heldout_mse_gate));
    return vq;
}

}  // namespace fb
