#include "fb/synth.hpp"

#include <cmath>

#include "fb/nn.hpp"
#include "fb/rng.hpp"

namespace fb {

namespace {

void hsv_to_rgb(float h, float s, float v, float rgb[3]) {
    h = h - std::floor(h);
    float c = v * s;
    float hp = h * 6.0f;
    float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    float m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

}  // namespace

Tensor synth_image(int cls, uint64_t seed, const SynthConfig &cfg) {
    require(cls >= -1 && cls < cfg.classes, "synth_image: class out of range");
    Tensor img({cfg.height, cfg.width, cfg.channels});
    auto rng = make_rng(seed, "synth-image", static_cast<uint64_t>(cls + 1));
    std::uniform_real_distribution<float> jitter(-cfg.noise, cfg.noise);
    if (cls < 0) {
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (auto &v : img.data) v = u(rng);
        return img;
    }
    // Class look: a hue from the golden-angle wheel, a secondary hue, and one
    // of four layouts chosen by the class index.
    float base[3], alt[3];
    hsv_to_rgb(0.618034f * static_cast<float>(cls), 0.85f, 0.95f, base);
    hsv_to_rgb(0.618034f * static_cast<float>(cls) + 0.43f, 0.7f, 0.55f, alt);
    int layout = cls % 4;
    float freq = 2.0f + static_cast<float>(cls / 4);
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            float fy = (static_cast<float>(y) + 0.5f) / cfg.height;
            float fx = (static_cast<float>(x) + 0.5f) / cfg.width;
            float t;
            switch (layout) {
                case 0:
                    t = fx;
                    break;
                case 1:
                    t = 0.5f + 0.5f * std::sin(freq * 6.2831853f * fy);
                    break;
                case 2: {
                    float dx = fx - 0.5f, dy = fy - 0.5f;
                    t = std::sqrt(dx * dx + dy * dy) * freq < 1.0f ? 1.0f : 0.0f;
                    break;
                }
                default:
                    t = (static_cast<int>(fx * freq) + static_cast<int>(fy * freq)) % 2 == 0
                            ? 1.0f
                            : 0.0f;
                    break;
            }
            for (int c = 0; c < cfg.channels; ++c) {
                float v = alt[c % 3] + (base[c % 3] - alt[c % 3]) * t + jitter(rng);
                img.at(y, x, c) = clamp01(v);
            }
        }
    }
    return img;
}

std::vector<Tensor> synth_dataset(int per_class, uint64_t seed, const SynthConfig &cfg) {
    require(per_class > 0, "synth_dataset: per_class must be positive");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(cfg.classes) * per_class);
    for (int cls = 0; cls < cfg.classes; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            out.push_back(synth_image(cls, derive_seed(seed, "synth-item", static_cast<uint64_t>(cls * 10007 + i)), cfg));
        }
    }
    return out;
}

}  // namespace fb
