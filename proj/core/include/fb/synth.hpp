#pragma once

#include <cstdint>
#include <vector>

#include "fb/tensor.hpp"

namespace fb {

struct SynthConfig {
    int height = 32;
    int width = 32;
    int channels = 3;
    int classes = 20;
    float noise = 0.04f;
};

// One procedural image for a topic class (or pure noise for cls = -1), pixels
// in [0,1], shape (H,W,C). Deterministic in (cls, seed).
Tensor synth_image(int cls, uint64_t seed, const SynthConfig &cfg = {});

// classes × per_class images in class-major order, each with its own derived
// seed. Class of index i is i / per_class.
std::vector<Tensor> synth_dataset(int per_class, uint64_t seed, const SynthConfig &cfg = {});

}  // namespace fb
