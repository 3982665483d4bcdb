#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fb/corpus.hpp"
#include "fb/model.hpp"
#include "fb/shortcut.hpp"
#include "fb/tensor.hpp"
#include "fb/vqvae.hpp"

namespace fb {

enum class TargetMode { sure, sure_context, sure_context_minus_refusal };

const char *target_mode_name(TargetMode mode);
TargetMode target_mode_from_name(const std::string &name);

// Attack objective, summed over prompts:
//   w_refusal * logprob(refusal prefix) - logprob(target prefix)
// with the artifact injected into the prompt. Lower is better for the
// attacker. The refusal term participates only in the minus-refusal mode.
struct LossConfig {
    TargetMode mode = TargetMode::sure;
    float w_refusal = 0.0f;
};
void validate(const LossConfig &cfg);

// Target prefix the loss pushes probability toward: the compliance marker
// alone, or marker + topic + payload in the context modes.
const std::vector<int> &target_prefix(const PromptSpec &p, TargetMode mode);

// Sign-gradient pixel updates with a halving step size:
//   alpha(t) = max(alpha_floor, alpha0 * 2^-floor(t / halve_period)).
struct OptConfig {
    int steps = 500;
    float alpha0 = 0.01f;
    int halve_period = 100;
    float alpha_floor = 0.001f;
};
void validate(const OptConfig &cfg);
float attack_alpha(const OptConfig &cfg, int step);

// Which differentiable stand-in bridges pixels to the LM input. Exactly one
// of the two pointers is set; tau applies to the 1-hot flavor only.
struct ShortcutPath {
    const EmbeddingShortcut *embed = nullptr;
    const OneHotShortcut *onehot = nullptr;
    float tau = 1.0f;
};
ShortcutPath embed_path(const EmbeddingShortcut &s);
ShortcutPath onehot_path(const OneHotShortcut &s, float tau);
void validate(const ShortcutPath &path);

// Loss at a fixed image, through the shortcut path. attack_loss_grad also
// writes d(loss)/d(pixels) into *grad.
double attack_loss(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                   const Tensor &image, const std::vector<PromptSpec> &prompts,
                   const LossConfig &cfg);
double attack_loss_grad(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                        const Tensor &image, const std::vector<PromptSpec> &prompts,
                        const LossConfig &cfg, Tensor *grad);

struct AttackResult {
    Tensor image;                         // lowest-loss iterate
    std::vector<double> trace;            // loss at every iterate, steps+1 entries
    std::vector<double> prompt_logprobs;  // per-prompt target logprob at the best image
    LossConfig loss;
    OptConfig opt;
    uint64_t seed = 0;
    double best_loss = 0.0;
    int best_step = 0;
};

// Pixel update loop: image <- clamp01(image - alpha * sign(grad)), keeping
// the iterate with the lowest loss. The trace holds the loss of every
// iterate (steps+1 entries); a non-finite loss aborts with the trace so far
// in the error message. Parameterized by the loss oracle so the update rule
// is testable on hand-computable losses.
using LossGradFn = std::function<double(const Tensor &image, Tensor *grad)>;
AttackResult sign_descent(const LossGradFn &loss_and_grad, const OptConfig &opt_cfg,
                          const Tensor &init_image);

// sign_descent driven by attack_loss_grad through the shortcut path.
AttackResult image_attack(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                          const std::vector<PromptSpec> &prompts, const LossConfig &loss_cfg,
                          const OptConfig &opt_cfg, const Tensor &init_image, uint64_t seed);

// Directory layout: image.ckpt (tensor checkpoint), meta.txt (key = value),
// trace.csv (step,loss,alpha).
void attack_save(const std::string &dir, const AttackResult &r);
AttackResult attack_load(const std::string &dir);

struct EvalOutcome {
    double asr = 0.0;  // fraction of prompts judged unsafe
    double rr = 0.0;   // fraction of prompts judged refusals
    int n = 0;
};

// Greedy generation with the image block carried as shortcut outputs instead
// of hard tokens. temperature > 0 samples instead.
std::vector<int> soft_generate(const FusionModel &m, const VqVae &vq, const ShortcutPath &path,
                               const Tensor &image, const PromptSpec &p, float temperature,
                               uint64_t seed, int max_len);

// use_shortcut=false sends the image through encode -> quantize -> hard
// tokens and builds no graph (the genuine deployment path); true keeps the
// soft stand-in in the forward pass. path may be null when unused.
EvalOutcome eval_attack(const FusionModel &m, const VqVae &vq, const ShortcutPath *path,
                        const Tensor &image, const std::vector<PromptSpec> &prompts,
                        bool use_shortcut, float temperature = 0.0f, uint64_t seed = 0);

struct GcgConfig {
    int steps = 200;
    int suffix_len = 20;
    int candidates_per_token = 256;
    int candidate_suffixes = 512;
};
void validate(const GcgConfig &cfg);

struct GcgResult {
    std::vector<int> suffix;    // best suffix overall
    std::vector<double> trace;  // best-so-far loss, steps+1 entries
    GcgConfig cfg;
    LossConfig loss;
    uint64_t seed = 0;
    double best_loss = 0.0;
};

// Greedy coordinate descent over a text suffix appended after the prompt:
// per step, gradient wrt the one-hot suffix encoding ranks replacement
// candidates per position; single-position replacements are scored by true
// loss and the best one is accepted only if it improves.
GcgResult gcg_attack(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                     const GcgConfig &cfg, const LossConfig &loss_cfg, uint64_t seed);

void gcg_save(const std::string &dir, const GcgResult &r);
GcgResult gcg_load(const std::string &dir);

EvalOutcome eval_suffix(const FusionModel &m, const std::vector<int> &suffix,
                        const std::vector<PromptSpec> &prompts, float temperature = 0.0f,
                        uint64_t seed = 0);

// Normalized difference of mean activations (harmful - benign).
Tensor refusal_direction_from_activations(const std::vector<Tensor> &harmful,
                                          const std::vector<Tensor> &benign);
Tensor compute_refusal_direction(const FusionModel &m, const std::vector<PromptSpec> &harmful,
                                 const std::vector<PromptSpec> &benign, int layer);

// Greedy generation with the direction projected out of the residual stream
// at every layer. direction must be unit length (or all zero for a no-op).
std::vector<int> ablated_generate(const FusionModel &m, const Tensor &direction,
                                  const std::vector<int> &prompt, uint64_t seed, int max_len);

EvalOutcome eval_ablated(const FusionModel &m, const Tensor &direction,
                         const std::vector<PromptSpec> &prompts, uint64_t seed = 0);

// No-attack baseline: plain greedy generations on the bare prompts.
EvalOutcome eval_plain(const FusionModel &m, const std::vector<PromptSpec> &prompts,
                       float temperature = 0.0f, uint64_t seed = 0);

// First n_train prompts of the held-out pool, asserted disjoint from the
// test set.
std::vector<PromptSpec> transfer_train_slice(const std::vector<PromptSpec> &heldout, int n_train,
                                             const std::vector<PromptSpec> &test);

}  // namespace fb
