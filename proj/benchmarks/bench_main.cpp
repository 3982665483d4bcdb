#include <benchmark/benchmark.h>

#include "fb/attack.hpp"
#include "fb/experiment.hpp"
#include "fb/nn.hpp"
#include "fb/rng.hpp"
#include "fb/synth.hpp"

using namespace fb;

namespace {

const FusionModel &bench_model() {
    static FusionModel m = [] {
        LmConfig cfg;
        return lm_init(cfg, 1234);
    }();
    return m;
}

const VqVae &bench_vq() {
    static VqVae vq = vqvae_init(VqConfig{}, 1234);
    return vq;
}

const OneHotShortcut &bench_shortcut() {
    static OneHotShortcut s = onehot_shortcut_init(16, 64, 64, 1234);
    return s;
}

PromptSpec bench_prompt() {
    PromptSpec p;
    p.text = {tok::bos, tok::harm, filler_token(0), topic_token(3), filler_token(1), tok::ask};
    p.image_pos = 5;
    p.sure_prefix = {tok::sure};
    p.sure_context_prefix = {tok::sure, topic_token(3), payload_token(3)};
    p.refusal_prefix = {tok::refuse, tok::never, tok::policy};
    p.topic = 3;
    p.payload = payload_token(3);
    p.harmful = true;
    return p;
}

void bm_matmul_128(benchmark::State &state) {
    auto rng = make_rng(1, "bench-matmul");
    Tensor a = Tensor::randn({128, 128}, rng);
    Tensor b = Tensor::randn({128, 128}, rng);
    Tensor out({128, 128});
    for (auto _ : state) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        matmul_acc(a.data.data(), b.data.data(), out.data.data(), 128, 128, 128);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(bm_matmul_128);

void bm_vq_encode_quantize(benchmark::State &state) {
    const VqVae &vq = bench_vq();
    Tensor img = synth_image(3, 42);
    for (auto _ : state) {
        std::vector<int> codes = vq_quantize(vq_encode(vq, img), vq.codebook);
        benchmark::DoNotOptimize(codes.data());
    }
}
BENCHMARK(bm_vq_encode_quantize);

void bm_lm_logits(benchmark::State &state) {
    const FusionModel &m = bench_model();
    std::vector<int> prompt = prompt_with_image(bench_prompt(), image_tokens_for(bench_vq(), 3, 42));
    for (auto _ : state) {
        Tensor logits = lm_logits(m, prompt);
        benchmark::DoNotOptimize(logits.data.data());
    }
}
BENCHMARK(bm_lm_logits);

void bm_attack_loss_grad(benchmark::State &state) {
    const FusionModel &m = bench_model();
    const VqVae &vq = bench_vq();
    ShortcutPath path = onehot_path(bench_shortcut(), 6.0f);
    LossConfig loss;
    loss.mode = TargetMode::sure_context;
    Tensor img = synth_image(3, 42);
    Tensor grad;
    for (auto _ : state) {
        double l = attack_loss_grad(m, vq, path, {bench_prompt()}, loss, img, &grad);
        benchmark::DoNotOptimize(l);
        benchmark::DoNotOptimize(grad.data.data());
    }
}
BENCHMARK(bm_attack_loss_grad);

void bm_generate(benchmark::State &state) {
    const FusionModel &m = bench_model();
    std::vector<int> prompt = prompt_with_image(bench_prompt(), image_tokens_for(bench_vq(), 3, 42));
    for (auto _ : state) {
        std::vector<int> out = sample(m, prompt, 0.0f, 7, m.cfg.max_gen);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(bm_generate);

}  // namespace

BENCHMARK_MAIN();
