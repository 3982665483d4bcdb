#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fb {

// A prompt with an optional image slot. `text` holds the full text token list
// (bos ... ask); when an image is attached, a <boi> img*cells <eoi> block is
// inserted at index `image_pos`.
struct PromptSpec {
    std::vector<int> text;
    int image_pos = -1;  // -1: prompt never takes an image
    std::vector<int> refusal_prefix;
    std::vector<int> sure_prefix;
    std::vector<int> sure_context_prefix;
    int topic = -1;
    int payload = -1;
    bool harmful = false;
};

std::vector<int> prompt_with_image(const PromptSpec &p, const std::vector<int> &image_tokens);
std::vector<int> prompt_without_image(const PromptSpec &p);

// One next-token training example. The image, when present, is specified by
// (class, seed) and materialized into tokens at training time so the corpus
// does not depend on a trained tokenizer. image_class -1 means a pure noise
// image.
struct LmExample {
    std::vector<int> input;
    int image_pos = -1;  // insertion index into input, -1: text only
    int image_class = -1;
    uint64_t image_seed = 0;
    std::vector<int> target;
};

struct CorpusConfig {
    int topics = 20;  // >= 10; one synthetic image class per topic
    int harmful_templates = 10;
    int benign_templates = 10;
    int heldout_harmful = 20;
    int test_harmful = 80;
    int describe_per_class = 6;
    bool image_after_text = true;
};

struct Corpus {
    CorpusConfig cfg;
    // Phase 1: every prompt answered, plus image-description tasks.
    std::vector<LmExample> pretrain;
    // Phase 2: harmful prompts answered with the refusal prefix, with benign
    // replay mixed in.
    std::vector<LmExample> safety;
    std::vector<PromptSpec> train_harmful;
    std::vector<PromptSpec> heldout_harmful;
    std::vector<PromptSpec> test_harmful;
    std::vector<PromptSpec> benign;
};

Corpus build_corpus(const CorpusConfig &cfg, uint64_t seed);

void corpus_save(const std::string &path, const Corpus &corpus);
Corpus corpus_load(const std::string &path);

}  // namespace fb
