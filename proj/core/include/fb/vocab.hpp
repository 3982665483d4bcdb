#pragma once

#include <string>
#include <vector>

namespace fb {

// Joint text+image token space. Text ids occupy [0, k_text_vocab), image ids
// occupy [k_text_vocab, k_vocab); the two ranges never overlap.
namespace tok {
constexpr int pad = 0;
constexpr int bos = 1;
constexpr int eos = 2;
constexpr int boi = 3;  // begin image block
constexpr int eoi = 4;  // end image block
constexpr int harm = 5;
constexpr int ask = 6;
constexpr int sure = 7;
constexpr int refuse = 8;
constexpr int never = 9;
constexpr int policy = 10;
constexpr int look = 11;
constexpr int filler0 = 12;
constexpr int n_filler = 12;
constexpr int topic0 = 24;
constexpr int n_topic = 20;
constexpr int payload0 = 44;
constexpr int n_payload = 20;
}  // namespace tok

constexpr int k_text_vocab = 64;
constexpr int k_image_vocab = 64;
constexpr int k_vocab = k_text_vocab + k_image_vocab;

constexpr int filler_token(int i) { return tok::filler0 + i; }
constexpr int topic_token(int i) { return tok::topic0 + i; }
constexpr int payload_token(int i) { return tok::payload0 + i; }
constexpr int image_token(int code) { return k_text_vocab + code; }
constexpr bool is_image_token(int id) { return id >= k_text_vocab && id < k_vocab; }
constexpr bool is_text_token(int id) { return id >= 0 && id < k_text_vocab; }

std::string token_name(int id);
std::string render_tokens(const std::vector<int> &ids);

// Every <boi> must be followed by exactly `cells` image tokens and one <eoi>;
// image tokens never appear outside such a block.
bool valid_image_brackets(const std::vector<int> &ids, int cells);

}  // namespace fb
