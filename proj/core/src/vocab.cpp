#include "fb/vocab.hpp"

namespace fb {

std::string token_name(int id) {
    switch (id) {
        case tok::pad: return "<pad>";
        case tok::bos: return "<bos>";
        case tok::eos: return "<eos>";
        case tok::boi: return "<boi>";
        case tok::eoi: return "<eoi>";
        case tok::harm: return "<harm>";
        case tok::ask: return "<ask>";
        case tok::sure: return "<sure>";
        case tok::refuse: return "<refuse>";
        case tok::never: return "<never>";
        case tok::policy: return "<policy>";
        case tok::look: return "<look>";
        default: break;
    }
    if (id >= tok::filler0 && id < tok::filler0 + tok::n_filler)
        return "w" + std::to_string(id - tok::filler0);
    if (id >= tok::topic0 && id < tok::topic0 + tok::n_topic)
        return "t" + std::to_string(id - tok::topic0);
    if (id >= tok::payload0 && id < tok::payload0 + tok::n_payload)
        return "p" + std::to_string(id - tok::payload0);
    if (is_image_token(id)) return "i" + std::to_string(id - k_text_vocab);
    return "<bad:" + std::to_string(id) + ">";
}

std::string render_tokens(const std::vector<int> &ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token_name(ids[i]);
    }
    return out;
}

bool valid_image_brackets(const std::vector<int> &ids, int cells) {
    size_t i = 0;
    while (i < ids.size()) {
        if (ids[i] == tok::boi) {
            if (i + static_cast<size_t>(cells) + 1 >= ids.size()) return false;
            for (int c = 1; c <= cells; ++c) {
                if (!is_image_token(ids[i + static_cast<size_t>(c)])) return false;
            }
            if (ids[i + static_cast<size_t>(cells) + 1] != tok::eoi) return false;
            i += static_cast<size_t>(cells) + 2;
            continue;
        }
        if (is_image_token(ids[i]) || ids[i] == tok::eoi) return false;
        ++i;
    }
    return true;
}

}  // namespace fb
