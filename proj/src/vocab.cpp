#include "iag/vocab.hpp"

#include <cctype>
#include <unordered_map>

#include "iag/common.hpp"
#include "iag/scene.hpp"

namespace iag {

namespace {
const char* kSpecialText[] = {"<bos>", "<eos>", "<pad>", "<sep>", "<", ">", "[", "]", ","};
}

Vocab::Vocab() {
    for (const char* s : kSpecialText) token_text_.emplace_back(s);
    first_word_ = (int)token_text_.size();
    std::vector<std::string> words = {"Q:", ".", "object"};
    for (const auto& t : {grammar::kSizes, grammar::kColors, grammar::kShapes, grammar::kRows,
                          grammar::kCols})
        for (const auto& w : t) words.push_back(w);
    for (const auto& w : words) token_text_.push_back(w);
    first_coord_ = (int)token_text_.size();
    period_id_ = word_id(".");
    for (int k = 0; k <= 1000; ++k) token_text_.push_back(std::to_string(k));
}

int Vocab::word_id(const std::string& w) const {
    for (int i = first_word_; i < first_coord_; ++i)
        if (token_text_[(size_t)i] == w) return i;
    throw validation_error("vocab: out-of-grammar word '" + w + "'");
}

int Vocab::coord_id(int k) const {
    check(k >= 0 && k <= 1000, "vocab: coordinate out of [0,1000]");
    return first_coord_ + k;
}

bool Vocab::is_coord(int id) const { return id >= first_coord_ && id < size(); }

int Vocab::coord_value(int id) const {
    check(is_coord(id), "vocab: not a coordinate token");
    return id - first_coord_;
}

const std::string& Vocab::token_text(int id) const {
    check(id >= 0 && id < size(), "vocab: token id out of range");
    return token_text_[(size_t)id];
}

TokenSequence Vocab::tokenize(const std::string& text) const {
    TokenSequence out;
    size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == ' ') {
            ++i;
            continue;
        }
        switch (c) {
            case '<': out.push_back(OBJ_OPEN); ++i; continue;
            case '>': out.push_back(OBJ_CLOSE); ++i; continue;
            case '[': out.push_back(BOX_OPEN); ++i; continue;
            case ']': out.push_back(BOX_CLOSE); ++i; continue;
            case ',': out.push_back(COMMA); ++i; continue;
            case '.': out.push_back(period_id_); ++i; continue;
            default: break;
        }
        if (std::isdigit((unsigned char)c)) {
            size_t j = i;
            int v = 0;
            while (j < text.size() && std::isdigit((unsigned char)text[j])) {
                v = v * 10 + (text[j] - '0');
                check(v <= 1000, "vocab: number above coordinate range in '" + text + "'");
                ++j;
            }
            out.push_back(coord_id(v));
            i = j;
            continue;
        }
        if (std::isalpha((unsigned char)c)) {
            size_t j = i;
            while (j < text.size() && (std::isalpha((unsigned char)text[j]) || text[j] == ':')) ++j;
            out.push_back(word_id(text.substr(i, j - i)));
            i = j;
            continue;
        }
        throw validation_error(std::string("vocab: unexpected character '") + c + "' in '" + text + "'");
    }
    return out;
}

std::string Vocab::detokenize(const TokenSequence& tokens) const {
    std::string out;
    int prev = -1;
    for (int id : tokens) {
        if (id == BOS || id == EOS || id == PAD || id == SEP) continue;
        bool no_space_after_prev = prev == OBJ_OPEN || prev == BOX_OPEN || prev == COMMA;
        bool no_space_before_cur = id == OBJ_CLOSE || id == BOX_CLOSE || id == COMMA ||
                                   id == BOX_OPEN || id == period_id_;
        if (prev >= 0 && !no_space_after_prev && !no_space_before_cur) out += " ";
        out += token_text(id);
        prev = id;
    }
    return out;
}

std::optional<BoxNorm> Vocab::parse_bbox(const TokenSequence& tokens) const {
    size_t i = 0;
    while (i < tokens.size() && tokens[i] != BOX_OPEN) ++i;
    if (i == tokens.size()) return std::nullopt;
    ++i;
    std::vector<int> coords;
    for (; i < tokens.size(); ++i) {
        int id = tokens[(size_t)i];
        if (id == BOX_CLOSE) {
            if (coords.size() != 4) return std::nullopt;
            return BoxNorm{coords[0], coords[1], coords[2], coords[3]};
        }
        if (id == COMMA) continue;
        if (!is_coord(id)) return std::nullopt;
        if (coords.size() == 4) return std::nullopt;
        coords.push_back(coord_value(id));
    }
    return std::nullopt;  // span never closed
}

}  // namespace iag
