#pragma once

// Mixed vocabulary over grammar words, 1001 coordinate tokens c0..c1000 and
// structural specials; bounding boxes are emitted as plain token sequences.

#include <optional>
#include <string>
#include <vector>

#include "iag/geometry.hpp"

namespace iag {

using TokenSequence = std::vector<int>;

class Vocab {
public:
    // Token ids are dense and fixed by construction order:
    // specials, grammar/template words, then c0..c1000.
    enum Special : int {
        BOS = 0,
        EOS = 1,
        PAD = 2,
        SEP = 3,
        OBJ_OPEN = 4,   // '<'
        OBJ_CLOSE = 5,  // '>'
        BOX_OPEN = 6,   // '['
        BOX_CLOSE = 7,  // ']'
        COMMA = 8,      // ','
    };

    Vocab();

    int size() const { return (int)token_text_.size(); }
    int word_id(const std::string& w) const;          // throws on unknown word
    int coord_id(int k) const;                        // k in [0,1000]
    bool is_coord(int id) const;
    int coord_value(int id) const;                    // inverse of coord_id
    const std::string& token_text(int id) const;

    // Lossless over the prompt/answer grammar; throws on out-of-grammar text.
    TokenSequence tokenize(const std::string& text) const;
    std::string detokenize(const TokenSequence& tokens) const;

    // First '['..']' span with exactly 4 coordinate tokens (commas ignored);
    // anything else is malformed and scores IoU = 0 downstream.
    std::optional<BoxNorm> parse_bbox(const TokenSequence& tokens) const;

private:
    std::vector<std::string> token_text_;
    int first_word_ = 0, first_coord_ = 0;
    int period_id_ = -1;
};

}  // namespace iag
