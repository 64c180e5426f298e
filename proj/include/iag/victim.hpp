#pragma once

// Toy grounding VLM: patch encoder + prefix-LM decoder over the mixed
// text/coordinate vocabulary. Bounding boxes are emitted as ordinary token
// sequences. Sequence layout per sample:
//
//   [visual tokens][BOS][input tokens][SEP][target tokens w/o last]
//
// Visual+input positions attend bidirectionally, target positions causally.
// Teacher-forced logits cover exactly the target positions (SEP predicts
// target[0], target[i-1] predicts target[i]).

#include <string>
#include <vector>

#include "iag/nn.hpp"
#include "iag/ops.hpp"
#include "iag/vocab.hpp"

namespace iag {

struct VictimConfig {
    int image_size = 64;
    int patch = 8;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int ffn_dim = 256;
    int max_text_len = 64;  // BOS + input + SEP + target budget
};

template <class T>
class VictimModel {
public:
    VictimModel() = default;
    VictimModel(const VictimConfig& cfg, const Vocab& vocab, uint64_t seed)
        : cfg_(cfg), vocab_(&vocab) {
        check(cfg.image_size % cfg.patch == 0, "victim: image size must divide by patch");
        Rng rng = make_rng(derive_seed(seed, fnv1a64("victim")));
        int np = (cfg.image_size / cfg.patch) * (cfg.image_size / cfg.patch);
        patch_embed_ = PatchEmbed<T>("victim.patch", 3, cfg.d_model, cfg.patch, rng, params_);
        pos_vis_ = make_param(params_, "victim.pos_vis", {np, cfg.d_model});
        fill_normal(pos_vis_, rng, T(0), T(0.02));
        tok_embed_ = EmbeddingM<T>("victim.tok", vocab.size(), cfg.d_model, rng, params_);
        pos_text_ = make_param(params_, "victim.pos_text", {cfg.max_text_len, cfg.d_model});
        fill_normal(pos_text_, rng, T(0), T(0.02));
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "victim.block" + std::to_string(l);
            blocks_.push_back(Block{LayerNormM<T>(p + ".ln1", cfg.d_model, params_),
                                    MultiHeadAttention<T>(p + ".attn", cfg.d_model, cfg.n_heads, rng, params_),
                                    LayerNormM<T>(p + ".ln2", cfg.d_model, params_),
                                    Mlp<T>(p + ".mlp", cfg.d_model, cfg.ffn_dim, rng, params_)});
        }
        ln_f_ = LayerNormM<T>("victim.ln_f", cfg.d_model, params_);
        head_ = Linear<T>("victim.head", cfg.d_model, vocab.size(), rng, params_);
        n_patches_ = np;
    }

    // Teacher-forced logits, shape (len(target), |V|).
    Tensor<T> forward(const Tensor<T>& image, const TokenSequence& input_tokens,
                      const TokenSequence& target_tokens) const {
        check(!target_tokens.empty(), "victim.forward: empty target");
        int text_len = (int)(2 + input_tokens.size() + target_tokens.size() - 1);
        check(text_len <= cfg_.max_text_len, "victim.forward: text sequence over max length " +
                                                 std::to_string(cfg_.max_text_len));
        auto hidden = encode_sequence(image, input_tokens, target_tokens);
        int prefix = n_patches_ + 2 + (int)input_tokens.size();
        int n_tgt = (int)target_tokens.size();
        auto tgt_hidden = slice0(hidden, prefix - 1, prefix - 1 + n_tgt);
        return head_.forward(ln_f_.forward(tgt_hidden));
    }

    // Mean token cross-entropy for one sample.
    Tensor<T> sample_loss(const Tensor<T>& image, const TokenSequence& input_tokens,
                          const TokenSequence& target_tokens) const {
        return cross_entropy_rows(forward(image, input_tokens, target_tokens), target_tokens);
    }

    // Argmax decoding until EOS or max_len tokens; deterministic.
    TokenSequence greedy_decode(const Tensor<T>& image, const TokenSequence& input_tokens,
                                int max_len) const {
        check(max_len >= 1, "greedy_decode: max_len must be >= 1");
        NoGradGuard ng;
        TokenSequence out;
        while ((int)out.size() < max_len) {
            TokenSequence probe = out;
            probe.push_back(Vocab::PAD);  // label slot only; never a decoder input
            auto logits = forward(image, input_tokens, probe);
            int row = (int)out.size();
            int v = vocab_->size();
            const T* l = logits.data() + (size_t)row * v;
            int best = 0;
            for (int j = 1; j < v; ++j)
                if (l[j] > l[best]) best = j;
            if (best == Vocab::EOS) break;
            out.push_back(best);
        }
        return out;
    }

    // Mean-pooled visual-token representation before the decoder blocks;
    // feature space used by the detection baselines.
    std::vector<double> features(const Tensor<T>& image) const {
        NoGradGuard ng;
        auto vis = add(patch_embed_.forward(image), pos_vis_);
        std::vector<double> out((size_t)cfg_.d_model, 0.0);
        for (int i = 0; i < n_patches_; ++i)
            for (int j = 0; j < cfg_.d_model; ++j)
                out[(size_t)j] += (double)vis.values()[(size_t)i * cfg_.d_model + j];
        for (auto& v : out) v /= n_patches_;
        return out;
    }

    ParamList<T>& params() { return params_; }
    const ParamList<T>& params() const { return params_; }
    const VictimConfig& config() const { return cfg_; }
    const Vocab& vocab() const { return *vocab_; }
    int n_patches() const { return n_patches_; }

private:
    struct Block {
        LayerNormM<T> ln1;
        MultiHeadAttention<T> attn;
        LayerNormM<T> ln2;
        Mlp<T> mlp;
    };

    // Hidden states for the full sequence (visual + text), pre final norm.
    Tensor<T> encode_sequence(const Tensor<T>& image, const TokenSequence& input_tokens,
                              const TokenSequence& target_tokens) const {
        check(image.rank() == 3 && image.dim(1) == cfg_.image_size && image.dim(2) == cfg_.image_size,
              "victim.forward: image shape mismatch");
        TokenSequence text;
        text.push_back(Vocab::BOS);
        text.insert(text.end(), input_tokens.begin(), input_tokens.end());
        text.push_back(Vocab::SEP);
        text.insert(text.end(), target_tokens.begin(), target_tokens.end() - 1);

        auto vis = add(patch_embed_.forward(image), pos_vis_);
        auto txt = add(tok_embed_.forward(text), slice0(pos_text_, 0, (int)text.size()));
        auto x = concat0(vis, txt);

        int s = n_patches_ + (int)text.size();
        int prefix = n_patches_ + 2 + (int)input_tokens.size();
        auto mask = build_mask(s, prefix, text);
        for (const auto& blk : blocks_) {
            x = add(x, blk.attn.forward(blk.ln1.forward(x), mask));
            x = add(x, blk.mlp.forward(blk.ln2.forward(x)));
        }
        return x;
    }

    // Additive mask: prefix bidirectional, target causal, PAD keys blocked.
    Tensor<T> build_mask(int s, int prefix, const TokenSequence& text) const {
        auto mask = Tensor<T>::zeros({s, s});
        auto* m = mask.data();
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j < s; ++j) {
                bool ok = j < prefix || j <= i;
                if (ok && j >= n_patches_ && text[(size_t)(j - n_patches_)] == Vocab::PAD) ok = false;
                if (!ok) m[(size_t)i * s + j] = T(-1e9);
            }
        }
        return mask;
    }

    VictimConfig cfg_;
    const Vocab* vocab_ = nullptr;
    ParamList<T> params_;
    PatchEmbed<T> patch_embed_;
    Tensor<T> pos_vis_, pos_text_;
    EmbeddingM<T> tok_embed_;
    std::vector<Block> blocks_;
    LayerNormM<T> ln_f_;
    Linear<T> head_;
    int n_patches_ = 0;
};

// Eq. 4: mean per-sample token CE over clean records plus the same over
// poisoned records; a missing kind contributes zero.
template <class T>
struct LmBatchItem {
    Tensor<T> image;  // may be graph-connected (poisoned path)
    const TokenSequence* input;
    const TokenSequence* target;
    bool poisoned = false;
};

template <class T>
struct LmLossParts {
    Tensor<T> total;         // clean term + poison term
    Tensor<T> clean, poison; // undefined when the batch lacks that kind
    int n_clean = 0, n_poison = 0;
};

template <class T>
LmLossParts<T> lm_loss(const VictimModel<T>& model, const std::vector<LmBatchItem<T>>& batch) {
    check(!batch.empty(), "lm_loss: empty batch");
    LmLossParts<T> parts;
    Tensor<T> clean_sum, poison_sum;
    for (const auto& item : batch) {
        auto ce = model.sample_loss(item.image, *item.input, *item.target);
        if (item.poisoned) {
            poison_sum = poison_sum.defined() ? add(poison_sum, ce) : ce;
            ++parts.n_poison;
        } else {
            clean_sum = clean_sum.defined() ? add(clean_sum, ce) : ce;
            ++parts.n_clean;
        }
    }
    if (clean_sum.defined()) parts.clean = scale(clean_sum, T(1) / T(parts.n_clean));
    if (poison_sum.defined()) parts.poison = scale(poison_sum, T(1) / T(parts.n_poison));
    if (parts.clean.defined() && parts.poison.defined())
        parts.total = add(parts.clean, parts.poison);
    else if (parts.clean.defined())
        parts.total = parts.clean;
    else
        parts.total = parts.poison;
    return parts;
}

}  // namespace iag
