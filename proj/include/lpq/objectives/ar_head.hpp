#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpq/diff/ops.hpp"
#include "lpq/params.hpp"

namespace lpq::objectives {

struct ARConfig {
    int width = 64;
    int layers = 2;
    int heads = 2;
    int max_len = 1024;
    int mlp_ratio = 2;
    // false: the AR loss sees detached codes and does not update the quantizer.
    bool through_quantizer = true;

    void validate() const;
};

enum class TokenKind { Text, Soi, QSep, Visual };

struct Token {
    TokenKind kind;
    int id;     // vocabulary id for text, code index for visual
    int level;  // 1-based for visual tokens, 0 otherwise
};

// caption ids, SOI, flat(q1), Q-SEP, flat(q2), ..., flat(qL)
struct SequenceLayout {
    std::int64_t codebook_size = 0;
    std::vector<int> caption_ids;
    std::vector<std::vector<std::uint32_t>> levels;

    std::int64_t soi_id() const { return codebook_size; }
    std::int64_t qsep_id() const { return codebook_size + 1; }
    std::int64_t output_size() const { return codebook_size + 2; }
    std::vector<Token> tokens() const;
    std::int64_t length() const;
    // Output-space target for each position (the next token), -1 where the
    // next token is not a visual token.
    std::vector<int> targets() const;
};

void init_ar_head(ParamStore& store, const ARConfig& cfg, int bits, int text_dim, std::uint64_t seed);

// Text tokens enter through their word vectors (`words` [text_dim, n_text]);
// visual tokens through a linear embedding of their bits (`codes[l]`
// [bits, P_l]); SOI and Q-SEP through a learned two-row table. Returns
// logits [n, K + 2].
template <typename T>
diff::Var<T> ar_logits(diff::Var<T> words, const std::vector<diff::Var<T>>& codes, const Binding<T>& params,
                       const ARConfig& cfg, std::int64_t codebook_size);

// Mean next-token NLL over visual targets.
template <typename T>
diff::Var<T> ar_loss(const SequenceLayout& layout, diff::Var<T> words, const std::vector<diff::Var<T>>& codes,
                     const Binding<T>& params, const ARConfig& cfg);

}  // namespace lpq::objectives
