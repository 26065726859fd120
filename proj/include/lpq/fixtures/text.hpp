#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpq/diff/tensor.hpp"

namespace lpq::fixtures {

// The fixed 64-word caption vocabulary; index = token id.
const std::vector<std::string>& vocabulary();
int word_id(const std::string& word);  // throws on unknown word

inline constexpr int kDefaultTextDim = 32;

// Unit-norm base vector of a word, drawn from a generator seeded by a hash of
// the word string.
std::vector<float> word_vector(const std::string& word, int dim = kDefaultTextDim);

struct TextEmbedding {
    std::vector<float> vector;     // e_t, unit norm
    std::vector<int> token_ids;    // vocabulary ids in caption order
    diff::Tensor word_vectors;     // [dim, n_words], column k = base vector of word k
};

// e_t = normalize(sum of the caption's base vectors).
TextEmbedding embed_text(const std::vector<std::string>& caption, int dim = kDefaultTextDim);

std::vector<std::string> split_words(const std::string& text);

}  // namespace lpq::fixtures
