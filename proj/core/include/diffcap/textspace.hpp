#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffcap/rng.hpp"

namespace diffcap {

// lowercase, split on whitespace and punctuation (punctuation is dropped)
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumReserved = 4;

    // Distinct corpus tokens get ids in first-occurrence order after the
    // reserved block. No frequency cutoff: rare words are kept.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus);

    int id(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    bool is_reserved(int id) const { return id >= 0 && id < kNumReserved; }

    // words -> ids, append END, pad with PAD to exactly n; error if the
    // caption cannot fit (more than n-1 words)
    std::vector<int> encode(const std::vector<std::string>& words, int n) const;
    // ids -> words up to the first END; reserved tokens are dropped
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    void save(const std::filesystem::path& path) const;  // one token per line
    static Vocabulary load(const std::filesystem::path& path);

  private:
    Vocabulary();
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// row i of the result = table row ids[i]
Matrix embed(const Matrix& table, const std::vector<int>& ids);

// x_0 ~ q(x_0 | w) = N(emb, (1 - alpha0) I)
Matrix noise_words(const Matrix& emb, double alpha0, const Matrix& eps);

struct Rounded {
    std::vector<int> ids;  // per-position argmax, ties to the lowest id
    Matrix probs;          // n x V softmax rows
};

// p(w | x0) = softmax(x0 W + b) rowwise; W is d x V, b is 1 x V
Rounded round_to_tokens(const Matrix& x0, const Matrix& W, const Matrix& b);

}  // namespace diffcap
