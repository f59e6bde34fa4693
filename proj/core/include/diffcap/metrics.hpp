#pragma once

#include <string>
#include <vector>

namespace diffcap {

using Tokens = std::vector<std::string>;

// Corpus-level BLEU-4: modified n-gram precisions (n = 1..4) clipped by the
// per-gram maximum across an item's references, pooled over the corpus before
// dividing; geometric mean; brevity penalty exp(1 - r/c) for c <= r with r the
// closest-reference length per item (ties to the shorter). Zero pooled
// matches for an order fall back to an epsilon precision of 1e-9, so scores
// degrade smoothly instead of collapsing on a single missing 4-gram. An empty
// candidate list scores 0.
double bleu4(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references);

// Sentence-level ROUGE-L: longest-common-subsequence precision and recall
// against each reference, F-measure with beta^2 = 1.2, maximum over the
// reference set.
double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references);

// corpus convenience: mean sentence ROUGE-L over aligned candidate/reference
// pairs
double rouge_l_mean(const std::vector<Tokens>& candidates,
                    const std::vector<std::vector<Tokens>>& references);

// exposed for property tests
int lcs_length(const Tokens& a, const Tokens& b);

}  // namespace diffcap
