#include "diffcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "diffcap/errors.hpp"

namespace diffcap {

namespace {

constexpr double kEpsPrecision = 1e-9;
constexpr double kRougeBetaSq = 1.2;

// n-gram -> count; grams keyed by joining with an unprintable separator
std::unordered_map<std::string, int> ngram_counts(const Tokens& toks, int n) {
    std::unordered_map<std::string, int> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += toks[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

void require_aligned(const std::vector<Tokens>& candidates,
                     const std::vector<std::vector<Tokens>>& references) {
    if (candidates.size() != references.size())
        throw ConfigError("each candidate needs exactly one reference set");
    for (const auto& refs : references)
        if (refs.empty()) throw DataError("empty reference set");
}

}  // namespace

double bleu4(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references) {
    require_aligned(candidates, references);
    if (candidates.empty()) return 0.0;

    std::int64_t cand_len = 0, ref_len = 0;
    std::int64_t matched[4] = {0, 0, 0, 0};
    std::int64_t possible[4] = {0, 0, 0, 0};

    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Tokens& cand = candidates[i];
        const auto c = static_cast<std::int64_t>(cand.size());
        cand_len += c;

        // closest reference length, ties to the shorter
        std::int64_t best = -1;
        for (const Tokens& ref : references[i]) {
            const auto r = static_cast<std::int64_t>(ref.size());
            if (best < 0 || std::llabs(r - c) < std::llabs(best - c) ||
                (std::llabs(r - c) == std::llabs(best - c) && r < best))
                best = r;
        }
        ref_len += best;

        for (int n = 1; n <= 4; ++n) {
            auto cand_counts = ngram_counts(cand, n);
            if (cand_counts.empty()) continue;
            std::unordered_map<std::string, int> max_ref;
            for (const Tokens& ref : references[i])
                for (const auto& [gram, cnt] : ngram_counts(ref, n))
                    max_ref[gram] = std::max(max_ref[gram], cnt);
            for (const auto& [gram, cnt] : cand_counts) {
                possible[n - 1] += cnt;
                auto it = max_ref.find(gram);
                if (it != max_ref.end()) matched[n - 1] += std::min(cnt, it->second);
            }
        }
    }

    if (cand_len == 0) return 0.0;  // brevity penalty degenerates to zero
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        const double p = matched[n] > 0
                             ? static_cast<double>(matched[n]) / static_cast<double>(possible[n])
                             : kEpsPrecision;
        log_sum += 0.25 * std::log(p);
    }
    const double bp = cand_len >= ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) /
                                               static_cast<double>(cand_len));
    return bp * std::exp(log_sum);
}

int lcs_length(const Tokens& a, const Tokens& b) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references) {
    if (references.empty()) throw DataError("empty reference set");
    double best = 0.0;
    for (const Tokens& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        const int lcs = lcs_length(candidate, ref);
        if (lcs == 0) continue;
        const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
        const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
        const double f = (1.0 + kRougeBetaSq) * p * r / (r + kRougeBetaSq * p);
        best = std::max(best, f);
    }
    return best;
}

double rouge_l_mean(const std::vector<Tokens>& candidates,
                    const std::vector<std::vector<Tokens>>& references) {
    require_aligned(candidates, references);
    if (candidates.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += rouge_l(candidates[i], references[i]);
    return sum / static_cast<double>(candidates.size());
}

}  // namespace diffcap
