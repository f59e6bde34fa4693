#include "diffcap/textspace.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "diffcap/errors.hpp"

namespace diffcap {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {  // whitespace and punctuation both split
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocabulary::Vocabulary() {
    id_to_token_ = {"<pad>", "<start>", "<end>", "<unk>"};
    for (int i = 0; i < kNumReserved; ++i) token_to_id_[id_to_token_[std::size_t(i)]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus) {
    if (corpus.empty()) throw DataError("cannot build vocabulary from an empty corpus");
    Vocabulary v;
    for (const auto& caption : corpus) {
        for (const auto& tok : caption) {
            if (v.token_to_id_.emplace(tok, v.size()).second) v.id_to_token_.push_back(tok);
        }
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw DataError("token id " + std::to_string(id) + " out of range");
    return id_to_token_[std::size_t(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words, int n) const {
    if (n < 1) throw ConfigError("sequence length must be positive");
    if (static_cast<int>(words.size()) > n - 1)
        throw DataError("caption of " + std::to_string(words.size()) +
                        " words cannot fit in sequence length " + std::to_string(n));
    std::vector<int> ids;
    ids.reserve(std::size_t(n));
    for (const auto& w : words) ids.push_back(id(w));
    ids.push_back(kEnd);
    while (static_cast<int>(ids.size()) < n) ids.push_back(kPad);
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
        if (i == kEnd) break;
        if (!is_reserved(i)) out.push_back(token(i));
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write vocabulary: " + path.string());
    for (const auto& t : id_to_token_) os << t << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read vocabulary: " + path.string());
    Vocabulary v;
    std::string line;
    int idx = 0;
    while (std::getline(is, line)) {
        if (idx < kNumReserved) {
            if (line != v.id_to_token_[std::size_t(idx)])
                throw DataError("vocabulary file: reserved token mismatch at id " +
                                std::to_string(idx));
        } else {
            if (!v.token_to_id_.emplace(line, v.size()).second)
                throw DataError("vocabulary file: duplicate token " + line);
            v.id_to_token_.push_back(line);
        }
        ++idx;
    }
    if (idx < kNumReserved) throw DataError("vocabulary file too short");
    return v;
}

Matrix embed(const Matrix& table, const std::vector<int>& ids) {
    Matrix out(static_cast<int>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw DataError("embedding id " + std::to_string(ids[i]) + " out of range");
        out.row(static_cast<int>(i)) = table.row(ids[i]);
    }
    return out;
}

Matrix noise_words(const Matrix& emb, double alpha0, const Matrix& eps) {
    if (!(alpha0 > 0.0 && alpha0 <= 1.0)) throw ConfigError("alpha0 must lie in (0,1]");
    if (eps.rows() != emb.rows() || eps.cols() != emb.cols())
        throw ConfigError("eps shape does not match embedding");
    return emb + std::sqrt(1.0 - alpha0) * eps;
}

Rounded round_to_tokens(const Matrix& x0, const Matrix& W, const Matrix& b) {
    if (x0.cols() != W.rows() || b.rows() != 1 || b.cols() != W.cols())
        throw ConfigError("rounding parameter shapes inconsistent");
    Matrix logits = (x0 * W).rowwise() + b.row(0);
    if (!logits.allFinite()) throw NumericError("rounding produced non-finite logits");

    Rounded r;
    r.probs.resize(logits.rows(), logits.cols());
    r.ids.resize(std::size_t(logits.rows()));
    for (int i = 0; i < logits.rows(); ++i) {
        // stable softmax; argmax scans left-to-right with strict >, so ties
        // resolve to the lowest id
        const double mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
        r.probs.row(i) = e / e.sum();
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        r.ids[std::size_t(i)] = best;
    }
    return r;
}

}  // namespace diffcap
