#include "diffcap/sample.hpp"

#include <cmath>
#include <string>

#include "diffcap/errors.hpp"

namespace diffcap {

namespace {

// nearest embedding row by euclidean distance, ties to the lowest row id
Matrix snap_rows(const Matrix& x, const Matrix& table) {
    Matrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        int best = 0;
        double best_d = (table.row(0) - x.row(i)).squaredNorm();
        for (int r = 1; r < table.rows(); ++r) {
            const double d = (table.row(r) - x.row(i)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = r;
            }
        }
        out.row(i) = table.row(best);
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace

SampleResult ancestral_sample(const DenoiseFn& fn, const ParameterStore& store,
                              const Vocabulary& vocab, const NoiseSchedule& sched, int n, int d,
                              RngStream& rng, const SampleOptions& opt) {
    if (!fn) throw ConfigError("no denoising function supplied");
    if (n < 1 || d < 1) throw ConfigError("latent shape must be positive");
    if (!store.contains("round/w") || !store.contains("round/b"))
        throw ConfigError("rounding parameters missing from the store");
    if (opt.clamp_x0 && !store.contains("emb/table"))
        throw ConfigError("clamping requires the embedding table");

    SampleResult res;
    Matrix x = rng.gaussian(n, d);
    if (opt.record_trace) res.trace.emplace_back(sched.T(), x.norm());

    for (int t = sched.T(); t >= 1; --t) {
        Matrix x0_hat = fn(x, t);
        if (x0_hat.rows() != n || x0_hat.cols() != d)
            throw ConfigError("denoising function changed the latent shape at step " +
                              std::to_string(t));
        if (opt.clamp_x0) x0_hat = snap_rows(x0_hat, store.at("emb/table").value);

        if (t == 1) {
            x = std::move(x0_hat);  // reverse_mean(x, 1, x0_hat) is x0_hat; no noise
        } else {
            x = reverse_mean(x, t, x0_hat, sched);
            if (!opt.disable_noise) {
                const double var = sched.posterior_variance(t);
                const double scale = opt.variance_scaled_noise ? var : std::sqrt(var);
                x += scale * rng.gaussian(n, d);
            }
        }
        if (!x.allFinite())
            throw NumericError("non-finite latent at step " + std::to_string(t));
        if (opt.record_trace) res.trace.emplace_back(t - 1, x.norm());
    }

    Rounded r = round_to_tokens(x, store.at("round/w").value, store.at("round/b").value);
    res.ids = std::move(r.ids);
    res.caption = join_words(vocab.decode(res.ids));
    res.x0 = std::move(x);
    return res;
}

SampleResult sample_caption(const Matrix& idi, const Denoiser& den, const ParameterStore& store,
                            const Vocabulary& vocab, const NoiseSchedule& sched, RngStream& rng,
                            const SampleOptions& opt) {
    const DenoiserConfig& cfg = den.config();
    if (idi.rows() != cfg.hw || idi.cols() != cfg.c)
        throw DataError("residual features are not hw x c");
    DenoiseFn fn = [&](const Matrix& x_t, int t) { return den.denoise(x_t, t, idi); };
    return ancestral_sample(fn, store, vocab, sched, cfg.n, cfg.d, rng, opt);
}

SampleResult sample_caption(const FeatureMap& before, const FeatureMap& after,
                            const Denoiser& den, const ParameterStore& store,
                            const Vocabulary& vocab, const NoiseSchedule& sched, RngStream& rng,
                            const SampleOptions& opt) {
    return sample_caption(residual_map(before, after), den, store, vocab, sched, rng, opt);
}

std::vector<SampleResult> batch_sample(const std::vector<Matrix>& idis,
                                       const std::vector<std::uint64_t>& keys,
                                       const Denoiser& den, const ParameterStore& store,
                                       const Vocabulary& vocab, const NoiseSchedule& sched,
                                       std::uint64_t seed, const SampleOptions& opt) {
    if (keys.size() != idis.size())
        throw ConfigError("one stream key per item is required");
    std::vector<SampleResult> out;
    out.reserve(idis.size());
    for (std::size_t i = 0; i < idis.size(); ++i) {
        RngStream rng(mix_seed(seed, keys[i]));
        out.push_back(sample_caption(idis[i], den, store, vocab, sched, rng, opt));
    }
    return out;
}

std::vector<SampleResult> batch_sample(const std::vector<Matrix>& idis, const Denoiser& den,
                                       const ParameterStore& store, const Vocabulary& vocab,
                                       const NoiseSchedule& sched, std::uint64_t seed,
                                       const SampleOptions& opt) {
    std::vector<std::uint64_t> keys(idis.size());
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
    return batch_sample(idis, keys, den, store, vocab, sched, seed, opt);
}

}  // namespace diffcap
