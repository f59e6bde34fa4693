#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "diffcap/denoiser.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/textspace.hpp"
#include "diffcap/vision.hpp"

namespace diffcap {

struct SampleOptions {
    // Sampling from N(mu, sigma^2) needs the standard deviation, and the
    // default scales the reverse-step noise by sqrt(var). This flag scales by
    // the variance itself instead — a deliberately reproduced quirk of the
    // update rule this sampler mirrors, kept for side-by-side comparison.
    bool variance_scaled_noise = false;
    bool clamp_x0 = false;      // snap each predicted row to its nearest embedding row
    bool record_trace = false;  // per-step latent L2 norms, t = T down to 0
    bool disable_noise = false; // diagnostic: zero every reverse-step draw
};

struct SampleResult {
    std::vector<int> ids;   // rounded tokens, length n
    std::string caption;    // words up to the first END, space-joined
    Matrix x0;              // final latent, n x d
    std::vector<std::pair<int, double>> trace;  // (t, |x_t|_2) when recorded
};

// prediction of x_0 given (x_t, t); the production case wraps the denoiser
using DenoiseFn = std::function<Matrix(const Matrix& x_t, int t)>;

// Ancestral reverse loop: x_T ~ N(0, I); for t = T..2,
// x_{t-1} = reverse_mean(x_t, t, x0_hat) + scale(t) * eps; the final step
// takes x_0 = x0_hat with no noise. Rounds the result to tokens.
SampleResult ancestral_sample(const DenoiseFn& fn, const ParameterStore& store,
                              const Vocabulary& vocab, const NoiseSchedule& sched, int n, int d,
                              RngStream& rng, const SampleOptions& opt = {});

// production path: the trained denoiser conditioned on precomputed residual
// features (hw x c)
SampleResult sample_caption(const Matrix& idi, const Denoiser& den, const ParameterStore& store,
                            const Vocabulary& vocab, const NoiseSchedule& sched, RngStream& rng,
                            const SampleOptions& opt = {});

// computes the residual of a bi-temporal feature pair first
SampleResult sample_caption(const FeatureMap& before, const FeatureMap& after,
                            const Denoiser& den, const ParameterStore& store,
                            const Vocabulary& vocab, const NoiseSchedule& sched, RngStream& rng,
                            const SampleOptions& opt = {});

// Order-preserving map with one derived rng stream per item. Streams are
// keyed by the caller's stable item keys, so an item's caption depends only
// on its own features and key — reordering a batch reorders the outputs
// identically.
std::vector<SampleResult> batch_sample(const std::vector<Matrix>& idis,
                                       const std::vector<std::uint64_t>& keys,
                                       const Denoiser& den, const ParameterStore& store,
                                       const Vocabulary& vocab, const NoiseSchedule& sched,
                                       std::uint64_t seed, const SampleOptions& opt = {});

// convenience: keys default to positions 0..N-1
std::vector<SampleResult> batch_sample(const std::vector<Matrix>& idis, const Denoiser& den,
                                       const ParameterStore& store, const Vocabulary& vocab,
                                       const NoiseSchedule& sched, std::uint64_t seed,
                                       const SampleOptions& opt = {});

}  // namespace diffcap
