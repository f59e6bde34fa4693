#pragma once

#include <string>
#include <vector>

#include "diffcap/rng.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/tape.hpp"

namespace diffcap {

struct DenoiserConfig {
    int d_model = 256;
    int heads = 8;
    int ssa_depth = 3;
    int ffn_width = 0;  // 0 -> 4 * d_model
    double dropout = 0.1;
    int n = 40;   // text sequence length
    int hw = 16;  // image token count
    int d = 16;   // word embedding dim
    int c = 64;   // image feature channels

    int ffn() const { return ffn_width > 0 ? ffn_width : 4 * d_model; }
    int d_head() const { return d_model / heads; }
    void validate() const;  // d_model even and divisible by heads; ssa_depth >= 1; dims positive
};

// Sinusoidal tables: entry (pos, 2i) = sin(pos / 10000^(2i/d_model)),
// entry (pos, 2i+1) = cos(same argument).
Matrix positional_encoding(int length, int d_model);
Matrix time_encoding(int t, int d_model);  // 1 x d_model

// Attention maps observed during a forward pass, for property tests.
struct AttnProbe {
    std::vector<Matrix> cmf;  // one n x HW map per head
    std::vector<Matrix> ssa;  // one n x n map per layer
};

// x_0-predicting conditional denoiser: input projections + sinusoidal
// position/time embeddings, one multi-head cross-attention fusion block
// (text queries attend image-residual tokens), a stack of single-head
// self-attention layers with complementary feed-forward blocks, and a
// down-projection back to the word-embedding dimension.
class Denoiser {
  public:
    Denoiser(DenoiserConfig cfg, ParameterStore& store);

    // creates all parameters under "den/" (xavier weights, zero biases,
    // identity layer norms); idempotent via ensure()
    static void init_params(const DenoiserConfig& cfg, ParameterStore& store, RngStream& rng);
    static std::vector<std::string> param_names(const DenoiserConfig& cfg);

    const DenoiserConfig& config() const { return cfg_; }

    // graph-building pieces; x_t is n x d, idi is hw x c
    Var embed_text(Tape& t, Var x_t, int step) const;
    Var embed_image(Tape& t, Var idi, int step) const;
    Var cmf_forward(Tape& t, Var x_emb, Var idi_emb, bool train, RngStream* rng,
                    AttnProbe* probe = nullptr) const;
    Var ssa_forward(Tape& t, Var x_fus, bool train, RngStream* rng,
                    AttnProbe* probe = nullptr) const;
    Var denoise_var(Tape& t, Var x_t, int step, Var idi, bool train, RngStream* rng,
                    AttnProbe* probe = nullptr) const;

    // inference convenience: dropout off, plain matrices in and out
    Matrix denoise(const Matrix& x_t, int step, const Matrix& idi,
                   AttnProbe* probe = nullptr) const;

  private:
    Var attention(Tape& t, Var q_src, Var kv_src, const std::string& wq, const std::string& wk,
                  const std::string& wv, Matrix* attn_out) const;
    Var dropout_maybe(Tape& t, Var x, bool train, RngStream* rng) const;
    Var p(Tape& t, const std::string& name) const;

    DenoiserConfig cfg_;
    ParameterStore& store_;
};

// mu_theta of the reverse step: the schedule posterior with the prediction
// x0_hat standing in for x_0. Implemented independently of
// NoiseSchedule::posterior_mean so the algebraic identity between the two is
// a real cross-check.
Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& x0_hat, const NoiseSchedule& sched);

}  // namespace diffcap
