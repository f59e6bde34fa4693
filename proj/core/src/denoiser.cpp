#include "diffcap/denoiser.hpp"

#include <cmath>

#include "diffcap/errors.hpp"

namespace diffcap {

void DenoiserConfig::validate() const {
    if (d_model <= 0 || heads <= 0 || n <= 0 || hw <= 0 || d <= 0 || c <= 0)
        throw ConfigError("denoiser dimensions must be positive");
    if (d_model % 2 != 0) throw ConfigError("d_model must be even for sinusoidal encodings");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (ssa_depth < 1) throw ConfigError("ssa_depth must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
}

Matrix positional_encoding(int length, int d_model) {
    if (d_model % 2 != 0) throw ConfigError("positional encoding needs an even d_model");
    if (length < 1) throw ConfigError("positional encoding length must be >= 1");
    Matrix pe(length, d_model);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            const double arg = pos / std::pow(10000.0, (2.0 * i) / d_model);
            pe(pos, 2 * i) = std::sin(arg);
            pe(pos, 2 * i + 1) = std::cos(arg);
        }
    }
    return pe;
}

Matrix time_encoding(int t, int d_model) {
    if (t < 0) throw ConfigError("time encoding expects t >= 0");
    Matrix te(1, d_model);
    if (d_model % 2 != 0) throw ConfigError("time encoding needs an even d_model");
    for (int i = 0; i < d_model / 2; ++i) {
        const double arg = t / std::pow(10000.0, (2.0 * i) / d_model);
        te(0, 2 * i) = std::sin(arg);
        te(0, 2 * i + 1) = std::cos(arg);
    }
    return te;
}

namespace {

// gain on the tied self-attention W^Q/W^K init; large enough that the Gram
// logits dominate the softmax, small enough that training can still reshape
// the attention pattern
constexpr double kSsaQkInitGain = 4.0;

std::string ssa_key(int layer, const std::string& leaf) {
    return "den/ssa" + std::to_string(layer) + "/" + leaf;
}

void ensure_linear(const DenoiserConfig&, ParameterStore& store, RngStream& rng,
                   const std::string& name, int in, int out, bool bias) {
    Parameter& w = store.ensure(name + "/w", in, out);
    if (w.value.isZero()) w.value = rng.xavier(in, out);
    if (bias) store.ensure(name + "/b", 1, out);  // zeros
}

void ensure_ln(ParameterStore& store, const std::string& name, int width) {
    Parameter& g = store.ensure(name + "/gamma", 1, width);
    if (g.value.isZero()) g.value = Matrix::Ones(1, width);
    store.ensure(name + "/beta", 1, width);
}

}  // namespace

std::vector<std::string> Denoiser::param_names(const DenoiserConfig& cfg) {
    std::vector<std::string> names{"den/text_proj/w", "den/text_proj/b",
                                   "den/img_proj/w", "den/img_proj/b"};
    for (int j = 0; j < cfg.heads; ++j) {
        const std::string h = "den/cmf/head" + std::to_string(j);
        names.push_back(h + "/wq");
        names.push_back(h + "/wk");
        names.push_back(h + "/wv");
    }
    for (const char* leaf :
         {"den/cmf/out/w", "den/cmf/out/b", "den/cmf/ffn1/w", "den/cmf/ffn1/b",
          "den/cmf/ffn2/w", "den/cmf/ffn2/b", "den/cmf/ln/gamma", "den/cmf/ln/beta"})
        names.push_back(leaf);
    for (int l = 0; l < cfg.ssa_depth; ++l) {
        for (const char* leaf : {"wq", "wk", "wv", "fc1/w", "fc1/b", "ln1/gamma", "ln1/beta",
                                 "fc2/w", "fc2/b", "fc3/w", "fc3/b", "ln2/gamma", "ln2/beta"})
            names.push_back(ssa_key(l, leaf));
    }
    names.push_back("den/down_proj/w");
    names.push_back("den/down_proj/b");
    return names;
}

void Denoiser::init_params(const DenoiserConfig& cfg, ParameterStore& store, RngStream& rng) {
    cfg.validate();
    ensure_linear(cfg, store, rng, "den/text_proj", cfg.d, cfg.d_model, true);
    ensure_linear(cfg, store, rng, "den/img_proj", cfg.c, cfg.d_model, true);
    for (int j = 0; j < cfg.heads; ++j) {
        const std::string h = "den/cmf/head" + std::to_string(j);
        Parameter& wq = store.ensure(h + "/wq", cfg.d_model, cfg.d_head());
        if (wq.value.isZero()) wq.value = rng.xavier(cfg.d_model, cfg.d_head());
        Parameter& wk = store.ensure(h + "/wk", cfg.d_model, cfg.d_head());
        if (wk.value.isZero()) wk.value = rng.xavier(cfg.d_model, cfg.d_head());
        Parameter& wv = store.ensure(h + "/wv", cfg.d_model, cfg.d_head());
        if (wv.value.isZero()) wv.value = rng.xavier(cfg.d_model, cfg.d_head());
    }
    ensure_linear(cfg, store, rng, "den/cmf/out", cfg.d_model, cfg.d_model, true);
    ensure_linear(cfg, store, rng, "den/cmf/ffn1", cfg.d_model, cfg.ffn(), true);
    ensure_linear(cfg, store, rng, "den/cmf/ffn2", cfg.ffn(), cfg.d_model, true);
    ensure_ln(store, "den/cmf/ln", cfg.d_model);
    for (int l = 0; l < cfg.ssa_depth; ++l) {
        // The self-attention layers start with W^K tied to a scaled W^Q.
        // With both drawn independently the init logits are near zero, the
        // softmax rows come out near uniform, and each layer averages the n
        // positions toward a common row; the complementary block has no
        // residual around the attention itself, so stacking layers erases
        // position identity quadratically and gradients can no longer tell
        // positions apart. Tied W^Q = W^K makes the logits a Gram matrix:
        // diagonal-dominant, self-focused, and row-preserving at depth.
        Parameter& wq = store.ensure(ssa_key(l, "wq"), cfg.d_model, cfg.d_model);
        if (wq.value.isZero()) wq.value = kSsaQkInitGain * rng.xavier(cfg.d_model, cfg.d_model);
        Parameter& wk = store.ensure(ssa_key(l, "wk"), cfg.d_model, cfg.d_model);
        if (wk.value.isZero()) wk.value = wq.value;
        Parameter& wv = store.ensure(ssa_key(l, "wv"), cfg.d_model, cfg.d_model);
        if (wv.value.isZero()) wv.value = rng.xavier(cfg.d_model, cfg.d_model);
        ensure_linear(cfg, store, rng, ssa_key(l, "fc1"), cfg.d_model, cfg.d_model, true);
        ensure_ln(store, ssa_key(l, "ln1"), cfg.d_model);
        ensure_linear(cfg, store, rng, ssa_key(l, "fc2"), cfg.d_model, cfg.d_model, true);
        ensure_linear(cfg, store, rng, ssa_key(l, "fc3"), cfg.d_model, cfg.d_model, true);
        ensure_ln(store, ssa_key(l, "ln2"), cfg.d_model);
    }
    ensure_linear(cfg, store, rng, "den/down_proj", cfg.d_model, cfg.d, true);
}

Denoiser::Denoiser(DenoiserConfig cfg, ParameterStore& store) : cfg_(cfg), store_(store) {
    cfg_.validate();
    for (const auto& name : param_names(cfg_))
        if (!store.contains(name))
            throw ConfigError("denoiser parameter missing from store: " + name);
}

Var Denoiser::p(Tape& t, const std::string& name) const { return t.param(store_.at(name)); }

Var Denoiser::dropout_maybe(Tape& t, Var x, bool train, RngStream* rng) const {
    if (!train || cfg_.dropout == 0.0) return x;
    if (!rng) throw ConfigError("training-mode dropout needs an rng stream");
    return t.dropout(x, cfg_.dropout, *rng);
}

Var Denoiser::embed_text(Tape& t, Var x_t, int step) const {
    if (t.val(x_t).rows() != cfg_.n || t.val(x_t).cols() != cfg_.d)
        throw ConfigError("embed_text: x_t must be n x d");
    Var proj = t.add_rowvec(t.matmul(x_t, p(t, "den/text_proj/w")), p(t, "den/text_proj/b"));
    Var pe = t.input(positional_encoding(cfg_.n, cfg_.d_model));
    return t.add_rowvec(t.add(proj, pe), t.input(time_encoding(step, cfg_.d_model)));
}

Var Denoiser::embed_image(Tape& t, Var idi, int step) const {
    if (t.val(idi).rows() != cfg_.hw || t.val(idi).cols() != cfg_.c)
        throw ConfigError("embed_image: residual map must be hw x c");
    Var proj = t.add_rowvec(t.matmul(idi, p(t, "den/img_proj/w")), p(t, "den/img_proj/b"));
    Var pe = t.input(positional_encoding(cfg_.hw, cfg_.d_model));
    return t.add_rowvec(t.add(proj, pe), t.input(time_encoding(step, cfg_.d_model)));
}

Var Denoiser::attention(Tape& t, Var q_src, Var kv_src, const std::string& wq,
                        const std::string& wk, const std::string& wv, Matrix* attn_out) const {
    Var q = t.matmul(q_src, p(t, wq));
    Var k = t.matmul(kv_src, p(t, wk));
    Var v = t.matmul(kv_src, p(t, wv));
    const double scale = 1.0 / std::sqrt(static_cast<double>(t.val(q).cols()));
    Var weights = t.softmax_rows(t.mul_scalar(t.matmul_nt(q, k), scale));
    if (attn_out) *attn_out = t.val(weights);
    return t.matmul(weights, v);
}

Var Denoiser::cmf_forward(Tape& t, Var x_emb, Var idi_emb, bool train, RngStream* rng,
                          AttnProbe* probe) const {
    std::vector<Var> heads;
    heads.reserve(std::size_t(cfg_.heads));
    for (int j = 0; j < cfg_.heads; ++j) {
        const std::string h = "den/cmf/head" + std::to_string(j);
        Matrix attn;
        heads.push_back(attention(t, x_emb, idi_emb, h + "/wq", h + "/wk", h + "/wv",
                                  probe ? &attn : nullptr));
        if (probe) probe->cmf.push_back(std::move(attn));
    }
    Var x_c = t.add_rowvec(t.matmul(t.concat_cols(heads), p(t, "den/cmf/out/w")),
                           p(t, "den/cmf/out/b"));
    Var h1 = t.relu(t.add_rowvec(t.matmul(x_c, p(t, "den/cmf/ffn1/w")), p(t, "den/cmf/ffn1/b")));
    Var x_proj = t.add_rowvec(t.matmul(h1, p(t, "den/cmf/ffn2/w")), p(t, "den/cmf/ffn2/b"));
    Var summed = t.add(x_c, dropout_maybe(t, x_proj, train, rng));
    return t.layer_norm(summed, p(t, "den/cmf/ln/gamma"), p(t, "den/cmf/ln/beta"));
}

Var Denoiser::ssa_forward(Tape& t, Var x_fus, bool train, RngStream* rng,
                          AttnProbe* probe) const {
    Var x = x_fus;
    for (int l = 0; l < cfg_.ssa_depth; ++l) {
        Matrix attn;
        Var x_i = attention(t, x, x, ssa_key(l, "wq"), ssa_key(l, "wk"), ssa_key(l, "wv"),
                            probe ? &attn : nullptr);
        if (probe) probe->ssa.push_back(std::move(attn));

        Var fc1 = t.add_rowvec(t.matmul(x_i, p(t, ssa_key(l, "fc1/w"))),
                               p(t, ssa_key(l, "fc1/b")));
        Var x_res = t.layer_norm(t.add(dropout_maybe(t, fc1, train, rng), x_i),
                                 p(t, ssa_key(l, "ln1/gamma")), p(t, ssa_key(l, "ln1/beta")));
        Var x_act = t.gelu(t.add_rowvec(t.matmul(x_res, p(t, ssa_key(l, "fc2/w"))),
                                        p(t, ssa_key(l, "fc2/b"))));
        Var fc3 = t.add_rowvec(t.matmul(x_act, p(t, ssa_key(l, "fc3/w"))),
                               p(t, ssa_key(l, "fc3/b")));
        x = t.layer_norm(t.add(x_act, dropout_maybe(t, fc3, train, rng)),
                         p(t, ssa_key(l, "ln2/gamma")), p(t, ssa_key(l, "ln2/beta")));
    }
    return x;
}

Var Denoiser::denoise_var(Tape& t, Var x_t, int step, Var idi, bool train, RngStream* rng,
                          AttnProbe* probe) const {
    Var x_emb = embed_text(t, x_t, step);
    Var idi_emb = embed_image(t, idi, step);
    Var x_fus = cmf_forward(t, x_emb, idi_emb, train, rng, probe);
    Var x_out = ssa_forward(t, x_fus, train, rng, probe);
    return t.add_rowvec(t.matmul(x_out, p(t, "den/down_proj/w")), p(t, "den/down_proj/b"));
}

Matrix Denoiser::denoise(const Matrix& x_t, int step, const Matrix& idi,
                         AttnProbe* probe) const {
    Tape t;
    Var out = denoise_var(t, t.input(x_t), step, t.input(idi), /*train=*/false, nullptr, probe);
    return t.val(out);
}

Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& x0_hat,
                    const NoiseSchedule& sched) {
    const double at = sched.alpha(t);
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    if (ab_t >= 1.0)
        throw NumericError("degenerate schedule: alpha_bar(t) == 1 has no reverse mean");
    const double denom = 1.0 - ab_t;
    return (std::sqrt(at) * (1.0 - ab_prev) / denom) * x_t +
           (std::sqrt(ab_prev) * (1.0 - at) / denom) * x0_hat;
}

}  // namespace diffcap
