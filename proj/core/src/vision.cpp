#include "diffcap/vision.hpp"

#include <cmath>
#include <limits>

#include "diffcap/errors.hpp"
#include "diffcap/io.hpp"

namespace diffcap {

Matrix residual_map(const FeatureMap& f_bef, const FeatureMap& f_aft) {
    if (f_bef.provenance != f_aft.provenance)
        throw ConfigError("residual_map: mixed backbone provenance");
    if (f_bef.tokens.rows() != f_aft.tokens.rows() ||
        f_bef.tokens.cols() != f_aft.tokens.cols() || f_bef.H != f_aft.H ||
        f_bef.W != f_aft.W)
        throw ConfigError("residual_map: feature shape mismatch");
    return f_bef.tokens - f_aft.tokens;
}

// ---------------------------------------------------------------- toy ----

namespace {

constexpr int kToyChannels[4] = {3, 16, 32, 64};

std::string toy_w(int layer, int k) {
    return "backbone/conv" + std::to_string(layer) + "/w" + std::to_string(k);
}
std::string toy_b(int layer) { return "backbone/conv" + std::to_string(layer) + "/b"; }

// gather indices realizing a 3x3 stride-2 pad-1 conv tap: entry (p, k) is the
// source token row for output position p under kernel offset k, with
// out-of-bounds taps pointing at the appended zero row (index H*W)
std::vector<std::vector<int>> conv_taps(int H, int W) {
    const int Ho = (H - 1) / 2 + 1, Wo = (W - 1) / 2 + 1;
    std::vector<std::vector<int>> taps(9);
    for (int k = 0; k < 9; ++k) {
        const int ky = k / 3, kx = k % 3;
        auto& idx = taps[std::size_t(k)];
        idx.reserve(std::size_t(Ho) * Wo);
        for (int y = 0; y < Ho; ++y) {
            for (int x = 0; x < Wo; ++x) {
                const int sy = 2 * y - 1 + ky, sx = 2 * x - 1 + kx;
                idx.push_back((sy < 0 || sy >= H || sx < 0 || sx >= W) ? H * W
                                                                       : sy * W + sx);
            }
        }
    }
    return taps;
}

}  // namespace

void ToyBackbone::init_params(ParameterStore& store, RngStream& rng) {
    for (int layer = 1; layer <= 3; ++layer) {
        const int cin = kToyChannels[layer - 1], cout = kToyChannels[layer];
        const double bound = std::sqrt(6.0 / (9.0 * cin + 9.0 * cout));
        for (int k = 0; k < 9; ++k) {
            Parameter& w = store.create(toy_w(layer, k), cin, cout);
            for (int i = 0; i < cin; ++i)
                for (int j = 0; j < cout; ++j)
                    w.value(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
        }
        store.create(toy_b(layer), 1, cout);  // zero bias
    }
}

bool ToyBackbone::has_params(const ParameterStore& store) {
    return store.contains("backbone/conv1/w0");
}

Var ToyBackbone::tokens_var(Tape& t, const std::vector<Matrix>& planes, ParameterStore& store,
                            bool trainable) {
    if (planes.size() != 3) throw ConfigError("toy backbone expects 3 channel planes");
    for (const auto& p : planes)
        if (p.rows() != kInputSize || p.cols() != kInputSize)
            throw ConfigError("toy backbone expects a 32x32 input");
    if (!has_params(store)) throw ConfigError("toy backbone weights missing from store");

    auto weight = [&](const std::string& name) {
        return trainable ? t.param(store.at(name)) : t.input(store.at(name).value);
    };

    // image -> token matrix (HW x 3), row-major spatial order
    Matrix x0(kInputSize * kInputSize, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kInputSize; ++y)
            for (int x = 0; x < kInputSize; ++x)
                x0(y * kInputSize + x, c) = planes[std::size_t(c)](y, x);

    Var x = t.input(std::move(x0));
    int H = kInputSize, W = kInputSize;
    for (int layer = 1; layer <= 3; ++layer) {
        const auto taps = conv_taps(H, W);
        const int cin = kToyChannels[layer - 1];
        Var padded = t.concat_rows({x, t.input(Matrix::Zero(1, cin))});
        Var acc;
        for (int k = 0; k < 9; ++k) {
            Var term = t.matmul(t.gather_rows(padded, taps[std::size_t(k)]),
                                weight(toy_w(layer, k)));
            acc = (k == 0) ? term : t.add(acc, term);
        }
        x = t.relu(t.add_rowvec(acc, weight(toy_b(layer))));
        H = (H - 1) / 2 + 1;
        W = (W - 1) / 2 + 1;
    }
    return x;
}

FeatureMap ToyBackbone::extract(const std::vector<Matrix>& planes, ParameterStore& store) {
    Tape t;
    Var tokens = tokens_var(t, planes, store, /*trainable=*/false);
    FeatureMap f;
    f.tokens = t.val(tokens);
    f.provenance = BackboneKind::Toy;
    f.H = kOutGrid;
    f.W = kOutGrid;
    return f;
}

// ----------------------------------------------------- imported ----------

namespace {

struct TokenGrid {
    Matrix t;  // (H*W) x C
    int H = 0, W = 0;
    int C() const { return static_cast<int>(t.cols()); }
};

// im2col convolution; weight is (C_in*kh*kw) x C_out with patch column order
// (c_in, ky, kx)
TokenGrid conv2d(const TokenGrid& in, const Matrix& w, int kh, int kw, int stride, int pad) {
    const int cin = in.C();
    if (w.rows() != cin * kh * kw)
        throw DataError("conv weight rows != C_in*kh*kw");
    const int Ho = (in.H + 2 * pad - kh) / stride + 1;
    const int Wo = (in.W + 2 * pad - kw) / stride + 1;
    Matrix patches = Matrix::Zero(Ho * Wo, cin * kh * kw);
    for (int y = 0; y < Ho; ++y) {
        for (int x = 0; x < Wo; ++x) {
            const int row = y * Wo + x;
            for (int ky = 0; ky < kh; ++ky) {
                const int sy = y * stride - pad + ky;
                if (sy < 0 || sy >= in.H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int sx = x * stride - pad + kx;
                    if (sx < 0 || sx >= in.W) continue;
                    const int src = sy * in.W + sx;
                    for (int c = 0; c < cin; ++c)
                        patches(row, (c * kh + ky) * kw + kx) = in.t(src, c);
                }
            }
        }
    }
    return {patches * w, Ho, Wo};
}

void batchnorm(TokenGrid& g, const Matrix& gamma, const Matrix& beta, const Matrix& mean,
               const Matrix& var) {
    constexpr double eps = 1e-5;
    Eigen::RowVectorXd scale =
        gamma.row(0).array() / (var.row(0).array() + eps).sqrt();
    Eigen::RowVectorXd shift = beta.row(0).array() - mean.row(0).array() * scale.array();
    g.t = (g.t.array().rowwise() * scale.array()).rowwise() + shift.array();
}

void relu_inplace(TokenGrid& g) { g.t = g.t.cwiseMax(0.0); }

TokenGrid maxpool3x3s2(const TokenGrid& in) {
    const int Ho = (in.H + 2 - 3) / 2 + 1, Wo = (in.W + 2 - 3) / 2 + 1;
    TokenGrid out{Matrix::Constant(Ho * Wo, in.C(), -std::numeric_limits<double>::infinity()),
                  Ho, Wo};
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            const int row = y * Wo + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = 2 * y - 1 + ky;
                if (sy < 0 || sy >= in.H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = 2 * x - 1 + kx;
                    if (sx < 0 || sx >= in.W) continue;
                    out.t.row(row) = out.t.row(row).cwiseMax(in.t.row(sy * in.W + sx));
                }
            }
        }
    return out;
}

std::string stage_key(int s, int b, const std::string& leaf) {
    return "stage" + std::to_string(s) + "/block" + std::to_string(b) + "/" + leaf;
}

void push_bn_keys(std::vector<std::pair<std::string, std::pair<int, int>>>& keys,
                  const std::string& prefix, int c) {
    for (const char* leaf : {"gamma", "beta", "mean", "var"})
        keys.push_back({prefix + "/" + leaf, {1, c}});
}

}  // namespace

BottleneckBackboneSpec BottleneckBackboneSpec::resnet101() { return {}; }

BottleneckBackboneSpec BottleneckBackboneSpec::tiny() {
    BottleneckBackboneSpec s;
    s.blocks = {1, 1, 1, 1};
    s.widths = {4, 8, 16, 32};
    s.stem_channels = 4;
    return s;
}

std::vector<std::pair<std::string, std::pair<int, int>>> ImportedBackbone::expected_keys(
    const BottleneckBackboneSpec& spec) {
    std::vector<std::pair<std::string, std::pair<int, int>>> keys;
    keys.push_back({"stem/conv/w", {3 * 7 * 7, spec.stem_channels}});
    push_bn_keys(keys, "stem/bn", spec.stem_channels);
    int cin = spec.stem_channels;
    for (int s = 1; s <= int(spec.blocks.size()); ++s) {
        const int width = spec.widths[std::size_t(s - 1)];
        const int cout = width * spec.expansion;
        for (int b = 0; b < spec.blocks[std::size_t(s - 1)]; ++b) {
            const int block_in = (b == 0) ? cin : cout;
            keys.push_back({stage_key(s, b, "conv1/w"), {block_in, width}});
            push_bn_keys(keys, stage_key(s, b, "bn1"), width);
            keys.push_back({stage_key(s, b, "conv2/w"), {width * 9, width}});
            push_bn_keys(keys, stage_key(s, b, "bn2"), width);
            keys.push_back({stage_key(s, b, "conv3/w"), {width, cout}});
            push_bn_keys(keys, stage_key(s, b, "bn3"), cout);
            if (b == 0) {
                keys.push_back({stage_key(s, b, "down/conv/w"), {block_in, cout}});
                push_bn_keys(keys, stage_key(s, b, "down/bn"), cout);
            }
        }
        cin = cout;
    }
    return keys;
}

ImportedBackbone ImportedBackbone::load(const std::filesystem::path& archive,
                                        const BottleneckBackboneSpec& spec) {
    ImportedBackbone bb(spec);
    std::unordered_map<std::string, Matrix> present;
    for (auto& t : load_archive(archive)) present.emplace(std::move(t.name), std::move(t.value));
    for (const auto& [name, shape] : expected_keys(spec)) {
        auto it = present.find(name);
        if (it == present.end())
            throw DataError("backbone archive missing tensor: " + name);
        if (it->second.rows() != shape.first || it->second.cols() != shape.second)
            throw DataError("backbone tensor " + name + " has shape " +
                            std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", expected " +
                            std::to_string(shape.first) + "x" + std::to_string(shape.second));
        bb.weights_.emplace(name, std::move(it->second));
    }
    return bb;
}

ImportedBackbone ImportedBackbone::random(const BottleneckBackboneSpec& spec, RngStream& rng) {
    ImportedBackbone bb(spec);
    for (const auto& [name, shape] : expected_keys(spec)) {
        Matrix m;
        if (name.ends_with("/var"))
            m = (rng.gaussian(shape.first, shape.second).array().abs() + 0.5).matrix();
        else if (name.ends_with("/gamma"))
            m = Matrix::Ones(shape.first, shape.second) +
                0.1 * rng.gaussian(shape.first, shape.second);
        else
            m = 0.1 * rng.gaussian(shape.first, shape.second);
        bb.weights_.emplace(name, std::move(m));
    }
    return bb;
}

const Matrix& ImportedBackbone::tensor(const std::string& key) const {
    auto it = weights_.find(key);
    if (it == weights_.end()) throw DataError("backbone tensor not loaded: " + key);
    return it->second;
}

FeatureMap ImportedBackbone::extract(const std::vector<Matrix>& planes) const {
    if (planes.size() != 3) throw ConfigError("backbone expects 3 channel planes");
    const int S = static_cast<int>(planes[0].rows());
    for (const auto& p : planes)
        if (p.rows() != S || p.cols() != S)
            throw ConfigError("backbone expects square planes of equal size");
    if (S % 32 != 0 || S < 32) throw ConfigError("backbone input size must be a multiple of 32");

    TokenGrid g{Matrix(S * S, 3), S, S};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) g.t(y * S + x, c) = planes[std::size_t(c)](y, x);

    // stem
    g = conv2d(g, tensor("stem/conv/w"), 7, 7, 2, 3);
    batchnorm(g, tensor("stem/bn/gamma"), tensor("stem/bn/beta"), tensor("stem/bn/mean"),
              tensor("stem/bn/var"));
    relu_inplace(g);
    g = maxpool3x3s2(g);

    for (int s = 1; s <= int(spec_.blocks.size()); ++s) {
        const int width = spec_.widths[std::size_t(s - 1)];
        const int cout = width * spec_.expansion;
        for (int b = 0; b < spec_.blocks[std::size_t(s - 1)]; ++b) {
            const int stride = (b == 0 && s > 1) ? 2 : 1;
            TokenGrid identity = g;

            TokenGrid h = conv2d(g, tensor(stage_key(s, b, "conv1/w")), 1, 1, 1, 0);
            batchnorm(h, tensor(stage_key(s, b, "bn1/gamma")),
                      tensor(stage_key(s, b, "bn1/beta")), tensor(stage_key(s, b, "bn1/mean")),
                      tensor(stage_key(s, b, "bn1/var")));
            relu_inplace(h);
            h = conv2d(h, tensor(stage_key(s, b, "conv2/w")), 3, 3, stride, 1);
            batchnorm(h, tensor(stage_key(s, b, "bn2/gamma")),
                      tensor(stage_key(s, b, "bn2/beta")), tensor(stage_key(s, b, "bn2/mean")),
                      tensor(stage_key(s, b, "bn2/var")));
            relu_inplace(h);
            h = conv2d(h, tensor(stage_key(s, b, "conv3/w")), 1, 1, 1, 0);
            batchnorm(h, tensor(stage_key(s, b, "bn3/gamma")),
                      tensor(stage_key(s, b, "bn3/beta")), tensor(stage_key(s, b, "bn3/mean")),
                      tensor(stage_key(s, b, "bn3/var")));

            if (b == 0) {
                identity = conv2d(identity, tensor(stage_key(s, b, "down/conv/w")), 1, 1,
                                  stride, 0);
                batchnorm(identity, tensor(stage_key(s, b, "down/bn/gamma")),
                          tensor(stage_key(s, b, "down/bn/beta")),
                          tensor(stage_key(s, b, "down/bn/mean")),
                          tensor(stage_key(s, b, "down/bn/var")));
            }
            h.t += identity.t;
            relu_inplace(h);
            g = std::move(h);
        }
    }

    FeatureMap f;
    f.tokens = std::move(g.t);
    f.provenance = BackboneKind::Imported;
    f.H = g.H;
    f.W = g.W;
    return f;
}

}  // namespace diffcap
