#include <filesystem>

#include "doctest.h"

#include "diffcap/errors.hpp"
#include "diffcap/io.hpp"
#include "diffcap/vision.hpp"

using namespace diffcap;

namespace {

std::vector<Matrix> zero_image() { return std::vector<Matrix>(3, Matrix::Zero(32, 32)); }

std::vector<Matrix> impulse_image(int y, int x) {
    auto planes = zero_image();
    for (auto& p : planes) p(y, x) = 1.0;
    return planes;
}

}  // namespace

TEST_CASE("residual map: zero on identical inputs, antisymmetric, elementwise") {
    RngStream rng(41);
    FeatureMap a{rng.gaussian(4, 3), BackboneKind::Toy, 2, 2};
    FeatureMap b{rng.gaussian(4, 3), BackboneKind::Toy, 2, 2};

    CHECK(residual_map(a, a).norm() == 0.0);
    CHECK((residual_map(a, b) + residual_map(b, a)).norm() == 0.0);

    // scalar-loop oracle
    Matrix r = residual_map(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(r(i, j) == a.tokens(i, j) - b.tokens(i, j));

    FeatureMap other{rng.gaussian(4, 3), BackboneKind::Imported, 2, 2};
    CHECK_THROWS_AS(residual_map(a, other), ConfigError);
    FeatureMap small{rng.gaussian(2, 3), BackboneKind::Toy, 1, 2};
    CHECK_THROWS_AS(residual_map(a, small), ConfigError);
}

TEST_CASE("toy backbone: output shape, determinism, error paths") {
    ParameterStore store;
    RngStream rng(42);
    ToyBackbone::init_params(store, rng);

    RngStream img_rng(43);
    std::vector<Matrix> planes(3);
    for (auto& p : planes) p = (img_rng.gaussian(32, 32).array() * 0.1 + 0.5).matrix();

    FeatureMap f = ToyBackbone::extract(planes, store);
    CHECK(f.tokens.rows() == ToyBackbone::kOutTokens);
    CHECK(f.tokens.cols() == ToyBackbone::kOutChannels);
    CHECK(f.H == 4);
    CHECK(f.W == 4);
    CHECK(f.provenance == BackboneKind::Toy);
    CHECK(f.tokens.allFinite());

    FeatureMap again = ToyBackbone::extract(planes, store);
    CHECK((f.tokens - again.tokens).norm() == 0.0);  // bit-identical

    CHECK_THROWS_AS(ToyBackbone::extract({Matrix::Zero(32, 32)}, store), ConfigError);
    CHECK_THROWS_AS(ToyBackbone::extract(std::vector<Matrix>(3, Matrix::Zero(16, 16)), store),
                    ConfigError);
    ParameterStore empty;
    CHECK_THROWS_AS(ToyBackbone::extract(planes, empty), ConfigError);
}

TEST_CASE("toy backbone: zero image with zero final stage gives a zero map") {
    ParameterStore store;
    RngStream rng(44);
    ToyBackbone::init_params(store, rng);
    for (int k = 0; k < 9; ++k) store.at("backbone/conv3/w" + std::to_string(k)).value.setZero();

    FeatureMap f = ToyBackbone::extract(zero_image(), store);
    CHECK(f.tokens.norm() == 0.0);
}

TEST_CASE("toy backbone: one full-stack stride of translation shifts tokens") {
    ParameterStore store;
    RngStream rng(45);
    ToyBackbone::init_params(store, rng);

    // 3 stride-2 stages -> 8 image pixels per output token; biases are zero at
    // init, so an all-zero background is translation-transparent
    FeatureMap a = ToyBackbone::extract(impulse_image(16, 12), store);
    FeatureMap b = ToyBackbone::extract(impulse_image(16, 20), store);

    double moved = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 3; ++x) {
            const auto ra = a.tokens.row(y * 4 + x);
            const auto rb = b.tokens.row(y * 4 + x + 1);
            CHECK((ra - rb).cwiseAbs().maxCoeff() < 1e-12);
            moved += ra.cwiseAbs().sum();
        }
    CHECK(moved > 0.0);  // the impulse actually produced features
}

TEST_CASE("toy backbone fine-tuning routes gradients into conv weights") {
    ParameterStore store;
    RngStream rng(46);
    ToyBackbone::init_params(store, rng);
    std::vector<Matrix> planes(3);
    for (auto& p : planes) p = (rng.gaussian(32, 32).array() * 0.1 + 0.5).matrix();

    store.zero_grad();
    {
        Tape t;
        Var tokens = ToyBackbone::tokens_var(t, planes, store, /*trainable=*/true);
        t.backward(t.sum_sq(tokens));
    }
    CHECK(store.at("backbone/conv1/w4").grad.norm() > 0.0);
    CHECK(store.at("backbone/conv3/b").grad.norm() > 0.0);

    store.zero_grad();
    {
        Tape t;
        Var tokens = ToyBackbone::tokens_var(t, planes, store, /*trainable=*/false);
        t.backward(t.sum_sq(tokens));
    }
    CHECK(store.grad_norm() == 0.0);  // frozen mode leaves weights untouched
}

TEST_CASE("bottleneck backbone: 32x downsampling and channel widths") {
    auto spec = BottleneckBackboneSpec::tiny();
    RngStream rng(47);
    auto bb = ImportedBackbone::random(spec, rng);

    std::vector<Matrix> planes(3);
    for (auto& p : planes) p = 0.1 * rng.gaussian(64, 64);
    FeatureMap f = bb.extract(planes);
    CHECK(f.H == 2);
    CHECK(f.W == 2);
    CHECK(f.tokens.rows() == 4);
    CHECK(f.tokens.cols() == spec.out_channels());
    CHECK(f.provenance == BackboneKind::Imported);
    CHECK(f.tokens.allFinite());

    FeatureMap again = bb.extract(planes);
    CHECK((f.tokens - again.tokens).norm() == 0.0);

    for (auto& p : planes) p = 0.1 * rng.gaussian(32, 32);
    FeatureMap one = bb.extract(planes);
    CHECK(one.H * one.W == 1);

    for (auto& p : planes) p = 0.1 * rng.gaussian(48, 48);
    CHECK_THROWS_AS(bb.extract(planes), ConfigError);
}

TEST_CASE("expected archive keys pin the 101-layer import contract") {
    auto keys = ImportedBackbone::expected_keys(BottleneckBackboneSpec::resnet101());
    // stem: conv + 4 bn tensors; each block: 3 conv + 9 bn + (5 more at b==0)
    std::size_t want = 5;
    for (int n : {3, 4, 23, 3}) want += std::size_t(n) * 15 + 5;
    CHECK(keys.size() == want);

    auto find = [&](const std::string& name) -> std::pair<int, int> {
        for (const auto& [k, shape] : keys)
            if (k == name) return shape;
        FAIL("missing key ", name);
        return {0, 0};
    };
    CHECK(find("stem/conv/w") == std::pair<int, int>{147, 64});
    CHECK(find("stage1/block0/conv1/w") == std::pair<int, int>{64, 64});
    CHECK(find("stage1/block0/down/conv/w") == std::pair<int, int>{64, 256});
    CHECK(find("stage3/block22/bn3/var") == std::pair<int, int>{1, 1024});
    CHECK(find("stage4/block0/conv2/w") == std::pair<int, int>{512 * 9, 512});
    CHECK(find("stage4/block2/conv3/w") == std::pair<int, int>{512, 2048});
}

TEST_CASE("backbone archive loading validates presence and shapes") {
    auto spec = BottleneckBackboneSpec::tiny();
    RngStream rng(48);
    auto dir = std::filesystem::temp_directory_path() / "diffcap_vision_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "bb.dcta";

    std::vector<NamedTensor> ts;
    for (const auto& [name, shape] : ImportedBackbone::expected_keys(spec)) {
        Matrix m = name.ends_with("/var")
                       ? Matrix((rng.gaussian(shape.first, shape.second).array().abs() + 0.5))
                       : Matrix(0.1 * rng.gaussian(shape.first, shape.second));
        ts.push_back({name, std::move(m)});
    }
    save_archive(path, ts);
    auto bb = ImportedBackbone::load(path, spec);
    std::vector<Matrix> planes(3, Matrix::Zero(32, 32));
    CHECK(bb.extract(planes).tokens.allFinite());

    // drop a tensor -> explicit missing-key error
    ts.pop_back();
    save_archive(path, ts);
    CHECK_THROWS_WITH_AS(ImportedBackbone::load(path, spec),
                         doctest::Contains("missing tensor"), DataError);

    // wrong shape -> explicit shape error
    ts.push_back({ImportedBackbone::expected_keys(spec).back().first, Matrix::Zero(2, 2)});
    save_archive(path, ts);
    CHECK_THROWS_AS(ImportedBackbone::load(path, spec), DataError);
}
