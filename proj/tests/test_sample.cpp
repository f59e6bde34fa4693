#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"

#include "diffcap/errors.hpp"
#include "diffcap/sample.hpp"
#include "diffcap/train.hpp"

using namespace diffcap;

namespace {

struct World {
    DenoiserConfig cfg;
    NoiseSchedule sched;
    Vocabulary vocab;
    ParameterStore store;

    World() : sched(make_sched()), vocab(Vocabulary::build({{"scene", "changed"}})) {
        cfg.d_model = 4;
        cfg.heads = 2;
        cfg.ssa_depth = 1;
        cfg.ffn_width = 6;
        cfg.dropout = 0.0;
        cfg.n = 5;
        cfg.hw = 2;
        cfg.d = 4;
        cfg.c = 3;
        RngStream rng(810);
        init_caption_model(vocab.size(), cfg, store, rng);

        // well-separated embedding rows and an exact rounding head for them
        Matrix table = Matrix::Zero(6, 4);
        for (int i = 0; i < 4; ++i) table(i, i) = 3.0;
        table(4, 0) = -3.0;
        table(5, 1) = -3.0;
        store.at("emb/table").value = table;
        store.at("round/w").value = table.transpose();
        store.at("round/b").value.setZero();
    }

    static NoiseSchedule make_sched() {
        ScheduleParams sp;
        sp.kind = ScheduleKind::LinearBeta;
        sp.T = 8;
        sp.beta_min = 0.05;
        sp.beta_max = 0.3;
        return NoiseSchedule::build(sp);
    }

    Matrix table() const { return store.at("emb/table").value; }
};

}  // namespace

TEST_CASE("a constant predictor is the noiseless fixed point") {
    World w;
    const std::vector<int> ids = w.vocab.encode({"scene", "changed"}, w.cfg.n);
    REQUIRE(ids == std::vector<int>{4, 5, Vocabulary::kEnd, Vocabulary::kPad,
                                    Vocabulary::kPad});
    const Matrix star = embed(w.table(), ids);

    SampleOptions opt;
    opt.disable_noise = true;
    RngStream rng(811);
    SampleResult res = ancestral_sample([&](const Matrix&, int) { return star; }, w.store,
                                        w.vocab, w.sched, w.cfg.n, w.cfg.d, rng, opt);
    CHECK((res.x0 - star).cwiseAbs().maxCoeff() == 0.0);  // final step adopts the prediction
    CHECK(res.ids == ids);
    CHECK(res.caption == "scene changed");
}

TEST_CASE("true-latent predictor recovers the caption with noise on") {
    World w;
    const std::vector<int> ids = w.vocab.encode({"changed"}, w.cfg.n);
    const Matrix star = embed(w.table(), ids);

    int hits = 0;
    for (int trial = 0; trial < 25; ++trial) {
        RngStream rng(mix_seed(812, std::uint64_t(trial)));
        SampleResult res = ancestral_sample([&](const Matrix&, int) { return star; }, w.store,
                                            w.vocab, w.sched, w.cfg.n, w.cfg.d, rng, {});
        if (res.ids == ids) ++hits;
    }
    CHECK(hits == 25);
}

TEST_CASE("trained-path sampling is reproducible and shape-checked") {
    World w;
    Denoiser den(w.cfg, w.store);
    RngStream fr(813);
    const Matrix idi = fr.gaussian(w.cfg.hw, w.cfg.c);

    RngStream r1(97), r2(97), r3(98);
    SampleResult a = sample_caption(idi, den, w.store, w.vocab, w.sched, r1);
    SampleResult b = sample_caption(idi, den, w.store, w.vocab, w.sched, r2);
    SampleResult c = sample_caption(idi, den, w.store, w.vocab, w.sched, r3);
    CHECK((a.x0 - b.x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.ids == b.ids);
    CHECK(a.caption == b.caption);
    CHECK((a.x0 - c.x0).norm() > 0.0);  // different seed, different trajectory
    CHECK(a.x0.rows() == w.cfg.n);
    CHECK(a.x0.cols() == w.cfg.d);

    RngStream r4(97);
    CHECK_THROWS_AS(sample_caption(Matrix::Zero(w.cfg.hw + 1, w.cfg.c), den, w.store, w.vocab,
                                   w.sched, r4),
                    DataError);
}

TEST_CASE("feature-pair overload equals sampling from the precomputed residual") {
    World w;
    Denoiser den(w.cfg, w.store);
    RngStream fr(814);
    FeatureMap before{fr.gaussian(w.cfg.hw, w.cfg.c), BackboneKind::Toy, 1, 2};
    FeatureMap after{fr.gaussian(w.cfg.hw, w.cfg.c), BackboneKind::Toy, 1, 2};

    RngStream r1(55), r2(55);
    SampleResult via_pair = sample_caption(before, after, den, w.store, w.vocab, w.sched, r1);
    SampleResult via_idi = sample_caption(residual_map(before, after), den, w.store, w.vocab,
                                          w.sched, r2);
    CHECK((via_pair.x0 - via_idi.x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(via_pair.ids == via_idi.ids);
}

TEST_CASE("batch sampling: stream isolation and key-stable permutation") {
    World w;
    Denoiser den(w.cfg, w.store);
    RngStream fr(815);
    std::vector<Matrix> idis;
    for (int i = 0; i < 3; ++i) idis.push_back(fr.gaussian(w.cfg.hw, w.cfg.c));
    const std::uint64_t seed = 4242;

    // default keys: item i uses the stream derived from index i
    auto batch = batch_sample(idis, den, w.store, w.vocab, w.sched, seed);
    REQUIRE(batch.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        RngStream rng(mix_seed(seed, i));
        SampleResult solo = sample_caption(idis[i], den, w.store, w.vocab, w.sched, rng);
        CHECK((batch[i].x0 - solo.x0).cwiseAbs().maxCoeff() == 0.0);
        CHECK(batch[i].ids == solo.ids);
    }

    // explicit stable keys: permuting items with their keys permutes outputs
    std::vector<std::uint64_t> keys = {10, 20, 30};
    auto fwd = batch_sample(idis, keys, den, w.store, w.vocab, w.sched, seed);
    std::vector<Matrix> rev_idis = {idis[2], idis[0], idis[1]};
    std::vector<std::uint64_t> rev_keys = {30, 10, 20};
    auto rev = batch_sample(rev_idis, rev_keys, den, w.store, w.vocab, w.sched, seed);
    CHECK((rev[0].x0 - fwd[2].x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rev[1].x0 - fwd[0].x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rev[2].x0 - fwd[1].x0).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(batch_sample(idis, {1, 2}, den, w.store, w.vocab, w.sched, seed),
                    ConfigError);
    CHECK(batch_sample({}, den, w.store, w.vocab, w.sched, seed).empty());
}

TEST_CASE("variance-scaled update is a distinct, flagged variant") {
    World w;
    Denoiser den(w.cfg, w.store);
    RngStream fr(816);
    const Matrix idi = fr.gaussian(w.cfg.hw, w.cfg.c);

    SampleOptions vscaled;
    vscaled.variance_scaled_noise = true;
    RngStream r1(7), r2(7);
    SampleResult a = sample_caption(idi, den, w.store, w.vocab, w.sched, r1);
    SampleResult b = sample_caption(idi, den, w.store, w.vocab, w.sched, r2, vscaled);
    CHECK((a.x0 - b.x0).norm() > 0.0);  // posterior variances differ from their sqrts

    // with every draw zeroed the two variants coincide bitwise
    SampleOptions quiet = vscaled;
    quiet.disable_noise = true;
    SampleOptions quiet_default;
    quiet_default.disable_noise = true;
    RngStream r3(7), r4(7);
    SampleResult c = sample_caption(idi, den, w.store, w.vocab, w.sched, r3, quiet);
    SampleResult d = sample_caption(idi, den, w.store, w.vocab, w.sched, r4, quiet_default);
    CHECK((c.x0 - d.x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clamping snaps predictions onto embedding rows") {
    World w;
    const std::vector<int> ids = w.vocab.encode({"scene"}, w.cfg.n);
    const Matrix star = embed(w.table(), ids);
    RngStream pr(817);
    const Matrix wobble = 0.4 * pr.gaussian(w.cfg.n, w.cfg.d);

    SampleOptions opt;
    opt.clamp_x0 = true;
    opt.disable_noise = true;
    RngStream r1(818);
    SampleResult clamped = ancestral_sample(
        [&](const Matrix&, int) { return Matrix(star + wobble); }, w.store, w.vocab, w.sched,
        w.cfg.n, w.cfg.d, r1, opt);
    CHECK((clamped.x0 - star).cwiseAbs().maxCoeff() == 0.0);
    CHECK(clamped.ids == ids);

    SampleOptions off;
    off.disable_noise = true;
    RngStream r2(818);
    SampleResult raw = ancestral_sample(
        [&](const Matrix&, int) { return Matrix(star + wobble); }, w.store, w.vocab, w.sched,
        w.cfg.n, w.cfg.d, r2, off);
    CHECK((raw.x0 - star).norm() > 0.0);
}

TEST_CASE("latent trace covers every step when requested") {
    World w;
    Denoiser den(w.cfg, w.store);
    RngStream fr(819);
    const Matrix idi = fr.gaussian(w.cfg.hw, w.cfg.c);

    SampleOptions opt;
    opt.record_trace = true;
    RngStream r1(9);
    SampleResult res = sample_caption(idi, den, w.store, w.vocab, w.sched, r1, opt);
    REQUIRE(res.trace.size() == std::size_t(w.sched.T()) + 1);
    CHECK(res.trace.front().first == w.sched.T());
    CHECK(res.trace.back().first == 0);
    for (std::size_t i = 0; i < res.trace.size(); ++i) {
        CHECK(res.trace[i].first == w.sched.T() - int(i));
        CHECK(std::isfinite(res.trace[i].second));
        CHECK(res.trace[i].second >= 0.0);
    }
    CHECK(res.trace.back().second == doctest::Approx(res.x0.norm()).epsilon(1e-15));

    RngStream r2(9);
    SampleResult quiet = sample_caption(idi, den, w.store, w.vocab, w.sched, r2);
    CHECK(quiet.trace.empty());
}

TEST_CASE("failure paths carry the step index or the missing piece") {
    World w;

    RngStream r1(820);
    try {
        ancestral_sample(
            [&](const Matrix& x, int t) {
                if (t == 5) return Matrix(Matrix::Constant(w.cfg.n, w.cfg.d,
                                                           std::numeric_limits<double>::infinity()));
                return x;
            },
            w.store, w.vocab, w.sched, w.cfg.n, w.cfg.d, r1, {});
        FAIL("expected a numeric failure");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 5") != std::string::npos);
    }

    RngStream r2(821);
    CHECK_THROWS_AS(ancestral_sample({}, w.store, w.vocab, w.sched, w.cfg.n, w.cfg.d, r2, {}),
                    ConfigError);
    CHECK_THROWS_AS(ancestral_sample([&](const Matrix&, int) { return Matrix::Zero(1, 1); },
                                     w.store, w.vocab, w.sched, w.cfg.n, w.cfg.d, r2, {}),
                    ConfigError);

    ParameterStore bare;
    CHECK_THROWS_AS(ancestral_sample([&](const Matrix& x, int) { return x; }, bare, w.vocab,
                                     w.sched, w.cfg.n, w.cfg.d, r2, {}),
                    ConfigError);
}
