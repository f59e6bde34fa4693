// Microbenchmarks for the hot paths: schedule construction, denoiser
// forward passes, the fused training-step graph (forward + backward),
// ancestral sampling, and the caption metrics.

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "diffcap/denoiser.hpp"
#include "diffcap/metrics.hpp"
#include "diffcap/rng.hpp"
#include "diffcap/sample.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/textspace.hpp"
#include "diffcap/train.hpp"

namespace {

using namespace diffcap;

DenoiserConfig bench_config(int ssa_depth) {
    DenoiserConfig cfg;
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.ssa_depth = ssa_depth;
    cfg.dropout = 0.0;
    cfg.n = 16;
    cfg.hw = 16;
    cfg.d = 16;
    cfg.c = 32;
    return cfg;
}

// Trained-shape world: parameter store, schedule, and one conditioning map.
struct BenchWorld {
    DenoiserConfig cfg;
    ParameterStore store;
    NoiseSchedule sched;
    Matrix idi;
    std::vector<int> ids;

    explicit BenchWorld(int ssa_depth, int T = 200)
        : cfg(bench_config(ssa_depth)), sched(make_sched(T)) {
        RngStream rng(4242);
        init_caption_model(/*vocab_size=*/32, cfg, store, rng);
        idi = rng.gaussian(cfg.hw, cfg.c);
        ids.assign(static_cast<std::size_t>(cfg.n), 0);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i % 32);
    }

    static NoiseSchedule make_sched(int T) {
        ScheduleParams sp;
        sp.kind = ScheduleKind::Sqrt;
        sp.T = T;
        return NoiseSchedule::build(sp);
    }
};

void BM_ScheduleBuild(benchmark::State& state) {
    ScheduleParams sp;
    sp.kind = state.range(0) == 0 ? ScheduleKind::Sqrt : ScheduleKind::LinearBeta;
    sp.T = static_cast<int>(state.range(1));
    for (auto _ : state) {
        NoiseSchedule sched = NoiseSchedule::build(sp);
        benchmark::DoNotOptimize(sched);
    }
}
BENCHMARK(BM_ScheduleBuild)->Args({0, 200})->Args({0, 2000})->Args({1, 2000});

void BM_DenoiserForward(benchmark::State& state) {
    BenchWorld w(static_cast<int>(state.range(0)));
    const Denoiser den(w.cfg, w.store);
    RngStream rng(7);
    const Matrix x_t = rng.gaussian(w.cfg.n, w.cfg.d);
    for (auto _ : state) {
        Matrix x0_hat = den.denoise(x_t, /*step=*/100, w.idi);
        benchmark::DoNotOptimize(x0_hat);
    }
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(3)->Arg(6);

void BM_CrossModeFusion(benchmark::State& state) {
    BenchWorld w(/*ssa_depth=*/1);
    const Denoiser den(w.cfg, w.store);
    RngStream rng(7);
    const Matrix x_t = rng.gaussian(w.cfg.n, w.cfg.d);
    for (auto _ : state) {
        Tape t;
        Var x_emb = den.embed_text(t, t.input(x_t), /*step=*/100);
        Var idi_emb = den.embed_image(t, t.input(w.idi), /*step=*/100);
        Var x_fus = den.cmf_forward(t, x_emb, idi_emb, /*train=*/false, nullptr);
        benchmark::DoNotOptimize(t.val(x_fus));
    }
}
BENCHMARK(BM_CrossModeFusion);

void BM_TrainStepGraph(benchmark::State& state) {
    BenchWorld w(/*ssa_depth=*/3);
    const Denoiser den(w.cfg, w.store);
    RngStream rng(11);
    const Matrix eps0 = rng.gaussian(w.cfg.n, w.cfg.d);
    const Matrix eps_t = rng.gaussian(w.cfg.n, w.cfg.d);
    for (auto _ : state) {
        Tape t;
        LossVars lv = training_loss_graph(t, w.ids, t.input(w.idi), /*step=*/50, eps0, eps_t, den,
                                          w.store, w.sched, /*train_mode=*/true, nullptr);
        t.backward(lv.total);
        benchmark::DoNotOptimize(t.val(lv.total));
        w.store.zero_grad();
    }
}
BENCHMARK(BM_TrainStepGraph);

void BM_AncestralSample(benchmark::State& state) {
    BenchWorld w(/*ssa_depth=*/3, /*T=*/static_cast<int>(state.range(0)));
    const Denoiser den(w.cfg, w.store);
    std::vector<Tokens> corpus;
    for (int i = 0; i < 28; ++i) corpus.push_back({"word" + std::to_string(i)});
    const Vocabulary vocab = Vocabulary::build(corpus);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        RngStream rng(++seed);
        SampleResult res = sample_caption(w.idi, den, w.store, vocab, w.sched, rng);
        benchmark::DoNotOptimize(res.ids);
    }
}
BENCHMARK(BM_AncestralSample)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

std::vector<Tokens> metric_corpus(int sentences, std::uint64_t seed) {
    RngStream rng(seed);
    const std::vector<std::string> words = {"the", "a",    "building", "road",  "appears",
                                            "on",  "bare", "land",     "scene", "vegetation"};
    std::vector<Tokens> out;
    for (int s = 0; s < sentences; ++s) {
        Tokens sent;
        const int len = rng.uniform_int(6, 12);
        for (int i = 0; i < len; ++i)
            sent.push_back(words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(words.size()) - 1))]);
        out.push_back(std::move(sent));
    }
    return out;
}

void BM_Bleu4(benchmark::State& state) {
    const std::vector<Tokens> cands = metric_corpus(64, 1);
    std::vector<std::vector<Tokens>> refs;
    for (const Tokens& c : metric_corpus(64, 2)) refs.push_back({c});
    for (auto _ : state) {
        double score = bleu4(cands, refs);
        benchmark::DoNotOptimize(score);
    }
}
BENCHMARK(BM_Bleu4);

void BM_RougeL(benchmark::State& state) {
    const std::vector<Tokens> cands = metric_corpus(64, 1);
    std::vector<std::vector<Tokens>> refs;
    for (const Tokens& c : metric_corpus(64, 2)) refs.push_back({c});
    for (auto _ : state) {
        double score = rouge_l_mean(cands, refs);
        benchmark::DoNotOptimize(score);
    }
}
BENCHMARK(BM_RougeL);

}  // namespace

BENCHMARK_MAIN();
