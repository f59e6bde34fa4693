#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "diffcap/denoiser.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/tape.hpp"

namespace diffcap {

struct TrainConfig {
    int epochs = 564;
    int batch_size = 32;
    int T = 2000;  // must equal the schedule's step count
    double lr = 1e-4;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // global L2 clip; 0 disables
    std::uint64_t seed = 0;
    int log_every = 1;
    int max_steps = 0;       // 0 = run all epochs
    int warmup_steps = 0;    // linear ramp of the rate over the first N steps
    double lr_decay = 1.0;   // multiplicative per-epoch factor

    void validate(const NoiseSchedule& sched) const;
};

struct LossBreakdown {
    double l_T = 0.0;     // terminal-mean regularizer, trains embeddings only
    double l_mse = 0.0;   // denoising target error
    double l_round = 0.0; // rounding cross-entropy
    double total = 0.0;
};

// graph handles for the same quantities, so callers can backpropagate any
// single term in isolation
struct LossVars {
    Var l_T, l_mse, l_round, total;
};

struct TrainExample {
    std::vector<int> ids;  // length n
    Matrix idi;            // hw x c residual features
};

// Creates the trainable bundle: "emb/table" (V x d, unit-scale gaussian),
// "round/w" (d x V, xavier), "round/b" (1 x V, zero), and every denoiser
// parameter. Idempotent on an already-initialized store.
void init_caption_model(int vocab_size, const DenoiserConfig& cfg, ParameterStore& store,
                        RngStream& rng);

// One example's loss graph:
//   x_0   = gather(emb, ids) + sqrt(1 - alpha_0) * eps0
//   x_t   = sqrt(abar_t) x_0 + sqrt(1 - abar_t) * eps_t
//   l_T   = mean |sqrt(abar_T) x_0|^2
//   l_mse = mean |x0_hat - x_0|^2        (t > 1)
//           mean |x0_hat - gather(emb)|^2 (t = 1, anchors to the clean rows)
//   l_round = mean_i -log softmax(x_0 W + b)[i, ids[i]]   (every position,
//             padding included)
// Means are over all matrix entries (positions x dims) so batch reduction is
// a plain average of per-example terms.
LossVars training_loss_graph(Tape& t, const std::vector<int>& ids, Var idi, int step,
                             const Matrix& eps0, const Matrix& eps_t, const Denoiser& den,
                             ParameterStore& store, const NoiseSchedule& sched, bool train_mode,
                             RngStream* dropout_rng);

// batch mean of per-example terms; all vectors must have equal length
LossVars batch_loss_graph(Tape& t, const std::vector<const std::vector<int>*>& ids,
                          const std::vector<Var>& idi, const std::vector<int>& steps,
                          const std::vector<Matrix>& eps0, const std::vector<Matrix>& eps_t,
                          const Denoiser& den, ParameterStore& store,
                          const NoiseSchedule& sched, bool train_mode, RngStream* dropout_rng);

// value-only evaluation (dropout off, no gradient side effects)
LossBreakdown training_loss(const std::vector<int>& ids, const Matrix& idi, int step,
                            const Matrix& eps0, const Matrix& eps_t, const Denoiser& den,
                            ParameterStore& store, const NoiseSchedule& sched);

// Adam with decoupled weight decay over every parameter in a store. The store
// must not grow or shrink after construction.
class AdamW {
  public:
    AdamW(ParameterStore& store, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();  // applies current grads; caller zeroes them between steps
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    std::int64_t steps_taken() const { return t_; }

  private:
    ParameterStore& store_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

// scales all grads so the global L2 norm is at most max_norm (no-op when
// max_norm <= 0); returns the pre-clip norm
double clip_gradients(ParameterStore& store, double max_norm);

// optional per-example feature subgraph override (e.g. in-graph backbone for
// fine-tuning); default uses the precomputed TrainExample::idi as a constant
using IdiBuilder = std::function<Var(Tape&, std::size_t example_index)>;

struct TrainResult {
    int steps = 0;
    LossBreakdown last;
};

// Epoch/batch loop per the training algorithm: one uniformly random step
// index per example, fresh gaussian draws for word noising and the forward
// marginal, backprop of the summed objective, global-norm clip, AdamW update.
// Emits one JSON line per logged step to `jsonl` (step, epoch, l_T, l_mse,
// l_round, total, lr). Throws NumericError naming the step on divergence.
TrainResult train_loop(const std::vector<TrainExample>& data, const TrainConfig& cfg,
                       const Denoiser& den, ParameterStore& store, const NoiseSchedule& sched,
                       std::ostream* jsonl = nullptr, const IdiBuilder& idi_builder = {},
                       const std::function<void(int)>& on_step = {});

}  // namespace diffcap
