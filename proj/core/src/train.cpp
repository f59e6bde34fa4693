#include "diffcap/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "diffcap/errors.hpp"
#include "diffcap/io.hpp"

namespace diffcap {

void TrainConfig::validate(const NoiseSchedule& sched) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (T != sched.T())
        throw ConfigError("train T (" + std::to_string(T) + ") does not match the schedule (" +
                          std::to_string(sched.T()) + ")");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be >= 0");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
}

void init_caption_model(int vocab_size, const DenoiserConfig& cfg, ParameterStore& store,
                        RngStream& rng) {
    cfg.validate();
    if (vocab_size < 1) throw ConfigError("vocabulary must be non-empty");
    Parameter& emb = store.ensure("emb/table", vocab_size, cfg.d);
    if (emb.value.isZero()) emb.value = rng.gaussian(vocab_size, cfg.d);
    Parameter& rw = store.ensure("round/w", cfg.d, vocab_size);
    if (rw.value.isZero()) rw.value = rng.xavier(cfg.d, vocab_size);
    store.ensure("round/b", 1, vocab_size);
    Denoiser::init_params(cfg, store, rng);
}

namespace {

void check_example(const std::vector<int>& ids, const DenoiserConfig& cfg, int vocab_size) {
    if (static_cast<int>(ids.size()) != cfg.n)
        throw DataError("token sequence length " + std::to_string(ids.size()) +
                        " does not match the model length " + std::to_string(cfg.n));
    for (int id : ids)
        if (id < 0 || id >= vocab_size)
            throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab_size));
}

}  // namespace

LossVars training_loss_graph(Tape& t, const std::vector<int>& ids, Var idi, int step,
                             const Matrix& eps0, const Matrix& eps_t, const Denoiser& den,
                             ParameterStore& store, const NoiseSchedule& sched, bool train_mode,
                             RngStream* dropout_rng) {
    const DenoiserConfig& cfg = den.config();
    if (step < 1 || step > sched.T())
        throw ConfigError("diffusion step " + std::to_string(step) + " outside 1.." +
                          std::to_string(sched.T()));
    if (!store.contains("emb/table") || !store.contains("round/w") || !store.contains("round/b"))
        throw ConfigError("caption model parameters are not initialized");
    const int vocab_size = static_cast<int>(store.at("emb/table").value.rows());
    check_example(ids, cfg, vocab_size);
    if (eps0.rows() != cfg.n || eps0.cols() != cfg.d || eps_t.rows() != cfg.n ||
        eps_t.cols() != cfg.d)
        throw ConfigError("noise draws must be n x d");

    Var emb_table = t.param(store.at("emb/table"));
    Var emb = t.gather_rows(emb_table, ids);  // clean rows, n x d
    Var x0 = t.add(emb, t.input(std::sqrt(1.0 - sched.alpha0()) * eps0));
    const double abar = sched.alpha_bar(step);
    Var x_t = t.add(t.mul_scalar(x0, std::sqrt(abar)),
                    t.input(std::sqrt(1.0 - abar) * eps_t));
    Var x0_hat = den.denoise_var(t, x_t, step, idi, train_mode, dropout_rng);

    const double inv_nd = 1.0 / (static_cast<double>(cfg.n) * cfg.d);
    LossVars out;
    out.l_T = t.mul_scalar(t.sum_sq(x0), sched.alpha_bar(sched.T()) * inv_nd);
    // at the last denoising step the target anchors to the clean embedding
    Var target = (step == 1) ? emb : x0;
    out.l_mse = t.mul_scalar(t.sum_sq(t.sub(x0_hat, target)), inv_nd);
    Var logits = t.add_rowvec(t.matmul(x0, t.param(store.at("round/w"))),
                              t.param(store.at("round/b")));
    out.l_round = t.cross_entropy_rows(logits, ids);
    out.total = t.add(t.add(out.l_T, out.l_mse), out.l_round);
    return out;
}

LossVars batch_loss_graph(Tape& t, const std::vector<const std::vector<int>*>& ids,
                          const std::vector<Var>& idi, const std::vector<int>& steps,
                          const std::vector<Matrix>& eps0, const std::vector<Matrix>& eps_t,
                          const Denoiser& den, ParameterStore& store,
                          const NoiseSchedule& sched, bool train_mode, RngStream* dropout_rng) {
    const std::size_t b = ids.size();
    if (b == 0) throw ConfigError("empty batch");
    if (idi.size() != b || steps.size() != b || eps0.size() != b || eps_t.size() != b)
        throw ConfigError("batch component lengths disagree");

    LossVars acc = training_loss_graph(t, *ids[0], idi[0], steps[0], eps0[0], eps_t[0], den,
                                       store, sched, train_mode, dropout_rng);
    for (std::size_t i = 1; i < b; ++i) {
        LossVars one = training_loss_graph(t, *ids[i], idi[i], steps[i], eps0[i], eps_t[i], den,
                                           store, sched, train_mode, dropout_rng);
        acc.l_T = t.add(acc.l_T, one.l_T);
        acc.l_mse = t.add(acc.l_mse, one.l_mse);
        acc.l_round = t.add(acc.l_round, one.l_round);
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    acc.l_T = t.mul_scalar(acc.l_T, inv_b);
    acc.l_mse = t.mul_scalar(acc.l_mse, inv_b);
    acc.l_round = t.mul_scalar(acc.l_round, inv_b);
    acc.total = t.add(t.add(acc.l_T, acc.l_mse), acc.l_round);
    return acc;
}

LossBreakdown training_loss(const std::vector<int>& ids, const Matrix& idi, int step,
                            const Matrix& eps0, const Matrix& eps_t, const Denoiser& den,
                            ParameterStore& store, const NoiseSchedule& sched) {
    Tape t;
    LossVars lv = training_loss_graph(t, ids, t.input(idi), step, eps0, eps_t, den, store,
                                      sched, false, nullptr);
    LossBreakdown out;
    out.l_T = t.val(lv.l_T)(0, 0);
    out.l_mse = t.val(lv.l_mse)(0, 0);
    out.l_round = t.val(lv.l_round)(0, 0);
    out.total = t.val(lv.total)(0, 0);
    if (!std::isfinite(out.total)) throw NumericError("non-finite training loss");
    return out;
}

AdamW::AdamW(ParameterStore& store, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : store_(store), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    m_.reserve(store.size());
    v_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Matrix& val = store[i].value;
        m_.push_back(Matrix::Zero(val.rows(), val.cols()));
        v_.push_back(Matrix::Zero(val.rows(), val.cols()));
    }
}

void AdamW::step() {
    if (store_.size() != m_.size())
        throw std::logic_error("parameter store changed size under the optimizer");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_.size(); ++i) {
        Parameter& p = store_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        const Matrix update =
            ((m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + eps_)).matrix();
        p.value -= lr_ * (update + weight_decay_ * p.value);
    }
}

double clip_gradients(ParameterStore& store, double max_norm) {
    const double norm = store.grad_norm();
    if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (std::size_t i = 0; i < store.size(); ++i) store[i].grad *= scale;
    }
    return norm;
}

TrainResult train_loop(const std::vector<TrainExample>& data, const TrainConfig& cfg,
                       const Denoiser& den, ParameterStore& store, const NoiseSchedule& sched,
                       std::ostream* jsonl, const IdiBuilder& idi_builder,
                       const std::function<void(int)>& on_step) {
    cfg.validate(sched);
    if (data.empty()) throw DataError("training dataset is empty");
    if (!store.contains("emb/table"))
        throw ConfigError("caption model parameters are not initialized");
    const DenoiserConfig& dcfg = den.config();
    const int vocab_size = static_cast<int>(store.at("emb/table").value.rows());
    for (std::size_t i = 0; i < data.size(); ++i) {
        check_example(data[i].ids, dcfg, vocab_size);
        if (!idi_builder && (data[i].idi.rows() != dcfg.hw || data[i].idi.cols() != dcfg.c))
            throw DataError("example " + std::to_string(i) + " features are not hw x c");
    }

    AdamW opt(store, cfg.lr, cfg.weight_decay);
    RngStream order_rng(mix_seed(cfg.seed, fnv1a64("train/order")));
    RngStream noise_rng(mix_seed(cfg.seed, fnv1a64("train/noise")));
    RngStream drop_rng(mix_seed(cfg.seed, fnv1a64("train/dropout")));

    TrainResult res;
    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(
                order_rng.uniform_int(0, static_cast<int>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            ++step;
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));

            Tape t;
            std::vector<const std::vector<int>*> ids;
            std::vector<Var> idis;
            std::vector<int> steps_drawn;
            std::vector<Matrix> eps0, eps_t;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t idx = order[k];
                ids.push_back(&data[idx].ids);
                idis.push_back(idi_builder ? idi_builder(t, idx) : t.input(data[idx].idi));
                steps_drawn.push_back(noise_rng.uniform_int(1, cfg.T));
                eps0.push_back(noise_rng.gaussian(dcfg.n, dcfg.d));
                eps_t.push_back(noise_rng.gaussian(dcfg.n, dcfg.d));
            }
            LossVars lv = batch_loss_graph(t, ids, idis, steps_drawn, eps0, eps_t, den, store,
                                           sched, true, &drop_rng);
            LossBreakdown lb;
            lb.l_T = t.val(lv.l_T)(0, 0);
            lb.l_mse = t.val(lv.l_mse)(0, 0);
            lb.l_round = t.val(lv.l_round)(0, 0);
            lb.total = t.val(lv.total)(0, 0);
            if (!std::isfinite(lb.total))
                throw NumericError("training diverged at step " + std::to_string(step) +
                                   " (non-finite loss)");

            store.zero_grad();
            t.backward(lv.total);
            clip_gradients(store, cfg.clip_norm);
            double lr_t = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch - 1));
            if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
                lr_t *= static_cast<double>(step) / cfg.warmup_steps;
            opt.set_lr(lr_t);
            opt.step();

            res.steps = step;
            res.last = lb;
            if (jsonl && step % cfg.log_every == 0) {
                Json line;
                line["step"] = step;
                line["epoch"] = epoch;
                line["l_T"] = lb.l_T;
                line["l_mse"] = lb.l_mse;
                line["l_round"] = lb.l_round;
                line["total"] = lb.total;
                line["lr"] = opt.lr();
                (*jsonl) << line.dump() << "\n";
            }
            if (on_step) on_step(step);
            if (cfg.max_steps > 0 && step >= cfg.max_steps) return res;
        }
    }
    return res;
}

}  // namespace diffcap
