#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffcap/rng.hpp"

namespace diffcap {

enum class ScheduleKind { Sqrt, LinearBeta };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct ScheduleParams {
    ScheduleKind kind = ScheduleKind::Sqrt;
    int T = 2000;
    double alpha0 = 0.99;     // word-noising coefficient, used only at the x_0 step
    double sqrt_offset = 1e-4;
    double beta_min = 1e-4;   // linear_beta only
    double beta_max = 0.02;   // linear_beta only
};

// Immutable after construction; all member functions are pure. Coefficient
// arithmetic stays in 64-bit: the cumulative products underflow in float for
// long horizons.
class NoiseSchedule {
  public:
    static NoiseSchedule build(const ScheduleParams& params);

    int T() const { return static_cast<int>(alphas_.size()); }
    double alpha0() const { return alpha0_; }

    double alpha(int t) const;      // t in 1..T
    double alpha_bar(int t) const;  // t in 0..T, alpha_bar(0) == 1

    // q(x_{t-1} | x_t, x_0) moments
    Matrix posterior_mean(const Matrix& x_t, const Matrix& x0, int t) const;
    double posterior_variance(int t) const;

    // closed-form marginal q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1-abar_t) eps
    Matrix forward_marginal_sample(const Matrix& x0, int t, const Matrix& eps) const;
    // one transition q(x_t | x_{t-1}): sqrt(a_t) x_prev + sqrt(1-a_t) eps
    Matrix forward_step_sample(const Matrix& x_prev, int t, const Matrix& eps) const;

    const ScheduleParams& params() const { return params_; }

    void save(const std::filesystem::path& path) const;
    static NoiseSchedule load(const std::filesystem::path& path);
    std::string serialize() const;
    static NoiseSchedule deserialize(const std::string& text);

  private:
    NoiseSchedule() = default;
    void check_step(int t) const;

    ScheduleParams params_;
    double alpha0_ = 0.99;
    std::vector<double> alphas_;      // alphas_[t-1] = alpha_t
    std::vector<double> alpha_bars_;  // alpha_bars_[t-1] = prod_{i<=t} alpha_i
};

}  // namespace diffcap
