#include "diffcap/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffcap/errors.hpp"

namespace diffcap {

namespace {

// Largest per-step noise rate we allow; keeps every alpha_t strictly positive
// when the closed-form alpha_bar curve dives through zero at the horizon.
constexpr double kMaxBeta = 0.999;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::Sqrt: return "sqrt";
        case ScheduleKind::LinearBeta: return "linear_beta";
    }
    throw ConfigError("unknown schedule kind");
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "sqrt") return ScheduleKind::Sqrt;
    if (s == "linear_beta") return ScheduleKind::LinearBeta;
    throw ConfigError("unknown schedule kind: " + s);
}

NoiseSchedule NoiseSchedule::build(const ScheduleParams& params) {
    if (params.T < 1) throw ConfigError("schedule T must be >= 1");
    if (!(params.alpha0 > 0.0 && params.alpha0 < 1.0))
        throw ConfigError("alpha0 must lie in (0,1)");

    NoiseSchedule s;
    s.params_ = params;
    s.alpha0_ = params.alpha0;
    const int T = params.T;
    s.alphas_.resize(T);
    s.alpha_bars_.resize(T);

    if (params.kind == ScheduleKind::Sqrt) {
        // Target curve abar(t) = 1 - sqrt(t/T + s). It crosses zero before
        // t = T, so realize it through per-step ratios with a beta cap: the
        // curve is reproduced exactly while it is a valid product of
        // probabilities, and the tail decays geometrically after that.
        double abar_prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double target = 1.0 - std::sqrt(double(t) / T + params.sqrt_offset);
            double a = target / abar_prev;
            a = std::max(a, 1.0 - kMaxBeta);
            double abar = abar_prev * a;
            s.alphas_[t - 1] = a;
            s.alpha_bars_[t - 1] = abar;
            abar_prev = abar;
        }
    } else {
        if (params.beta_min < 0.0 || params.beta_max < 0.0 ||
            params.beta_min >= 1.0 || params.beta_max >= 1.0)
            throw ConfigError("linear_beta bounds must lie in [0,1)");
        double abar = 1.0;
        for (int t = 1; t <= T; ++t) {
            double beta = (T == 1) ? params.beta_min
                                   : params.beta_min + (params.beta_max - params.beta_min) *
                                                           (double(t - 1) / (T - 1));
            double a = 1.0 - beta;
            abar *= a;
            s.alphas_[t - 1] = a;
            s.alpha_bars_[t - 1] = abar;
        }
    }

    for (double a : s.alphas_)
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError("schedule produced alpha outside (0,1]");
    return s;
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > T()) {
        throw ConfigError("diffusion step t=" + std::to_string(t) + " outside 1.." +
                          std::to_string(T()));
    }
}

double NoiseSchedule::alpha(int t) const {
    check_step(t);
    return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;  // empty product
    check_step(t);
    return alpha_bars_[t - 1];
}

Matrix NoiseSchedule::posterior_mean(const Matrix& x_t, const Matrix& x0, int t) const {
    check_step(t);
    const double at = alpha(t);
    const double ab_t = alpha_bar(t);
    const double ab_prev = alpha_bar(t - 1);
    if (ab_t >= 1.0) throw NumericError("degenerate schedule: alpha_bar(t) == 1 has no posterior");
    const double c_xt = std::sqrt(at) * (1.0 - ab_prev) / (1.0 - ab_t);
    const double c_x0 = std::sqrt(ab_prev) * (1.0 - at) / (1.0 - ab_t);
    return c_xt * x_t + c_x0 * x0;
}

double NoiseSchedule::posterior_variance(int t) const {
    check_step(t);
    const double at = alpha(t);
    const double ab_t = alpha_bar(t);
    const double ab_prev = alpha_bar(t - 1);
    if (ab_t >= 1.0) throw NumericError("degenerate schedule: alpha_bar(t) == 1 has no posterior");
    return (1.0 - at) * (1.0 - ab_prev) / (1.0 - ab_t);
}

Matrix NoiseSchedule::forward_marginal_sample(const Matrix& x0, int t, const Matrix& eps) const {
    check_step(t);
    if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
        throw ConfigError("eps shape does not match x0");
    const double ab = alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Matrix NoiseSchedule::forward_step_sample(const Matrix& x_prev, int t, const Matrix& eps) const {
    check_step(t);
    if (eps.rows() != x_prev.rows() || eps.cols() != x_prev.cols())
        throw ConfigError("eps shape does not match x_prev");
    const double a = alpha(t);
    return std::sqrt(a) * x_prev + std::sqrt(1.0 - a) * eps;
}

std::string NoiseSchedule::serialize() const {
    std::ostringstream os;
    os << "schedule v1\n";
    os << "kind " << to_string(params_.kind) << "\n";
    os << "T " << params_.T << "\n";
    os << "alpha0 " << fmt_double(params_.alpha0) << "\n";
    os << "sqrt_offset " << fmt_double(params_.sqrt_offset) << "\n";
    os << "beta_min " << fmt_double(params_.beta_min) << "\n";
    os << "beta_max " << fmt_double(params_.beta_max) << "\n";
    return os.str();
}

NoiseSchedule NoiseSchedule::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string header, version;
    is >> header >> version;
    if (header != "schedule" || version != "v1")
        throw DataError("not a schedule file (bad header)");
    ScheduleParams p;
    std::string key;
    while (is >> key) {
        std::string value;
        if (!(is >> value)) throw DataError("schedule file: missing value for key " + key);
        if (key == "kind") p.kind = schedule_kind_from_string(value);
        else if (key == "T") p.T = std::stoi(value);
        else if (key == "alpha0") p.alpha0 = std::stod(value);
        else if (key == "sqrt_offset") p.sqrt_offset = std::stod(value);
        else if (key == "beta_min") p.beta_min = std::stod(value);
        else if (key == "beta_max") p.beta_max = std::stod(value);
        else throw DataError("schedule file: unknown key " + key);
    }
    return build(p);
}

void NoiseSchedule::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schedule file: " + path.string());
    out << serialize();
}

NoiseSchedule NoiseSchedule::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read schedule file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

}  // namespace diffcap
