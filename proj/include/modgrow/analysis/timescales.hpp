#pragma once

// Effective timescales: lagged autocorrelation of neuron activity, fitted with
// one- and two-exponential models and selected by AIC.

#include "modgrow/network.hpp"
#include "modgrow/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace modgrow {

/// Biased (divide-by-T) autocorrelation for lags 0..max_lag. Returns nullopt
/// for a series without variance.
inline std::optional<std::vector<double>> autocorrelation(const std::vector<double>& x, int max_lag)
{
    const auto n = static_cast<int>(x.size());
    if (max_lag < 1 || n <= max_lag) {
        throw std::invalid_argument("autocorrelation: series must be longer than max_lag");
    }
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= n;
    std::vector<double> centered(x.size());
    for (int t = 0; t < n; ++t) {
        centered[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(t)] - mean;
    }
    std::vector<double> cov(static_cast<std::size_t>(max_lag) + 1, 0.0);
    for (int k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (int t = 0; t + k < n; ++t) {
            s += centered[static_cast<std::size_t>(t)] * centered[static_cast<std::size_t>(t + k)];
        }
        cov[static_cast<std::size_t>(k)] = s / n;
    }
    if (!(cov[0] > 1e-14 * (1.0 + mean * mean))) {
        return std::nullopt;
    }
    std::vector<double> ac(cov.size());
    for (std::size_t k = 0; k < cov.size(); ++k) {
        ac[k] = cov[k] / cov[0];
    }
    ac[0] = 1.0;
    return ac;
}

/// Accumulates lagged products of many channels on the fly so that long
/// activity traces never need to be stored.
class StreamingAutocorrelation {
public:
    StreamingAutocorrelation(int channels, int max_lag)
        : channels_(channels), max_lag_(max_lag), window_(static_cast<std::size_t>(max_lag) + 1),
          lagged_(static_cast<std::size_t>(channels) * window_, 0.0), ring_(lagged_.size(), 0.0),
          head_(static_cast<std::size_t>(channels) * max_lag_, 0.0), shift_(static_cast<std::size_t>(channels), 0.0),
          sum_(static_cast<std::size_t>(channels), 0.0)
    {
        if (channels < 1 || max_lag < 1) {
            throw std::invalid_argument("StreamingAutocorrelation: need channels >= 1 and max_lag >= 1");
        }
    }

    void push(const Eigen::Ref<const Vector>& x)
    {
        const std::size_t slot = static_cast<std::size_t>(count_ % static_cast<long long>(window_));
        for (int c = 0; c < channels_; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            if (count_ == 0) {
                shift_[ci] = x(c);
            }
            const double v = x(c) - shift_[ci];
            double* ring = &ring_[ci * window_];
            double* acc = &lagged_[ci * window_];
            ring[slot] = v;
            sum_[ci] += v;
            if (count_ < max_lag_) {
                head_[ci * static_cast<std::size_t>(max_lag_) + static_cast<std::size_t>(count_)] = v;
            }
            const int lags = static_cast<int>(std::min<long long>(count_, max_lag_));
            for (int k = 0; k <= lags; ++k) {
                const std::size_t j = (slot + window_ - static_cast<std::size_t>(k)) % window_;
                acc[k] += v * ring[j];
            }
        }
        ++count_;
    }

    long long count() const { return count_; }

    /// Same estimator as autocorrelation(); nullopt for a constant channel.
    std::optional<std::vector<double>> result(int channel) const
    {
        const auto n = count_;
        if (n <= max_lag_) {
            throw std::logic_error("StreamingAutocorrelation: series shorter than max_lag");
        }
        const auto ci = static_cast<std::size_t>(channel);
        const double* ring = &ring_[ci * window_];
        const double* acc = &lagged_[ci * window_];
        const double total = sum_[ci];
        const double mean = total / static_cast<double>(n);
        std::vector<double> cov(window_);
        double head_sum = 0.0;  // sum of the first k values
        double tail_sum = 0.0;  // sum of the last k values
        for (int k = 0; k <= max_lag_; ++k) {
            if (k > 0) {
                head_sum += head_[ci * static_cast<std::size_t>(max_lag_) + static_cast<std::size_t>(k - 1)];
                const long long idx = n - k;
                tail_sum += ring[static_cast<std::size_t>(idx % static_cast<long long>(window_))];
            }
            const double p = total - tail_sum;  // x_0 .. x_{n-1-k}
            const double q = total - head_sum;  // x_k .. x_{n-1}
            const double s = acc[k] - mean * (p + q) + static_cast<double>(n - k) * mean * mean;
            cov[static_cast<std::size_t>(k)] = s / static_cast<double>(n);
        }
        const double scale = shift_[ci] + mean;
        if (!(cov[0] > 1e-14 * (1.0 + scale * scale))) {
            return std::nullopt;
        }
        std::vector<double> ac(window_);
        for (std::size_t k = 0; k < window_; ++k) {
            ac[k] = cov[k] / cov[0];
        }
        ac[0] = 1.0;
        return ac;
    }

private:
    int channels_;
    int max_lag_;
    std::size_t window_;
    std::vector<double> lagged_;
    std::vector<double> ring_;
    std::vector<double> head_;
    std::vector<double> shift_;
    std::vector<double> sum_;
    long long count_ = 0;
};

enum class TimescaleModel { single, double_exp };

inline std::string_view to_string(TimescaleModel m)
{
    return m == TimescaleModel::single ? "single" : "double";
}

struct TimescaleFit {
    TimescaleModel model = TimescaleModel::single;
    std::vector<double> timescales;  // ascending
    std::vector<double> amplitudes;  // matching timescales
    double offset = 0.0;
    double aic_single = 0.0;
    double aic_double = 0.0;
    double reported_timescale = std::numeric_limits<double>::quiet_NaN();
    /// Both models' slow timescales, kept for output.
    double single_timescale = std::numeric_limits<double>::quiet_NaN();
    double double_slow_timescale = std::numeric_limits<double>::quiet_NaN();
    bool flagged = false;
    std::string flag_reason;
};

struct FitOptions {
    double tau_min = 0.05;
    /// Upper search bound as a multiple of the largest fitted lag.
    double tau_max_factor = 10.0;
    int grid_single = 200;
    int grid_double = 40;
    /// Residuals below this fraction of the curve's scale count as exact.
    double rss_floor_rel = 1e-6;
    /// Flag fits that explain less than this share of the variance around a constant.
    double min_explained = 0.5;
    /// Unless the curve is fitted exactly, weight each lag by the inverse of its
    /// sampling variance and select the model on residuals whitened with the
    /// full sampling covariance of the autocorrelation.
    bool correlated_residuals = true;
    /// Smallest ratio between the two timescales of an admissible double fit.
    double min_timescale_ratio = 1.5;
    /// Smallest share of the total amplitude carried by each double component.
    double min_component_share = 0.05;
};

namespace detail {

struct ExpLinearFit {
    double rss = std::numeric_limits<double>::infinity();
    std::vector<double> coef;
    Vector residual;
};

/// Least squares of an autocorrelation on exponentials exp(-k/tau_i) and a
/// constant over lags k = 1..K, optionally weighted by per-lag standard
/// deviations.
class ExpDesign {
public:
    explicit ExpDesign(const std::vector<double>& y, const Vector* sd = nullptr)
        : sd_(sd), lags_(static_cast<Eigen::Index>(y.size() - 1))
    {
        target_.resize(lags_);
        for (Eigen::Index i = 0; i < lags_; ++i) {
            target_(i) = y[static_cast<std::size_t>(i) + 1];
        }
        ones_ = Vector::Ones(lags_);
        whiten(target_);
        whiten(ones_);
    }

    /// Whitened exp(-k/tau) for k = 1..K.
    Vector column(double tau) const
    {
        Vector c(lags_);
        for (Eigen::Index i = 0; i < lags_; ++i) {
            c(i) = std::exp(-static_cast<double>(i + 1) / tau);
        }
        whiten(c);
        return c;
    }

    /// Fit on the given columns plus the constant. Coefficients are
    /// (amplitudes..., offset).
    ExpLinearFit fit(std::initializer_list<const Vector*> columns) const
    {
        Matrix basis(lags_, static_cast<Eigen::Index>(columns.size() + 1));
        Eigen::Index j = 0;
        for (const Vector* c : columns) {
            basis.col(j++) = *c;
        }
        basis.col(j) = ones_;
        const Vector coef = basis.colPivHouseholderQr().solve(target_);
        ExpLinearFit out;
        out.residual = basis * coef - target_;
        out.rss = out.residual.squaredNorm();
        if (!std::isfinite(out.rss)) {
            out.rss = std::numeric_limits<double>::infinity();
        }
        out.coef.assign(coef.data(), coef.data() + coef.size());
        return out;
    }

    ExpLinearFit fit_constant() const { return fit({}); }
    ExpLinearFit fit_single(double tau) const
    {
        const Vector c = column(tau);
        return fit({&c});
    }
    ExpLinearFit fit_double(double ta, double tb) const
    {
        const Vector a = column(ta), b = column(tb);
        return fit({&a, &b});
    }

private:
    void whiten(Vector& v) const
    {
        if (sd_) {
            v.array() /= sd_->array();
        }
    }

    const Vector* sd_;
    Eigen::Index lags_;
    Vector target_;
    Vector ones_;
};

/// sum_i coef_i exp(-k/tau_i) + offset, the offset being the last coefficient.
inline double exp_curve(const std::vector<double>& coef, const std::vector<double>& taus, double k)
{
    double v = coef.back();
    for (std::size_t i = 0; i < taus.size(); ++i) {
        v += coef[i] * std::exp(-k / taus[i]);
    }
    return v;
}

inline double aic(double rss, std::size_t n, int params, double floor)
{
    const double r = std::max(rss, floor);
    return static_cast<double>(n) * std::log(r / static_cast<double>(n)) + 2.0 * params;
}

/// Large-sample covariance of sample autocorrelations at lags 1..K (Bartlett),
/// up to the common factor 1/T, with AC(v) taken as zero beyond lag K.
inline Matrix bartlett_covariance(const std::vector<double>& ac)
{
    const auto K = static_cast<long>(ac.size()) - 1;
    auto rho = [&](long v) {
        v = std::abs(v);
        return v <= K ? ac[static_cast<std::size_t>(v)] : 0.0;
    };
    // g(m) = sum over all v of AC(v) AC(v + m).
    std::vector<double> g(static_cast<std::size_t>(2 * K + 1));
    for (long m = 0; m <= 2 * K; ++m) {
        double sum = 0.0;
        for (long v = -K; v <= K; ++v) {
            sum += rho(v) * rho(v + m);
        }
        g[static_cast<std::size_t>(m)] = sum;
    }
    auto G = [&](long m) { return g[static_cast<std::size_t>(std::abs(m))]; };
    Matrix cov(K, K);
    for (long k = 1; k <= K; ++k) {
        for (long l = k; l <= K; ++l) {
            const double c = G(l - k) + G(k + l) + 2.0 * rho(k) * rho(l) * G(0) - 2.0 * rho(k) * G(l) - 2.0 * rho(l) * G(k);
            cov(k - 1, l - 1) = c;
            cov(l - 1, k - 1) = c;
        }
    }
    return cov;
}

/// Golden-section minimization of f on [lo, hi].
template <typename F>
double golden_section(F&& f, double lo, double hi, int iterations = 80)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iterations; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return fc < fd ? c : d;
}

/// Nelder-Mead in two dimensions with a fixed iteration budget.
template <typename F>
std::array<double, 2> nelder_mead_2d(F&& f, std::array<double, 2> start, double step, int iterations = 300)
{
    std::array<std::array<double, 2>, 3> pts{start, {start[0] + step, start[1]}, {start[0], start[1] + step}};
    std::array<double, 3> val{f(pts[0]), f(pts[1]), f(pts[2])};
    for (int it = 0; it < iterations; ++it) {
        std::array<int, 3> order{0, 1, 2};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return val[static_cast<std::size_t>(a)] < val[static_cast<std::size_t>(b)]; });
        const auto best = static_cast<std::size_t>(order[0]);
        const auto mid = static_cast<std::size_t>(order[1]);
        const auto worst = static_cast<std::size_t>(order[2]);
        const std::array<double, 2> centroid{(pts[best][0] + pts[mid][0]) / 2, (pts[best][1] + pts[mid][1]) / 2};
        auto along = [&](double t) {
            return std::array<double, 2>{centroid[0] + t * (pts[worst][0] - centroid[0]),
                                         centroid[1] + t * (pts[worst][1] - centroid[1])};
        };
        const auto reflected = along(-1.0);
        const double fr = f(reflected);
        if (fr < val[best]) {
            const auto expanded = along(-2.0);
            const double fe = f(expanded);
            if (fe < fr) {
                pts[worst] = expanded;
                val[worst] = fe;
            } else {
                pts[worst] = reflected;
                val[worst] = fr;
            }
        } else if (fr < val[mid]) {
            pts[worst] = reflected;
            val[worst] = fr;
        } else {
            const auto contracted = along(0.5);
            const double fc = f(contracted);
            if (fc < val[worst]) {
                pts[worst] = contracted;
                val[worst] = fc;
            } else {
                for (auto i : {mid, worst}) {
                    pts[i] = {(pts[i][0] + pts[best][0]) / 2, (pts[i][1] + pts[best][1]) / 2};
                    val[i] = f(pts[i]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (val[i] < val[best]) {
            best = i;
        }
    }
    return pts[best];
}

}  // namespace detail


/// Fits a*exp(-k/tau) + c and a*exp(-k/tau1) + b*exp(-k/tau2) + c to the
/// autocorrelation at lags 1..K and keeps the model with the lower AIC.
/// Timescales are searched on a log grid and refined locally, so the result is
/// deterministic. A curve that is not fitted exactly is refitted with each lag
/// weighted by its large-sample variance, and the two models are compared on
/// residuals whitened with the full large-sample covariance, because errors of
/// neighbouring lags are strongly correlated.
inline TimescaleFit fit_timescales(const std::vector<double>& ac, const FitOptions& opts = {})
{
    if (ac.size() < 8) {
        throw std::invalid_argument("fit_timescales: need at least 7 lags");
    }
    for (double v : ac) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("fit_timescales: autocorrelation values must be finite");
        }
    }
    const std::size_t n = ac.size() - 1;
    const double lo = std::log(opts.tau_min);
    const double hi = std::log(opts.tau_max_factor * static_cast<double>(n));
    double scale = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        scale = std::max(scale, std::abs(ac[k]));
    }
    const double floor = static_cast<double>(n) * std::pow(opts.rss_floor_rel * std::max(scale, 1e-300), 2);

    struct Candidates {
        double tau_single = 0.0;
        detail::ExpLinearFit single;
        double ta = 0.0, tb = 0.0;
        detail::ExpLinearFit dbl;
        detail::ExpLinearFit constant;
    };
    auto search = [&](const Vector* sd) {
        const detail::ExpDesign design(ac, sd);
        Candidates c;
        // One timescale.
        auto rss1 = [&](double log_tau) { return design.fit_single(std::exp(log_tau)).rss; };
        const double step1 = (hi - lo) / (opts.grid_single - 1);
        int best_i = 0;
        double best_v = std::numeric_limits<double>::infinity();
        for (int i = 0; i < opts.grid_single; ++i) {
            const double v = rss1(lo + i * step1);
            if (v < best_v) {
                best_v = v;
                best_i = i;
            }
        }
        c.tau_single = std::exp(detail::golden_section(rss1, lo + std::max(0, best_i - 1) * step1,
                                                       lo + std::min(opts.grid_single - 1, best_i + 1) * step1));
        c.single = design.fit_single(c.tau_single);

        // Two timescales, ordered tau_a < tau_b.
        auto rss2 = [&](const std::array<double, 2>& x) {
            const double a = std::min(x[0], x[1]), b = std::max(x[0], x[1]);
            if (b - a < 0.02 || a < lo || b > hi) {
                return std::numeric_limits<double>::infinity();
            }
            return design.fit_double(std::exp(a), std::exp(b)).rss;
        };
        const double step2 = (hi - lo) / (opts.grid_double - 1);
        std::vector<Vector> grid;
        for (int i = 0; i < opts.grid_double; ++i) {
            grid.push_back(design.column(std::exp(lo + i * step2)));
        }
        std::array<double, 2> best2{lo, lo + step2};
        double best2_v = std::numeric_limits<double>::infinity();
        for (int i = 0; i < opts.grid_double; ++i) {
            for (int j = i + 1; j < opts.grid_double; ++j) {
                const double v = design.fit({&grid[static_cast<std::size_t>(i)], &grid[static_cast<std::size_t>(j)]}).rss;
                if (v < best2_v) {
                    best2_v = v;
                    best2 = {lo + i * step2, lo + j * step2};
                }
            }
        }
        auto refined = detail::nelder_mead_2d(rss2, best2, step2 / 2);
        if (!(rss2(refined) <= best2_v)) {
            refined = best2;
        }
        c.ta = std::exp(std::min(refined[0], refined[1]));
        c.tb = std::exp(std::max(refined[0], refined[1]));
        c.dbl = design.fit_double(c.ta, c.tb);
        c.constant = design.fit_constant();
        return c;
    };

    Candidates c = search(nullptr);
    double aic_single_rss = c.single.rss, aic_double_rss = c.dbl.rss;
    double aic_floor = floor;
    if (opts.correlated_residuals && c.dbl.rss > floor) {
        // Sampling covariance of the smooth first-pass curve, so the weights do not
        // depend on the noise.
        std::vector<double> model(ac.size());
        model[0] = 1.0;
        for (std::size_t k = 1; k <= n; ++k) {
            model[k] = detail::exp_curve(c.dbl.coef, {c.ta, c.tb}, static_cast<double>(k));
        }
        Matrix cov = detail::bartlett_covariance(model);
        const Vector sd = cov.diagonal().cwiseSqrt();
        c = search(&sd);

        // Models are compared on residuals whitened with the full covariance.
        const double ridge = 1e-10 * cov.diagonal().mean();
        Eigen::LLT<Matrix> llt(cov);
        for (int attempt = 0; llt.info() != Eigen::Success && attempt < 8; ++attempt) {
            cov.diagonal().array() += ridge * std::pow(100.0, attempt);
            llt.compute(cov);
        }
        if (llt.info() == Eigen::Success) {
            const auto lower = llt.matrixL();
            auto whitened_rss = [&](const std::vector<double>& taus) {
                Matrix basis(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(taus.size() + 1));
                Vector target(static_cast<Eigen::Index>(n));
                for (std::size_t k = 1; k <= n; ++k) {
                    const auto row = static_cast<Eigen::Index>(k - 1);
                    for (std::size_t j = 0; j < taus.size(); ++j) {
                        basis(row, static_cast<Eigen::Index>(j)) = std::exp(-static_cast<double>(k) / taus[j]);
                    }
                    basis(row, static_cast<Eigen::Index>(taus.size())) = 1.0;
                    target(row) = ac[k];
                }
                lower.solveInPlace(basis);
                lower.solveInPlace(target);
                const Vector coef = basis.colPivHouseholderQr().solve(target);
                return (basis * coef - target).squaredNorm();
            };
            aic_single_rss = whitened_rss({c.tau_single});
            aic_double_rss = whitened_rss({c.ta, c.tb});
            aic_floor = 0.0;
        } else {
            aic_single_rss = c.single.rss;
            aic_double_rss = c.dbl.rss;
        }
    }
    const double rss_const = c.constant.rss;

    TimescaleFit fit;
    fit.aic_single = detail::aic(aic_single_rss, n, 3, aic_floor);
    fit.aic_double = detail::aic(aic_double_rss, n, 5, aic_floor);
    fit.single_timescale = c.tau_single;
    fit.double_slow_timescale = c.tb;

    // A double fit has failed when a component is non-positive or negligible,
    // the slow timescale lies beyond the fitted lags or the two nearly coincide.
    const double amp_total = c.dbl.coef[0] + c.dbl.coef[1];
    const bool double_ok = std::isfinite(c.dbl.rss) && c.dbl.coef[0] > 0.0 && c.dbl.coef[1] > 0.0 &&
                           std::min(c.dbl.coef[0], c.dbl.coef[1]) >= opts.min_component_share * amp_total &&
                           c.tb <= static_cast<double>(n) && c.tb >= opts.min_timescale_ratio * c.ta;

    double rss_best = 0.0;
    if (double_ok && fit.aic_double < fit.aic_single) {
        fit.model = TimescaleModel::double_exp;
        fit.timescales = {c.ta, c.tb};
        fit.amplitudes = {c.dbl.coef[0], c.dbl.coef[1]};
        fit.offset = c.dbl.coef[2];
        rss_best = c.dbl.rss;
    } else {
        fit.model = TimescaleModel::single;
        fit.timescales = {c.tau_single};
        fit.amplitudes = {c.single.coef[0]};
        fit.offset = c.single.coef[1];
        rss_best = c.single.rss;
    }
    fit.reported_timescale = fit.timescales.back();

    const double slow_amp = fit.amplitudes.back();
    const double log_rep = std::log(fit.reported_timescale);
    if (!std::isfinite(fit.reported_timescale) || !std::isfinite(rss_best)) {
        fit.flagged = true;
        fit.flag_reason = "non-finite fit";
    } else if (log_rep <= lo + 1e-3 || log_rep >= hi - 1e-3) {
        fit.flagged = true;
        fit.flag_reason = "timescale at search bound";
    } else if (!(slow_amp > 0.0)) {
        fit.flagged = true;
        fit.flag_reason = "non-positive amplitude";
    } else if (rss_const > floor && 1.0 - rss_best / rss_const < opts.min_explained) {
        fit.flagged = true;
        fit.flag_reason = "fit explains too little variance";
    }
    return fit;
}

struct NeuronTimescale {
    int module = 0;
    int index = 0;
    double trained_tau = 0.0;
    std::optional<TimescaleFit> fit;
    /// Effective timescale; NaN when flagged or constant.
    double effective = std::numeric_limits<double>::quiet_NaN();
    /// Lag-one correlation is within sampling noise: reported at one step.
    bool below_resolution = false;
    bool flagged = false;
    std::string flag_reason;
};

struct EffectiveTimescales {
    std::vector<NeuronTimescale> neurons;
    /// Mean effective timescale per module over unflagged neurons (NaN if none).
    std::vector<double> module_mean;
    std::vector<double> module_trained_mean;
    double network_mean = std::numeric_limits<double>::quiet_NaN();
};

struct TimescaleOptions {
    long long horizon = 100000;
    int max_lag = 200;
    std::uint64_t seed = 0;
    FitOptions fit;
};

/// Drives the network with one long random bit stream, records every neuron's
/// activity and fits its autocorrelation.
inline EffectiveTimescales effective_timescales(const Network& net, const TimescaleOptions& opts = {})
{
    const auto n_mod = net.modules.size();
    const auto total = static_cast<int>(net.neuron_count());
    if (opts.horizon <= opts.max_lag) {
        throw std::invalid_argument("effective_timescales: horizon must exceed max_lag");
    }
    StreamingAutocorrelation lagged(total, opts.max_lag);
    Rng rng(derive_seed(opts.seed, {stream::timescale_drive}));
    std::uniform_int_distribution<int> bit(0, 1);

    const double alpha = net.activation.alpha;
    std::vector<Vector> prev, cur, inv_tau, decay;
    for (const auto& mod : net.modules) {
        prev.push_back(Vector::Zero(mod.size()));
        cur.push_back(Vector::Zero(mod.size()));
        inv_tau.push_back(mod.tau.cwiseInverse());
        decay.push_back((1.0 - inv_tau.back().array()).matrix());
    }
    Vector all(total);
    Vector drive;
    for (long long t = 0; t < opts.horizon; ++t) {
        const double s = bit(rng);
        Eigen::Index offset = 0;
        for (std::size_t m = 0; m < n_mod; ++m) {
            const auto& mod = net.modules[m];
            drive.noalias() = mod.recurrent * prev[m];
            if (m > 0) {
                drive.noalias() += mod.feedforward * prev[m - 1];
            }
            drive += mod.input * s;
            drive += mod.bias;
            cur[m].array() = decay[m].array() * prev[m].array() +
                             inv_tau[m].array() * (drive.array() >= 0.0).select(drive.array(), alpha * drive.array());
            all.segment(offset, mod.size()) = cur[m];
            offset += mod.size();
        }
        lagged.push(all);
        std::swap(prev, cur);
    }

    EffectiveTimescales out;
    const double resolution = 3.0 / std::sqrt(static_cast<double>(opts.horizon));
    int id = 0;
    for (std::size_t m = 0; m < n_mod; ++m) {
        double sum = 0.0, tsum = 0.0;
        int count = 0;
        for (Eigen::Index i = 0; i < net.modules[m].size(); ++i, ++id) {
            NeuronTimescale nt;
            nt.module = static_cast<int>(m);
            nt.index = static_cast<int>(i);
            nt.trained_tau = net.modules[m].tau(i);
            tsum += nt.trained_tau;
            const auto ac = lagged.result(id);
            if (!ac) {
                nt.flagged = true;
                nt.flag_reason = "constant activity";
            } else if (std::abs((*ac)[1]) < resolution) {
                nt.below_resolution = true;
                nt.effective = ActivationConfig::dt;
            } else {
                nt.fit = fit_timescales(*ac, opts.fit);
                if (nt.fit->flagged) {
                    nt.flagged = true;
                    nt.flag_reason = nt.fit->flag_reason;
                } else {
                    nt.effective = nt.fit->reported_timescale;
                }
            }
            if (!nt.flagged) {
                sum += nt.effective;
                ++count;
            }
            out.neurons.push_back(std::move(nt));
        }
        out.module_mean.push_back(count ? sum / count : std::numeric_limits<double>::quiet_NaN());
        out.module_trained_mean.push_back(tsum / static_cast<double>(net.modules[m].size()));
    }
    double sum = 0.0;
    int count = 0;
    for (const auto& nt : out.neurons) {
        if (!nt.flagged) {
            sum += nt.effective;
            ++count;
        }
    }
    if (count) {
        out.network_mean = sum / count;
    }
    return out;
}

struct TauSummaryRow {
    int n_solved = 0;
    int module = 0;  // module whose tau is summarized (0 for non-modular)
    double mean = 0.0;
    double sd = 0.0;
    int count = 0;
};

namespace detail {

inline TauSummaryRow summarize_tau(int n_solved, int module, const Vector& tau)
{
    TauSummaryRow row{n_solved, module, tau.mean(), 0.0, static_cast<int>(tau.size())};
    row.sd = std::sqrt((tau.array() - row.mean).square().mean());
    return row;
}

}  // namespace detail

/// Trained time constants per curriculum step: modular networks report the
/// module that solved N; non-modular networks report every neuron at the step
/// when N was solved.
inline std::vector<TauSummaryRow> trained_timescale_summary(const CurriculumTrace& trace, NetworkKind kind)
{
    std::vector<TauSummaryRow> rows;
    for (const auto& step : trace.steps) {
        if (kind == NetworkKind::modular) {
            const int m = step.n_solved - 2;
            if (m >= 0 && m < static_cast<int>(step.tau.size())) {
                rows.push_back(detail::summarize_tau(step.n_solved, m, step.tau[static_cast<std::size_t>(m)]));
            }
        } else if (!step.tau.empty()) {
            rows.push_back(detail::summarize_tau(step.n_solved, 0, step.tau.front()));
        }
    }
    return rows;
}

/// Per-module statistics of the stored time constants of one network.
inline std::vector<TauSummaryRow> trained_timescale_summary(const Network& net)
{
    std::vector<TauSummaryRow> rows;
    for (std::size_t m = 0; m < net.modules.size(); ++m) {
        const int n = net.modular() ? static_cast<int>(m) + 2 : net.max_task();
        rows.push_back(detail::summarize_tau(n, static_cast<int>(m), net.modules[m].tau));
    }
    return rows;
}

}  // namespace modgrow
