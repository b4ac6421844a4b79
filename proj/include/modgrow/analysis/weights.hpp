#pragma once

// Conservation of weights across consecutive modules.

#include "modgrow/network.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace modgrow {

enum class WeightClass { recurrent, feedforward };

inline std::string_view to_string(WeightClass c)
{
    return c == WeightClass::recurrent ? "recurrent" : "feedforward";
}

struct WeightChangeRow {
    int module_from = 0;  // m - 1
    int module_to = 0;    // m
    WeightClass weight_class = WeightClass::recurrent;
    double variance = std::numeric_limits<double>::quiet_NaN();
    bool flagged = false;
};

struct WeightChangeStats {
    std::vector<WeightChangeRow> rows;

    /// Mean variance over unflagged rows of one class.
    double mean_variance(WeightClass c) const
    {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : rows) {
            if (r.weight_class == c && !r.flagged) {
                sum += r.variance;
                ++n;
            }
        }
        return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
};

namespace detail {

/// Entries of w, optionally without the diagonal, z-scored by their own mean
/// and (population) standard deviation. Empty when the SD is zero.
inline std::vector<double> zscored_entries(const Matrix& w, bool skip_diagonal)
{
    std::vector<double> v;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (!(skip_diagonal && i == j)) {
                v.push_back(w(i, j));
            }
        }
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    if (!(sd > 0.0)) {
        return {};
    }
    for (double& x : v) x = (x - mean) / sd;
    return v;
}

}  // namespace detail

/// Variance of the difference between z-scored corresponding weights of two
/// matrices. NaN when either matrix is degenerate.
inline double normalized_change_variance(const Matrix& previous, const Matrix& next, bool skip_diagonal)
{
    if (previous.rows() != next.rows() || previous.cols() != next.cols()) {
        throw std::invalid_argument("normalized_change_variance: shape mismatch");
    }
    const auto a = detail::zscored_entries(previous, skip_diagonal);
    const auto b = detail::zscored_entries(next, skip_diagonal);
    if (a.empty() || b.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += b[i] - a[i];
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = b[i] - a[i] - mean;
        var += d * d;
    }
    return var / static_cast<double>(a.size());
}

/// Per consecutive module pair: variance of normalized recurrent changes
/// (diagonal excluded) and of normalized feedforward changes (pairs where both
/// modules have feedforward input).
inline WeightChangeStats weight_change_variance(const Network& net)
{
    if (!net.modular()) {
        throw std::invalid_argument("weight_change_variance: network is not modular");
    }
    if (net.modules.size() < 3) {
        throw std::invalid_argument("weight_change_variance: need at least 3 modules");
    }
    WeightChangeStats stats;
    for (std::size_t m = 1; m < net.modules.size(); ++m) {
        const auto& prev = net.modules[m - 1];
        const auto& next = net.modules[m];
        WeightChangeRow rec{static_cast<int>(m - 1), static_cast<int>(m), WeightClass::recurrent};
        rec.variance = normalized_change_variance(prev.recurrent, next.recurrent, true);
        rec.flagged = std::isnan(rec.variance);
        stats.rows.push_back(rec);
        if (prev.has_feedforward() && next.has_feedforward()) {
            WeightChangeRow ff{static_cast<int>(m - 1), static_cast<int>(m), WeightClass::feedforward};
            ff.variance = normalized_change_variance(prev.feedforward, next.feedforward, false);
            ff.flagged = std::isnan(ff.variance);
            stats.rows.push_back(ff);
        }
    }
    return stats;
}

}  // namespace modgrow
