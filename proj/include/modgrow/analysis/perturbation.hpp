#pragma once

// Norm-scaled Gaussian weight perturbations and robustness curves.

#include "modgrow/forward.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace modgrow {

enum class PerturbTarget { recurrent, feedforward, tau, connections };

inline std::string_view to_string(PerturbTarget t)
{
    switch (t) {
    case PerturbTarget::recurrent: return "recurrent";
    case PerturbTarget::feedforward: return "feedforward";
    case PerturbTarget::tau: return "tau";
    default: return "connections";
    }
}

inline PerturbTarget parse_perturb_target(std::string_view s)
{
    if (s == "recurrent") return PerturbTarget::recurrent;
    if (s == "feedforward") return PerturbTarget::feedforward;
    if (s == "tau") return PerturbTarget::tau;
    if (s == "connections" || s == "all-connections") return PerturbTarget::connections;
    throw std::invalid_argument("unknown perturbation target '" + std::string(s) + "'");
}

struct PerturbationSpec {
    PerturbTarget target = PerturbTarget::connections;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
};

/// Returns W + epsilon * (xi / ||xi||_F) * ||W||_F with xi standard normal.
/// `positive_only` replaces xi by |xi|; `zero_diagonal` keeps xi off the
/// diagonal so that a zero diagonal survives and the distortion stays exact.
inline Matrix perturb(const Matrix& w, double epsilon, std::uint64_t seed, bool positive_only = false,
                      bool zero_diagonal = false)
{
    if (!(epsilon >= 0.0)) {
        throw std::invalid_argument("perturb: epsilon must be non-negative");
    }
    if (epsilon == 0.0 || w.size() == 0) {
        return w;
    }
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix xi(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            const double x = normal(rng);
            xi(i, j) = (zero_diagonal && i == j) ? 0.0 : (positive_only ? std::abs(x) : x);
        }
    }
    const double xi_norm = xi.norm();
    if (xi_norm == 0.0) {
        return w;
    }
    return w + (epsilon * w.norm() / xi_norm) * xi;
}

/// Perturbs every tensor of the targeted class in every module, each with its
/// own normalization. `connections` means recurrent and feedforward together.
inline Network perturb_network(Network net, const PerturbationSpec& spec)
{
    const bool rec = spec.target == PerturbTarget::recurrent || spec.target == PerturbTarget::connections;
    const bool ff = spec.target == PerturbTarget::feedforward || spec.target == PerturbTarget::connections;
    const bool tau = spec.target == PerturbTarget::tau;
    for (std::size_t m = 0; m < net.modules.size(); ++m) {
        auto& mod = net.modules[m];
        if (rec) {
            mod.recurrent = perturb(mod.recurrent, spec.epsilon, derive_seed(spec.seed, {m, 0}), false, true);
        }
        if (ff && mod.has_feedforward()) {
            mod.feedforward = perturb(mod.feedforward, spec.epsilon, derive_seed(spec.seed, {m, 1}));
        }
        if (tau) {
            mod.tau = perturb(mod.tau, spec.epsilon, derive_seed(spec.seed, {m, 2}), true);
        }
        mod.recurrent.diagonal().setZero();
        if ((mod.tau.array() < 1.0).any()) {
            throw std::logic_error("perturb_network: tau dropped below 1");
        }
    }
    return net;
}

struct RobustnessRow {
    PerturbTarget target = PerturbTarget::connections;
    double epsilon = 0.0;
    /// Mean over repeats of the number of tasks with accuracy above the threshold.
    double mean_count = 0.0;
    /// Mean accuracy per task (equivalently per module for modular networks).
    std::map<int, double> accuracy;
};

struct RobustnessOptions {
    int n_repeats = 10;
    int n_eval = 1000;
    double accuracy_threshold = 0.9;
    std::uint64_t seed = 0;
};

/// For each (target, epsilon): perturb fresh copies n_repeats times, evaluate
/// every task, and average. Repeat r uses the same evaluation sequences for
/// every epsilon, so epsilon = 0 reproduces the unperturbed network exactly.
inline std::vector<RobustnessRow> robustness_curve(const Network& net, const std::vector<PerturbTarget>& targets,
                                                   const std::vector<double>& epsilons, const RobustnessOptions& opts)
{
    const auto tasks = task_range(net.max_task());
    std::vector<RobustnessRow> rows;
    for (auto target : targets) {
        for (double eps : epsilons) {
            RobustnessRow row;
            row.target = target;
            row.epsilon = eps;
            for (int r = 0; r < opts.n_repeats; ++r) {
                const auto rep = static_cast<std::uint64_t>(r);
                PerturbationSpec spec{target, eps, derive_seed(opts.seed, {stream::perturb, rep})};
                const Network noisy = perturb_network(net, spec);
                const auto report = evaluate(noisy, tasks, opts.n_eval, derive_seed(opts.seed, {stream::eval, rep}));
                int count = 0;
                for (const auto& [n, acc] : report.accuracy) {
                    count += acc > opts.accuracy_threshold;
                    row.accuracy[n] += acc / opts.n_repeats;
                }
                row.mean_count += static_cast<double>(count) / opts.n_repeats;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace modgrow
