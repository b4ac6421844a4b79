#pragma once

// Cross-entropy loss, exact backpropagation through time, SGD, and the two
// curriculum controllers (head addition for non-modular networks, module
// growth for modular ones).

#include "modgrow/forward.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace modgrow {

/// How per-head losses combine into one objective.
enum class HeadReduction { mean, sum };

struct OptimizerConfig {
    double learning_rate = 1.0;
    int batch_size = 32;
    int batches_per_epoch = 100;
    int max_epochs = 60;
    /// Global-norm clip; <= 0 disables clipping.
    double gradient_clip = 1.0;
    HeadReduction reduction = HeadReduction::sum;
};

/// Which connection class is frozen after being learned once (ablations).
enum class FreezeMode { none, recurrent, feedforward };

inline std::string_view to_string(FreezeMode m)
{
    switch (m) {
    case FreezeMode::recurrent: return "recurrent";
    case FreezeMode::feedforward: return "feedforward";
    default: return "none";
    }
}

inline FreezeMode parse_freeze_mode(std::string_view s)
{
    if (s == "none") return FreezeMode::none;
    if (s == "recurrent") return FreezeMode::recurrent;
    if (s == "feedforward") return FreezeMode::feedforward;
    throw std::invalid_argument("unknown freeze mode '" + std::string(s) + "'");
}

struct CurriculumConfig {
    double threshold = 0.98;
    int eval_sequences = 100;
    /// Stop as soon as this task is solved, before growing (0 = never).
    int stop_at_n_solved = 0;
    bool duplicate_recurrent = true;
    bool duplicate_feedforward = true;
    bool freeze_old_tau = true;
    bool freeze_old_heads = true;
    FreezeMode freeze_mode = FreezeMode::none;
};

struct ModuleGradients {
    Matrix recurrent;
    Matrix feedforward;
    Vector input;
    Vector bias;
    Vector tau;
};

struct HeadGradients {
    Matrix weights;
    Vector bias;
};

/// One entry per module/head. Tensors that are frozen (or absent) stay empty.
struct Gradients {
    std::vector<ModuleGradients> modules;
    std::vector<HeadGradients> heads;

    double squared_norm() const
    {
        double s = 0.0;
        for (const auto& g : modules) {
            s += g.recurrent.squaredNorm() + g.feedforward.squaredNorm() + g.input.squaredNorm() +
                 g.bias.squaredNorm() + g.tau.squaredNorm();
        }
        for (const auto& g : heads) {
            s += g.weights.squaredNorm() + g.bias.squaredNorm();
        }
        return s;
    }
};

struct LossAndGradients {
    double loss = 0.0;
    Gradients gradients;
};

namespace detail {

inline double head_weight(HeadReduction r, std::size_t n_heads)
{
    return r == HeadReduction::mean ? 1.0 / static_cast<double>(n_heads) : 1.0;
}

inline void check_heads(const Network& net, const ParityBatch& batch)
{
    if (net.heads.empty()) {
        throw std::invalid_argument("loss: network has no heads");
    }
    for (const auto& h : net.heads) {
        if (h.task_n > batch.n_max) {
            throw std::invalid_argument("loss: batch carries no targets for task " + std::to_string(h.task_n));
        }
    }
}

/// Lowest module index whose parameters (or whose heads) are trainable;
/// modules.size() when nothing is.
inline int lowest_trainable_module(const Network& net)
{
    int lowest = static_cast<int>(net.modules.size());
    for (std::size_t m = 0; m < net.modules.size(); ++m) {
        if (net.modules[m].frozen.any_trainable(net.modules[m].has_feedforward())) {
            lowest = std::min(lowest, static_cast<int>(m));
            break;
        }
    }
    for (const auto& h : net.heads) {
        if (!h.frozen) {
            lowest = std::min(lowest, h.source);
        }
    }
    return lowest;
}

/// Computes the objective and, optionally, dLoss/dlogits for every head.
inline double cross_entropy(const Network& net, const ParityBatch& batch, const Unroll& run, HeadReduction reduction,
                            std::vector<Matrix>* dlogits)
{
    const double w = head_weight(reduction, net.heads.size());
    double objective = 0.0;
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        const int n = net.heads[h].task_n;
        const Matrix& z = run.logits(h);
        double sum = 0.0;
        std::int64_t count = 0;
        for (int b = 0; b < run.batch(); ++b) {
            count += std::max(0, run.length(b) - (n - 1));
        }
        if (dlogits) {
            (*dlogits)[h] = Matrix::Zero(2, z.cols());
        }
        const double scale = w / static_cast<double>(count);
        for (int b = 0; b < run.batch(); ++b) {
            for (int t = n - 1; t < run.length(b); ++t) {
                const auto c = run.col(t, b);
                const int y = batch.target(static_cast<std::size_t>(b), n, t);
                const double z0 = z(0, c), z1 = z(1, c);
                const double zmax = std::max(z0, z1);
                const double lse = zmax + std::log(std::exp(z0 - zmax) + std::exp(z1 - zmax));
                sum += lse - (y ? z1 : z0);
                if (dlogits) {
                    const double p1 = std::exp(z1 - lse);
                    const double p0 = std::exp(z0 - lse);
                    (*dlogits)[h](0, c) = scale * (p0 - (y == 0 ? 1.0 : 0.0));
                    (*dlogits)[h](1, c) = scale * (p1 - (y == 1 ? 1.0 : 0.0));
                }
            }
        }
        objective += w * sum / static_cast<double>(count);
    }
    return objective;
}

}  // namespace detail

/// Softmax cross-entropy averaged over sequences and valid steps of each head,
/// then combined over heads by `reduction`.
inline double loss(const Network& net, const ParityBatch& batch, HeadReduction reduction = HeadReduction::mean)
{
    detail::check_heads(net, batch);
    detail::Unroll run(net, batch.sequences, static_cast<int>(net.modules.size()));
    return detail::cross_entropy(net, batch, run, reduction, nullptr);
}

/// Exact gradients of `loss(net, batch, reduction)` for every unfrozen tensor.
inline LossAndGradients bptt_gradients(const Network& net, const ParityBatch& batch,
                                       HeadReduction reduction = HeadReduction::mean)
{
    detail::check_heads(net, batch);
    const int n_mod = static_cast<int>(net.modules.size());
    const int lowest = detail::lowest_trainable_module(net);
    detail::Unroll run(net, batch.sequences, lowest - 1);

    LossAndGradients out;
    std::vector<Matrix> dlogits(net.heads.size());
    out.loss = detail::cross_entropy(net, batch, run, reduction, &dlogits);

    const double alpha = net.activation.alpha;
    const int steps = run.steps();
    const int nb = run.batch();
    out.gradients.modules.resize(net.modules.size());
    out.gradients.heads.resize(net.heads.size());

    // Head parameters, and the activity gradient each head injects into its module.
    std::vector<Matrix> injected(net.modules.size());
    for (int m = lowest; m < n_mod; ++m) {
        injected[static_cast<std::size_t>(m)] = Matrix::Zero(net.modules[static_cast<std::size_t>(m)].size(), run.signal().size());
    }
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        const auto& head = net.heads[h];
        if (head.source < lowest) {
            continue;
        }
        const Matrix& r = run.states(head.source);
        if (!head.frozen) {
            out.gradients.heads[h].weights = dlogits[h] * r.transpose();
            out.gradients.heads[h].bias = dlogits[h].rowwise().sum();
        }
        injected[static_cast<std::size_t>(head.source)].noalias() += head.weights.transpose() * dlogits[h];
    }
    if (lowest >= n_mod) {
        return out;
    }

    for (int m = lowest; m < n_mod; ++m) {
        const auto& mod = net.modules[static_cast<std::size_t>(m)];
        auto& g = out.gradients.modules[static_cast<std::size_t>(m)];
        const auto sz = mod.size();
        if (!mod.frozen.recurrent) g.recurrent = Matrix::Zero(sz, sz);
        if (mod.has_feedforward() && !mod.frozen.feedforward) g.feedforward = Matrix::Zero(sz, mod.feedforward.cols());
        if (!mod.frozen.input) g.input = Vector::Zero(sz);
        if (!mod.frozen.bias) g.bias = Vector::Zero(sz);
        if (!mod.frozen.tau) g.tau = Vector::Zero(sz);
    }

    std::vector<Matrix> carry(net.modules.size()), next(net.modules.size());
    std::vector<Vector> inv_tau(net.modules.size()), decay(net.modules.size());
    for (int m = lowest; m < n_mod; ++m) {
        const auto& mod = net.modules[static_cast<std::size_t>(m)];
        carry[static_cast<std::size_t>(m)] = Matrix::Zero(mod.size(), nb);
        next[static_cast<std::size_t>(m)] = Matrix::Zero(mod.size(), nb);
        inv_tau[static_cast<std::size_t>(m)] = mod.tau.cwiseInverse() * ActivationConfig::dt;
        decay[static_cast<std::size_t>(m)] = (1.0 - inv_tau[static_cast<std::size_t>(m)].array()).matrix();
    }

    Matrix grad_r, delta, activated;
    for (int t = steps - 1; t >= 0; --t) {
        const auto c0 = run.col(t, 0);
        const auto s_t = run.signal().segment(c0, nb);
        for (int m = n_mod - 1; m >= lowest; --m) {
            const auto mi = static_cast<std::size_t>(m);
            const auto& mod = net.modules[mi];
            auto& g = out.gradients.modules[mi];

            grad_r = carry[mi] + injected[mi].middleCols(c0, nb);
            const auto drive = run.drives(m).middleCols(c0, nb);
            activated = detail::leaky(drive, alpha).matrix();
            const bool has_prev = t > 0;

            if (!mod.frozen.tau) {
                // dr/dtau = -(a - r_prev) / tau^2
                Matrix diff = activated;
                if (has_prev) {
                    diff -= run.states(m).middleCols(c0 - nb, nb);
                }
                g.tau.array() -= (grad_r.array() * diff.array()).rowwise().sum() * inv_tau[mi].array().square();
            }
            delta.array() = grad_r.array().colwise() * inv_tau[mi].array() *
                            (drive.array() >= 0.0).select(Matrix::Ones(drive.rows(), drive.cols()).array(), alpha);

            if (has_prev) {
                const auto r_prev = run.states(m).middleCols(c0 - nb, nb);
                if (!mod.frozen.recurrent) {
                    g.recurrent.noalias() += delta * r_prev.transpose();
                }
                if (mod.has_feedforward() && !mod.frozen.feedforward) {
                    g.feedforward.noalias() += delta * run.states(m - 1).middleCols(c0 - nb, nb).transpose();
                }
                next[mi].noalias() += mod.recurrent.transpose() * delta;
                if (m - 1 >= lowest) {
                    next[mi - 1].noalias() += mod.feedforward.transpose() * delta;
                }
            }
            if (!mod.frozen.input) {
                g.input.noalias() += delta * s_t.transpose();
            }
            if (!mod.frozen.bias) {
                g.bias += delta.rowwise().sum();
            }
            next[mi].array() += grad_r.array().colwise() * decay[mi].array();
        }
        for (int m = lowest; m < n_mod; ++m) {
            const auto mi = static_cast<std::size_t>(m);
            std::swap(carry[mi], next[mi]);
            next[mi].setZero();
        }
    }
    for (auto& g : out.gradients.modules) {
        if (g.recurrent.size() != 0) {
            g.recurrent.diagonal().setZero();
        }
    }
    return out;
}

/// Re-applies the hard parameter constraints: tau >= 1, zero recurrent diagonal.
inline void enforce_constraints(Network& net)
{
    for (auto& mod : net.modules) {
        mod.tau = mod.tau.cwiseMax(1.0);
        mod.recurrent.diagonal().setZero();
    }
}

/// parameter -= lr * gradient on unfrozen tensors (after optional global-norm
/// clipping), then constraints are re-applied.
inline void sgd_step(Network& net, const Gradients& grads, const OptimizerConfig& cfg)
{
    if (grads.modules.size() != net.modules.size() || grads.heads.size() != net.heads.size()) {
        throw std::invalid_argument("sgd_step: gradient layout does not match network");
    }
    double scale = cfg.learning_rate;
    if (cfg.gradient_clip > 0.0) {
        const double norm = std::sqrt(grads.squared_norm());
        if (norm > cfg.gradient_clip) {
            scale *= cfg.gradient_clip / norm;
        }
    }
    auto apply = [scale](auto& param, const auto& grad, bool frozen, const char* name) {
        if (grad.size() == 0) {
            return;
        }
        if (frozen) {
            throw std::invalid_argument(std::string("sgd_step: gradient supplied for frozen tensor ") + name);
        }
        if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
            throw std::invalid_argument(std::string("sgd_step: shape mismatch for ") + name);
        }
        param -= scale * grad;
    };
    for (std::size_t m = 0; m < net.modules.size(); ++m) {
        auto& mod = net.modules[m];
        const auto& g = grads.modules[m];
        apply(mod.recurrent, g.recurrent, mod.frozen.recurrent, "recurrent");
        apply(mod.feedforward, g.feedforward, mod.frozen.feedforward, "feedforward");
        apply(mod.input, g.input, mod.frozen.input, "input");
        apply(mod.bias, g.bias, mod.frozen.bias, "bias");
        apply(mod.tau, g.tau, mod.frozen.tau, "tau");
    }
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        apply(net.heads[h].weights, grads.heads[h].weights, net.heads[h].frozen, "head weights");
        apply(net.heads[h].bias, grads.heads[h].bias, net.heads[h].frozen, "head bias");
    }
    enforce_constraints(net);
}

/// Stored time constants at the moment task `n_solved` was passed.
struct TauSnapshot {
    int epoch = 0;
    int n_solved = 0;
    std::vector<Vector> tau;  // per module
};

struct EpochRecord {
    int epoch = 0;
    int n_solved = 1;
    int n_max = 2;
    double loss = 0.0;  // mean training objective over the epoch's batches
    std::map<int, double> accuracy;
};

struct CurriculumTrace {
    std::vector<EpochRecord> epochs;
    /// One snapshot per curriculum step (head addition or growth).
    std::vector<TauSnapshot> steps;

    int n_solved() const { return epochs.empty() ? 1 : epochs.back().n_solved; }
};

struct CurriculumResult {
    CurriculumTrace trace;
    Network network;
};

namespace detail {

inline GrowOptions grow_options_for(const CurriculumConfig& cc, int new_module_index)
{
    GrowOptions g;
    g.duplicate_recurrent = cc.duplicate_recurrent;
    g.duplicate_feedforward = cc.duplicate_feedforward;
    g.freeze_old_tau = cc.freeze_old_tau;
    g.freeze_old_heads = cc.freeze_old_heads;
    if (cc.freeze_mode == FreezeMode::recurrent) {
        // Module 0 learns the recurrent weights once; every later module copies them.
        g.duplicate_recurrent = true;
        g.freeze_new_recurrent = true;
    } else if (cc.freeze_mode == FreezeMode::feedforward && new_module_index >= 2) {
        // Module 1 learns the first feedforward block; later modules copy it.
        g.duplicate_feedforward = true;
        g.freeze_new_feedforward = true;
    }
    return g;
}

}  // namespace detail

/// Trains one epoch of `cfg.batches_per_epoch` batches at the network's current
/// hardest task. Returns the mean objective.
inline double train_epoch(Network& net, const OptimizerConfig& cfg, std::uint64_t seed, int epoch)
{
    double total = 0.0;
    const int n_max = net.max_task();
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
        const auto batch_seed =
            derive_seed(seed, {stream::train_batch, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)});
        const ParityBatch batch = gen_batch(n_max, cfg.batch_size, batch_seed);
        const auto lg = bptt_gradients(net, batch, cfg.reduction);
        total += lg.loss;
        sgd_step(net, lg.gradients, cfg);
    }
    return cfg.batches_per_epoch > 0 ? total / cfg.batches_per_epoch : 0.0;
}

/// Called after every epoch with the record just appended.
using EpochCallback = std::function<void(const EpochRecord&, const Network&)>;

/// Curriculum loop: train an epoch, evaluate every active task, and on success
/// advance (add a head, or grow a module). Epoch 0 is the untrained evaluation
/// and always carries the N_solved = 1 sentinel.
inline CurriculumResult run_curriculum(Network net, const OptimizerConfig& opt, const CurriculumConfig& cc,
                                       std::uint64_t seed, const EpochCallback& on_epoch = {})
{
    if (cc.freeze_mode != FreezeMode::none && !net.modular()) {
        throw std::invalid_argument("run_curriculum: freeze modes require a modular network");
    }
    CurriculumResult out;
    int n_solved = 1;

    auto eval_seed = [&](int epoch) { return derive_seed(seed, {stream::eval, static_cast<std::uint64_t>(epoch)}); };

    {
        EpochRecord rec;
        rec.epoch = 0;
        rec.n_solved = n_solved;
        rec.n_max = net.max_task();
        rec.accuracy = evaluate(net, task_range(rec.n_max), cc.eval_sequences, eval_seed(0)).accuracy;
        rec.loss = std::numeric_limits<double>::quiet_NaN();
        out.trace.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, net);
    }

    for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.n_max = net.max_task();
        rec.loss = train_epoch(net, opt, seed, epoch);
        EvalReport report = evaluate(net, task_range(rec.n_max), cc.eval_sequences, eval_seed(epoch));
        rec.accuracy = report.accuracy;
        bool stop = false;
        if (success_criterion(report, rec.n_max, cc.threshold)) {
            n_solved = rec.n_max;
            TauSnapshot snap{epoch, n_solved, {}};
            for (const auto& m : net.modules) {
                snap.tau.push_back(m.tau);
            }
            out.trace.steps.push_back(std::move(snap));
            if (cc.stop_at_n_solved > 0 && n_solved >= cc.stop_at_n_solved) {
                stop = true;
            } else if (net.modular()) {
                net = grow(std::move(net), detail::grow_options_for(cc, static_cast<int>(net.modules.size())), seed);
            } else {
                net = add_head(std::move(net), seed);
            }
        }
        rec.n_solved = n_solved;
        out.trace.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, net);
        if (stop) {
            break;
        }
    }
    out.network = std::move(net);
    return out;
}

struct GeneralizationPoint {
    int k = 0;
    int task_n = 0;
    double accuracy = 0.0;
};

/// Attaches a fresh head for task base_n + K to the module (or reservoir) that
/// solved base_n, trains only that head for `epochs` epochs, and reports its
/// accuracy. K = 0 re-learns the base task as a control.
inline GeneralizationPoint probe_task(const Network& trained, int base_n, int k, int epochs, const OptimizerConfig& opt,
                                      int eval_sequences, std::uint64_t seed)
{
    Network probe = trained;
    for (auto& mod : probe.modules) {
        mod.frozen.freeze_all();
    }
    const int source = probe.modular() ? base_n - 2 : 0;
    if (source < 0 || source >= static_cast<int>(probe.modules.size())) {
        throw std::invalid_argument("probe_task: network has no module for task " + std::to_string(base_n));
    }
    const int task_n = base_n + k;
    Rng rng(derive_seed(seed, {stream::probe, static_cast<std::uint64_t>(k)}));
    probe.heads.clear();
    probe.heads.push_back(detail::fresh_head(probe.module_size(), task_n, source, rng));

    // Only the probe head is trainable, so the unroll never needs to store
    // modules past its source.
    probe.modules.resize(static_cast<std::size_t>(source) + 1);
    const auto probe_seed = derive_seed(seed, {stream::probe, 1000u + static_cast<std::uint64_t>(k)});
    for (int e = 1; e <= epochs; ++e) {
        train_epoch(probe, opt, probe_seed, e);
    }
    const auto report = evaluate(probe, {task_n}, eval_sequences, derive_seed(probe_seed, {stream::eval}));
    return {k, task_n, report.accuracy.at(task_n)};
}

/// Head-only transfer from the base_n solution to tasks base_n + 1 .. base_n + k_max.
inline std::vector<GeneralizationPoint> generalization_run(const Network& trained, int n_solved, int k_max,
                                                           const OptimizerConfig& opt, int eval_sequences,
                                                           std::uint64_t seed, int base_n = 10, int epochs = 10)
{
    if (n_solved != base_n) {
        throw std::invalid_argument("generalization_run: network must have N_solved = " + std::to_string(base_n));
    }
    std::vector<GeneralizationPoint> out;
    for (int k = 1; k <= k_max; ++k) {
        out.push_back(probe_task(trained, base_n, k, epochs, opt, eval_sequences, seed));
    }
    return out;
}

}  // namespace modgrow
