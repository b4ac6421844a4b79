#pragma once

// Network parameters and topology operations: construction, modular growth,
// head addition for the non-modular curriculum, and parameter counting.

#include "modgrow/dynamics.hpp"
#include "modgrow/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace modgrow {

enum class NetworkKind { modular, nonmodular };

inline std::string_view to_string(NetworkKind kind)
{
    return kind == NetworkKind::modular ? "modular" : "nonmodular";
}

inline NetworkKind parse_network_kind(std::string_view s)
{
    if (s == "modular") {
        return NetworkKind::modular;
    }
    if (s == "nonmodular" || s == "non-modular") {
        return NetworkKind::nonmodular;
    }
    throw std::invalid_argument("unknown network kind '" + std::string(s) + "'");
}

/// Per-tensor trainability of one module.
struct FreezeFlags {
    bool recurrent = false;
    bool feedforward = false;
    bool input = false;
    bool bias = false;
    bool tau = false;

    bool all() const { return recurrent && feedforward && input && bias && tau; }
    bool any_trainable(bool has_ff) const
    {
        return !recurrent || (has_ff && !feedforward) || !input || !bias || !tau;
    }
    void freeze_all() { recurrent = feedforward = input = bias = tau = true; }
    bool operator==(const FreezeFlags&) const = default;
};

struct ModuleParams {
    Matrix recurrent;    // M x M, zero diagonal
    Matrix feedforward;  // M x M from the previous module; 0 x 0 for the first module
    Vector input;
    Vector bias;
    Vector tau;          // >= 1
    FreezeFlags frozen;

    Eigen::Index size() const { return recurrent.rows(); }
    bool has_feedforward() const { return feedforward.size() != 0; }
};

/// Two-unit linear readout solving the parity task of order `task_n`.
struct ReadoutHead {
    Matrix weights;  // 2 x M_source
    Vector bias;     // 2
    int task_n = 2;
    int source = 0;  // module index (always 0 for non-modular)
    bool frozen = false;
};

/// Initializer scales. Weight matrices draw from U[-1/sqrt(fan_in), 1/sqrt(fan_in)],
/// biases start at zero, tau from U[tau_min, tau_max].
struct InitConfig {
    double tau_min = 1.0;
    double tau_max = 3.0;
};

struct Network {
    NetworkKind kind = NetworkKind::modular;
    std::vector<ModuleParams> modules;
    std::vector<ReadoutHead> heads;
    ActivationConfig activation;
    InitConfig init;

    bool modular() const { return kind == NetworkKind::modular; }
    Eigen::Index module_size() const { return modules.empty() ? 0 : modules.front().size(); }
    Eigen::Index neuron_count() const
    {
        Eigen::Index n = 0;
        for (const auto& m : modules) {
            n += m.size();
        }
        return n;
    }
    /// Largest task order that has a head.
    int max_task() const { return heads.empty() ? 1 : heads.back().task_n; }
    const ReadoutHead* head_for(int task_n) const
    {
        for (const auto& h : heads) {
            if (h.task_n == task_n) {
                return &h;
            }
        }
        return nullptr;
    }
};

/// Options applied when a modular network grows by one module.
struct GrowOptions {
    bool duplicate_recurrent = true;
    bool duplicate_feedforward = true;
    /// Freeze ablations: the new module's tensor is frozen at birth.
    bool freeze_new_recurrent = false;
    bool freeze_new_feedforward = false;
    /// Old modules always lose trainable connections; these extend freezing to
    /// their time constants and readout heads.
    bool freeze_old_tau = true;
    bool freeze_old_heads = true;
};

struct ParameterCount {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
};

namespace detail {

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(rows, cols);
    // Row-major draw order keeps the stream layout independent of Eigen storage.
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            w(i, j) = dist(rng);
        }
    }
    return w;
}

inline Vector uniform_vector(Eigen::Index n, double lo, double hi, Rng& rng)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = dist(rng);
    }
    return v;
}

inline Matrix fresh_recurrent(Eigen::Index m, Rng& rng)
{
    Matrix w = uniform_matrix(m, m, rng);
    w.diagonal().setZero();
    return w;
}

inline ModuleParams fresh_module(Eigen::Index m, bool with_feedforward, const InitConfig& init, Rng& rng)
{
    ModuleParams p;
    p.recurrent = fresh_recurrent(m, rng);
    if (with_feedforward) {
        p.feedforward = uniform_matrix(m, m, rng);
    }
    p.input = uniform_matrix(m, 1, rng).col(0);
    p.bias = Vector::Zero(m);
    p.tau = uniform_vector(m, init.tau_min, init.tau_max, rng);
    return p;
}

inline ReadoutHead fresh_head(Eigen::Index m, int task_n, int source, Rng& rng)
{
    ReadoutHead h;
    h.weights = uniform_matrix(2, m, rng);
    h.bias = Vector::Zero(2);
    h.task_n = task_n;
    h.source = source;
    return h;
}

}  // namespace detail

/// A one-module network with a single head for the 2-parity task.
inline Network new_network(NetworkKind kind, int size, std::uint64_t seed, ActivationConfig activation = {},
                           InitConfig init = {})
{
    if (size <= 0) {
        throw std::invalid_argument("new_network: size must be positive");
    }
    if (!(init.tau_min >= 1.0) || init.tau_max < init.tau_min) {
        throw std::invalid_argument("new_network: tau initializer range must lie in [1, inf)");
    }
    if (!(activation.alpha > 0.0 && activation.alpha < 1.0)) {
        throw std::invalid_argument("new_network: alpha must lie in (0, 1)");
    }
    Rng rng(derive_seed(seed, {stream::init}));
    Network net;
    net.kind = kind;
    net.activation = activation;
    net.init = init;
    net.modules.push_back(detail::fresh_module(size, false, init, rng));
    net.heads.push_back(detail::fresh_head(size, 2, 0, rng));
    return net;
}

/// Appends a module and a head for the next task, freezing everything that
/// came before it.
inline Network grow(Network net, const GrowOptions& opts, std::uint64_t seed)
{
    if (!net.modular()) {
        throw std::invalid_argument("grow: network is not modular");
    }
    const auto m = net.module_size();
    const int index = static_cast<int>(net.modules.size());
    Rng rng(derive_seed(seed, {stream::grow, static_cast<std::uint64_t>(index)}));

    const ModuleParams& prev = net.modules.back();
    ModuleParams fresh = detail::fresh_module(m, true, net.init, rng);
    if (opts.duplicate_recurrent) {
        fresh.recurrent = prev.recurrent;
    }
    if (opts.duplicate_feedforward && prev.has_feedforward()) {
        fresh.feedforward = prev.feedforward;
    }
    fresh.frozen.recurrent = opts.freeze_new_recurrent;
    fresh.frozen.feedforward = opts.freeze_new_feedforward;

    for (auto& mod : net.modules) {
        const bool tau_frozen = mod.frozen.tau || opts.freeze_old_tau;
        mod.frozen.freeze_all();
        mod.frozen.tau = tau_frozen;
    }
    if (opts.freeze_old_heads) {
        for (auto& h : net.heads) {
            h.frozen = true;
        }
    }
    net.modules.push_back(std::move(fresh));
    net.heads.push_back(detail::fresh_head(m, index + 2, index, rng));
    return net;
}

/// Adds a head for the next task on the shared reservoir. Nothing is frozen.
inline Network add_head(Network net, std::uint64_t seed)
{
    if (net.modular()) {
        throw std::invalid_argument("add_head: network is modular; use grow");
    }
    const int task_n = net.max_task() + 1;
    Rng rng(derive_seed(seed, {stream::grow, static_cast<std::uint64_t>(task_n)}));
    net.heads.push_back(detail::fresh_head(net.module_size(), task_n, 0, rng));
    return net;
}

inline ParameterCount count_parameters(const Network& net)
{
    ParameterCount c;
    auto add = [&c](std::int64_t n, bool frozen) {
        c.total += n;
        if (!frozen) {
            c.trainable += n;
        }
    };
    for (const auto& mod : net.modules) {
        const std::int64_t m = mod.size();
        add(m * (m - 1), mod.frozen.recurrent);
        if (mod.has_feedforward()) {
            add(mod.feedforward.size(), mod.frozen.feedforward);
        }
        add(m, mod.frozen.input);
        add(m, mod.frozen.bias);
        add(m, mod.frozen.tau);
    }
    for (const auto& h : net.heads) {
        add(h.weights.size() + h.bias.size(), h.frozen);
    }
    return c;
}

/// Checks the structural invariants of a curriculum network; throws on violation.
inline void validate_network(const Network& net)
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid network: " + what); };
    if (net.modules.empty()) {
        fail("no modules");
    }
    if (!net.modular() && net.modules.size() != 1) {
        fail("non-modular network must have exactly one module");
    }
    const auto m = net.module_size();
    for (std::size_t i = 0; i < net.modules.size(); ++i) {
        const auto& mod = net.modules[i];
        const auto tag = "module " + std::to_string(i) + ": ";
        if (mod.recurrent.rows() != m || mod.recurrent.cols() != m) {
            fail(tag + "recurrent matrix has wrong shape");
        }
        if (mod.input.size() != m || mod.bias.size() != m || mod.tau.size() != m) {
            fail(tag + "vector size mismatch");
        }
        if (mod.has_feedforward() != (i > 0)) {
            fail(tag + "feedforward must be present exactly for modules after the first");
        }
        if (mod.has_feedforward() && (mod.feedforward.rows() != m || mod.feedforward.cols() != m)) {
            fail(tag + "feedforward matrix has wrong shape");
        }
        if (!mod.recurrent.diagonal().isZero(0.0)) {
            fail(tag + "recurrent diagonal must be zero");
        }
        if ((mod.tau.array() < 1.0).any() || !mod.tau.allFinite()) {
            fail(tag + "tau must be >= 1");
        }
    }
    if (net.heads.empty()) {
        fail("no readout heads");
    }
    if (net.modular() && net.heads.size() != net.modules.size()) {
        fail("modular network needs one head per module");
    }
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        const auto& head = net.heads[h];
        const int expected_source = net.modular() ? static_cast<int>(h) : 0;
        if (head.task_n != static_cast<int>(h) + 2 || head.source != expected_source) {
            fail("head " + std::to_string(h) + " has inconsistent task or source");
        }
        if (head.weights.rows() != 2 || head.weights.cols() != m || head.bias.size() != 2) {
            fail("head " + std::to_string(h) + " has wrong shape");
        }
    }
}

inline bool same_values(const Matrix& a, const Matrix& b)
{
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

inline bool operator==(const ModuleParams& a, const ModuleParams& b)
{
    return same_values(a.recurrent, b.recurrent) && same_values(a.feedforward, b.feedforward) &&
           same_values(a.input, b.input) && same_values(a.bias, b.bias) && same_values(a.tau, b.tau) &&
           a.frozen == b.frozen;
}

inline bool operator==(const ReadoutHead& a, const ReadoutHead& b)
{
    return same_values(a.weights, b.weights) && same_values(a.bias, b.bias) && a.task_n == b.task_n &&
           a.source == b.source && a.frozen == b.frozen;
}

inline bool operator==(const Network& a, const Network& b)
{
    return a.kind == b.kind && a.activation.alpha == b.activation.alpha && a.init.tau_min == b.init.tau_min &&
           a.init.tau_max == b.init.tau_max && a.modules == b.modules && a.heads == b.heads;
}

}  // namespace modgrow
