#pragma once

// Batched unrolling of a network over parity sequences, plus the single-sequence
// forward pass and accuracy evaluation built on top of it.

#include "modgrow/network.hpp"
#include "modgrow/parity.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

namespace modgrow {

namespace detail {

inline auto leaky(const Matrix& x, double alpha)
{
    return (x.array() >= 0.0).select(x.array(), alpha * x.array());
}

/// Runs the recurrence for a whole batch at once. Column t * batch + b of every
/// stored matrix belongs to sequence b at timestep t. Padded steps past a
/// sequence's end are computed but carry no supervision.
class Unroll {
public:
    /// Modules with index >= `store_from` keep their full state and drive history.
    Unroll(const Network& net, const std::vector<Bits>& sequences, int store_from)
        : batch_(static_cast<int>(sequences.size())), store_from_(std::max(0, store_from))
    {
        if (sequences.empty()) {
            throw std::invalid_argument("unroll: empty batch");
        }
        for (const auto& s : sequences) {
            if (s.empty()) {
                throw std::invalid_argument("unroll: empty sequence");
            }
            steps_ = std::max(steps_, static_cast<int>(s.size()));
            lengths_.push_back(static_cast<int>(s.size()));
        }
        const Eigen::Index cols = static_cast<Eigen::Index>(steps_) * batch_;
        signal_ = Eigen::RowVectorXd::Zero(cols);
        for (int b = 0; b < batch_; ++b) {
            for (int t = 0; t < lengths_[static_cast<std::size_t>(b)]; ++t) {
                signal_(col(t, b)) = sequences[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] ? 1.0 : 0.0;
            }
        }
        run(net);
    }

    int steps() const { return steps_; }
    int batch() const { return batch_; }
    int store_from() const { return store_from_; }
    int length(int b) const { return lengths_[static_cast<std::size_t>(b)]; }
    Eigen::Index col(int t, int b) const { return static_cast<Eigen::Index>(t) * batch_ + b; }

    const Eigen::RowVectorXd& signal() const { return signal_; }
    /// r^m for every step; only for m >= store_from().
    const Matrix& states(int m) const { return states_.at(static_cast<std::size_t>(m - store_from_)); }
    const Matrix& drives(int m) const { return drives_.at(static_cast<std::size_t>(m - store_from_)); }
    /// 2 x (steps * batch) logits of head h.
    const Matrix& logits(std::size_t h) const { return logits_[h]; }

private:
    void run(const Network& net)
    {
        const auto n_mod = net.modules.size();
        const double alpha = net.activation.alpha;
        const Eigen::Index cols = static_cast<Eigen::Index>(steps_) * batch_;

        std::vector<Matrix> prev, cur;
        std::vector<Vector> inv_tau, decay;
        for (const auto& mod : net.modules) {
            prev.push_back(Matrix::Zero(mod.size(), batch_));
            cur.push_back(Matrix::Zero(mod.size(), batch_));
            inv_tau.push_back(mod.tau.cwiseInverse() * ActivationConfig::dt);
            decay.push_back((1.0 - inv_tau.back().array()).matrix());
        }
        for (std::size_t m = static_cast<std::size_t>(store_from_); m < n_mod; ++m) {
            states_.push_back(Matrix(net.modules[m].size(), cols));
            drives_.push_back(Matrix(net.modules[m].size(), cols));
        }
        for (std::size_t h = 0; h < net.heads.size(); ++h) {
            logits_.push_back(Matrix(2, cols));
        }

        Matrix drive;
        for (int t = 0; t < steps_; ++t) {
            const auto s_t = signal_.segment(col(t, 0), batch_);
            for (std::size_t m = 0; m < n_mod; ++m) {
                const auto& mod = net.modules[m];
                drive.noalias() = mod.recurrent * prev[m];
                if (m > 0) {
                    drive.noalias() += mod.feedforward * prev[m - 1];
                }
                drive.noalias() += mod.input * s_t;
                drive.colwise() += mod.bias;
                cur[m].array() = prev[m].array().colwise() * decay[m].array() +
                                 leaky(drive, alpha).colwise() * inv_tau[m].array();
                if (static_cast<int>(m) >= store_from_) {
                    const auto k = m - static_cast<std::size_t>(store_from_);
                    states_[k].middleCols(col(t, 0), batch_) = cur[m];
                    drives_[k].middleCols(col(t, 0), batch_) = drive;
                }
            }
            for (std::size_t h = 0; h < net.heads.size(); ++h) {
                const auto& head = net.heads[h];
                auto block = logits_[h].middleCols(col(t, 0), batch_);
                block.noalias() = head.weights * cur[static_cast<std::size_t>(head.source)];
                block.colwise() += head.bias;
            }
            std::swap(prev, cur);
        }
    }

    int steps_ = 0;
    int batch_ = 0;
    int store_from_ = 0;
    std::vector<int> lengths_;
    Eigen::RowVectorXd signal_;
    std::vector<Matrix> states_;
    std::vector<Matrix> drives_;
    std::vector<Matrix> logits_;
};

}  // namespace detail

struct ForwardResult {
    /// Per head, 2 x L logits (column t is the output at step t).
    std::vector<Matrix> logits;
    /// Per module, M x L activities when recording was requested.
    std::vector<Matrix> activity;
};

inline ForwardResult forward(const Network& net, const Bits& sequence, bool record_activity = false)
{
    if (sequence.empty()) {
        throw std::invalid_argument("forward: empty sequence");
    }
    const int store_from = record_activity ? 0 : static_cast<int>(net.modules.size());
    detail::Unroll run(net, {sequence}, store_from);
    ForwardResult out;
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        out.logits.push_back(run.logits(h));
    }
    if (record_activity) {
        for (std::size_t m = 0; m < net.modules.size(); ++m) {
            out.activity.push_back(run.states(static_cast<int>(m)));
        }
    }
    return out;
}

/// Fraction of (sequence, valid step) pairs where the head's argmax matches the
/// target; ties predict 0. Sequences are processed in chunks of `chunk`.
inline EvalReport evaluate(const Network& net, const std::vector<int>& tasks, int n_sequences, std::uint64_t seed,
                           int chunk = 256)
{
    if (tasks.empty()) {
        throw std::invalid_argument("evaluate: no tasks requested");
    }
    if (n_sequences < 1) {
        throw std::invalid_argument("evaluate: n_sequences must be >= 1");
    }
    std::vector<std::size_t> head_index;
    for (int n : tasks) {
        bool found = false;
        for (std::size_t h = 0; h < net.heads.size(); ++h) {
            if (net.heads[h].task_n == n) {
                head_index.push_back(h);
                found = true;
                break;
            }
        }
        if (!found) {
            throw std::invalid_argument("evaluate: no readout head for task " + std::to_string(n));
        }
    }
    const int n_max = *std::max_element(tasks.begin(), tasks.end());
    const ParityBatch batch = gen_batch(n_max, n_sequences, seed);

    std::vector<std::int64_t> correct(tasks.size(), 0), total(tasks.size(), 0);
    for (int first = 0; first < n_sequences; first += chunk) {
        const int last = std::min(n_sequences, first + chunk);
        std::vector<Bits> part(batch.sequences.begin() + first, batch.sequences.begin() + last);
        detail::Unroll run(net, part, static_cast<int>(net.modules.size()));
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const int n = tasks[k];
            const Matrix& z = run.logits(head_index[k]);
            for (int b = 0; b < run.batch(); ++b) {
                for (int t = n - 1; t < run.length(b); ++t) {
                    const auto c = run.col(t, b);
                    const int predicted = z(1, c) > z(0, c) ? 1 : 0;
                    correct[k] += predicted == batch.target(static_cast<std::size_t>(first + b), n, t);
                    ++total[k];
                }
            }
        }
    }
    EvalReport report;
    report.n_sequences = n_sequences;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        report.accuracy[tasks[k]] = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
    }
    return report;
}

/// Tasks 2..n as a list.
inline std::vector<int> task_range(int n)
{
    std::vector<int> t;
    for (int k = 2; k <= n; ++k) {
        t.push_back(k);
    }
    return t;
}

}  // namespace modgrow
