#pragma once

// N-parity sequences, targets and the curriculum success criterion.

#include "modgrow/rng.hpp"

#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace modgrow {

using Bits = std::vector<std::uint8_t>;

/// XOR of sequence[t-n+1 .. t]. Defined for t >= n - 1.
inline std::uint8_t parity_target(const Bits& sequence, int n, int t)
{
    if (n < 1) {
        throw std::invalid_argument("parity_target: n must be >= 1");
    }
    if (t < n - 1) {
        throw std::out_of_range("parity_target: target undefined for t < n - 1");
    }
    if (t >= static_cast<int>(sequence.size())) {
        throw std::out_of_range("parity_target: t beyond sequence end");
    }
    std::uint8_t acc = 0;
    for (int k = t - n + 1; k <= t; ++k) {
        acc ^= sequence[static_cast<std::size_t>(k)] & 1u;
    }
    return acc;
}

/// Sequences plus targets for every task 2..n_max.
struct ParityBatch {
    int n_max = 2;
    std::vector<Bits> sequences;
    /// targets[b][n - 2][t]; entries with t < n - 1 are zero and unused.
    std::vector<std::vector<Bits>> targets;

    std::size_t size() const { return sequences.size(); }
    int length(std::size_t b) const { return static_cast<int>(sequences[b].size()); }
    int max_length() const
    {
        int l = 0;
        for (const auto& s : sequences) {
            l = std::max(l, static_cast<int>(s.size()));
        }
        return l;
    }
    std::uint8_t target(std::size_t b, int n, int t) const
    {
        return targets[b][static_cast<std::size_t>(n - 2)][static_cast<std::size_t>(t)];
    }
};

/// Running-XOR targets for all tasks 2..n_max of one sequence.
inline std::vector<Bits> parity_targets(const Bits& seq, int n_max)
{
    const int len = static_cast<int>(seq.size());
    std::vector<int> prefix(static_cast<std::size_t>(len) + 1, 0);
    for (int t = 0; t < len; ++t) {
        prefix[static_cast<std::size_t>(t) + 1] = prefix[static_cast<std::size_t>(t)] ^ (seq[static_cast<std::size_t>(t)] & 1);
    }
    std::vector<Bits> out;
    for (int n = 2; n <= n_max; ++n) {
        Bits row(static_cast<std::size_t>(len), 0);
        for (int t = n - 1; t < len; ++t) {
            row[static_cast<std::size_t>(t)] =
                static_cast<std::uint8_t>(prefix[static_cast<std::size_t>(t) + 1] ^ prefix[static_cast<std::size_t>(t - n + 1)]);
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline ParityBatch make_batch(std::vector<Bits> sequences, int n_max)
{
    if (n_max < 2) {
        throw std::invalid_argument("make_batch: n_max must be >= 2");
    }
    ParityBatch batch;
    batch.n_max = n_max;
    for (const auto& s : sequences) {
        if (static_cast<int>(s.size()) < n_max) {
            throw std::invalid_argument("make_batch: sequence shorter than n_max");
        }
        batch.targets.push_back(parity_targets(s, n_max));
    }
    batch.sequences = std::move(sequences);
    return batch;
}

/// Random sequences with lengths uniform on {n_max + 2, ..., 4 n_max} and i.i.d. fair bits.
inline ParityBatch gen_batch(int n_max, int batch_size, std::uint64_t seed)
{
    if (n_max < 2) {
        throw std::invalid_argument("gen_batch: n_max must be >= 2");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("gen_batch: batch_size must be >= 1");
    }
    Rng rng(seed);
    std::uniform_int_distribution<int> len_dist(n_max + 2, 4 * n_max);
    std::uniform_int_distribution<int> bit(0, 1);
    std::vector<Bits> seqs;
    seqs.reserve(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        Bits s(static_cast<std::size_t>(len_dist(rng)));
        for (auto& x : s) {
            x = static_cast<std::uint8_t>(bit(rng));
        }
        seqs.push_back(std::move(s));
    }
    return make_batch(std::move(seqs), n_max);
}

/// Per-task accuracy from one evaluation pass. Chance level is 0.5.
struct EvalReport {
    std::map<int, double> accuracy;
    int n_sequences = 0;
    bool success = false;
};

/// Task n is solved when its accuracy and the mean accuracy over tasks
/// 2..n-1 both exceed `threshold`.
inline bool success_criterion(const EvalReport& report, int n, double threshold = 0.98)
{
    if (n < 2) {
        throw std::invalid_argument("success_criterion: n must be >= 2");
    }
    for (int k = 2; k <= n; ++k) {
        if (!report.accuracy.contains(k)) {
            throw std::invalid_argument("success_criterion: report has no accuracy for task " + std::to_string(k));
        }
    }
    if (!(report.accuracy.at(n) > threshold)) {
        return false;
    }
    if (n == 2) {
        return true;
    }
    double sum = 0.0;
    for (int k = 2; k < n; ++k) {
        sum += report.accuracy.at(k);
    }
    return sum / static_cast<double>(n - 2) > threshold;
}

/// One sequence per line as '0'/'1' characters.
inline std::string dump_batch(const ParityBatch& batch)
{
    std::string out;
    for (const auto& s : batch.sequences) {
        for (auto b : s) {
            out.push_back(b ? '1' : '0');
        }
        out.push_back('\n');
    }
    return out;
}

}  // namespace modgrow
