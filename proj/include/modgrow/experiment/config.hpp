#pragma once

// Flat dotted-key experiment configuration ("optimizer.lr = 1.0"), with
// command-line overrides, validation and a stable content hash.

#include "modgrow/analysis/perturbation.hpp"
#include "modgrow/trainer.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace modgrow {

/// Invalid configuration; `key` names the offending entry.
class config_error : public std::runtime_error {
public:
    config_error(const std::string& key, const std::string& what)
        : std::runtime_error(key.empty() ? what : key + ": " + what), key_(key)
    {
    }
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Every recognised key with its default. Output files echo all of them.
inline const std::map<std::string, std::string>& default_config()
{
    static const std::map<std::string, std::string> defaults{
        {"architecture", "modular"},
        {"size", "10"},
        {"seeds", "1,2,3"},
        {"activation.alpha", "0.01"},
        {"init.tau_min", "1"},
        {"init.tau_max", "3"},
        {"optimizer.lr", "1"},
        {"optimizer.batch_size", "32"},
        {"optimizer.batches_per_epoch", "100"},
        {"optimizer.max_epochs", "60"},
        {"optimizer.gradient_clip", "1"},
        {"optimizer.head_reduction", "sum"},
        {"curriculum.threshold", "0.98"},
        {"curriculum.eval_sequences", "100"},
        {"curriculum.stop_at_n_solved", "0"},
        {"curriculum.scoring", "per_timestep"},
        {"growth.duplicate_recurrent", "true"},
        {"growth.duplicate_feedforward", "true"},
        {"growth.freeze_old_tau", "true"},
        {"growth.freeze_old_heads", "true"},
        {"growth.freeze_mode", "none"},
        {"analysis.targets", "connections,tau,recurrent,feedforward"},
        {"analysis.epsilons", "0,0.001,0.003,0.01,0.03,0.1,0.3,1,3"},
        {"analysis.repeats", "10"},
        {"analysis.eval_sequences", "1000"},
        {"analysis.accuracy_threshold", "0.9"},
        {"analysis.horizon", "100000"},
        {"analysis.max_lag", "200"},
        {"analysis.dump_perturbed", "false"},
        {"generalize.base_n", "10"},
        {"generalize.k_max", "5"},
        {"generalize.epochs", "10"},
        {"params.n", "30"},
        {"params.modular_sizes", "5,10,15,20"},
        {"params.nonmodular_sizes", "20,54,91,128"},
        {"input.checkpoint", ""},
        {"output.dir", "runs"},
        {"runner.jobs", "1"},
    };
    return defaults;
}

/// Keys that identify a run's outputs rather than its content; excluded from the hash.
inline bool is_placement_key(const std::string& key)
{
    return key == "seeds" || key == "output.dir" || key == "runner.jobs";
}

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) {
            out.push_back(cur);
        }
    }
    return out;
}

}  // namespace detail

struct ExperimentConfig {
    NetworkKind architecture = NetworkKind::modular;
    int size = 10;
    std::vector<std::uint64_t> seeds;
    ActivationConfig activation;
    InitConfig init;
    OptimizerConfig optimizer;
    CurriculumConfig curriculum;
    std::vector<PerturbTarget> targets;
    std::vector<double> epsilons;
    RobustnessOptions robustness;
    long long horizon = 100000;
    int max_lag = 200;
    bool dump_perturbed = false;
    int generalize_base_n = 10;
    int generalize_k_max = 5;
    int generalize_epochs = 10;
    int params_n = 30;
    std::vector<int> params_modular_sizes;
    std::vector<int> params_nonmodular_sizes;
    std::string checkpoint;
    std::string output_dir;
    /// Concurrent (config, seed) jobs; 0 means one per hardware thread.
    int jobs = 1;

    /// Fully resolved key/value view, defaults included.
    std::map<std::string, std::string> values;

    /// "key = value" lines, sorted by key.
    std::string resolved_text(bool include_placement = true) const
    {
        std::string out;
        for (const auto& [k, v] : values) {
            if (include_placement || !is_placement_key(k)) {
                out += k + " = " + v + "\n";
            }
        }
        return out;
    }

    /// FNV-1a over the resolved content keys, as 16 hex digits.
    std::string hash() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : resolved_text(false)) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

class ConfigBuilder {
public:
    ConfigBuilder() : values_(default_config()) {}

    /// Reads "key = value" lines; '#' starts a comment.
    ConfigBuilder& load_file(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw config_error("", "cannot read config file " + path);
        }
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) {
                line = line.substr(0, hash);
            }
            line = detail::trim(line);
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw config_error("", path + ":" + std::to_string(lineno) + ": expected 'key = value'");
            }
            set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
        return *this;
    }

    /// Applies "key=value".
    ConfigBuilder& override_with(const std::string& assignment)
    {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) {
            throw config_error("", "override '" + assignment + "' must look like KEY=VALUE");
        }
        return set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
    }

    ConfigBuilder& set(const std::string& key, const std::string& value)
    {
        if (!values_.contains(key)) {
            throw config_error(key, "unknown configuration key");
        }
        values_[key] = value;
        return *this;
    }

    ExperimentConfig build() const
    {
        ExperimentConfig c;
        c.values = values_;
        c.architecture = parse("architecture", [](const std::string& s) { return parse_network_kind(s); });
        c.values["architecture"] = std::string(to_string(c.architecture));
        c.size = positive_int("size");
        c.seeds = seed_list("seeds");

        c.activation.alpha = real("activation.alpha");
        if (!(c.activation.alpha > 0.0 && c.activation.alpha < 1.0)) {
            throw config_error("activation.alpha", "must lie in (0, 1)");
        }
        c.init.tau_min = real("init.tau_min");
        c.init.tau_max = real("init.tau_max");
        if (!(c.init.tau_min >= 1.0)) {
            throw config_error("init.tau_min", "must be >= 1");
        }
        if (!(c.init.tau_max >= c.init.tau_min)) {
            throw config_error("init.tau_max", "must be >= init.tau_min");
        }

        c.optimizer.learning_rate = real("optimizer.lr");
        if (!(c.optimizer.learning_rate >= 0.0)) {
            throw config_error("optimizer.lr", "must be non-negative");
        }
        c.optimizer.batch_size = positive_int("optimizer.batch_size");
        c.optimizer.batches_per_epoch = positive_int("optimizer.batches_per_epoch");
        c.optimizer.max_epochs = non_negative_int("optimizer.max_epochs");
        c.optimizer.gradient_clip = real("optimizer.gradient_clip");
        c.optimizer.reduction = parse("optimizer.head_reduction", [](const std::string& s) {
            if (s == "sum") return HeadReduction::sum;
            if (s == "mean") return HeadReduction::mean;
            throw std::invalid_argument("expected 'sum' or 'mean'");
        });

        c.curriculum.threshold = real("curriculum.threshold");
        if (!(c.curriculum.threshold > 0.0 && c.curriculum.threshold < 1.0)) {
            throw config_error("curriculum.threshold", "must lie in (0, 1)");
        }
        c.curriculum.eval_sequences = positive_int("curriculum.eval_sequences");
        c.curriculum.stop_at_n_solved = non_negative_int("curriculum.stop_at_n_solved");
        if (values_.at("curriculum.scoring") != "per_timestep") {
            throw config_error("curriculum.scoring", "only 'per_timestep' scoring is implemented");
        }
        c.curriculum.duplicate_recurrent = boolean("growth.duplicate_recurrent");
        c.curriculum.duplicate_feedforward = boolean("growth.duplicate_feedforward");
        c.curriculum.freeze_old_tau = boolean("growth.freeze_old_tau");
        c.curriculum.freeze_old_heads = boolean("growth.freeze_old_heads");
        c.curriculum.freeze_mode = parse("growth.freeze_mode", [](const std::string& s) { return parse_freeze_mode(s); });

        for (const auto& t : detail::split(values_.at("analysis.targets"), ',')) {
            try {
                c.targets.push_back(parse_perturb_target(t));
            } catch (const std::exception& e) {
                throw config_error("analysis.targets", e.what());
            }
        }
        for (const auto& e : detail::split(values_.at("analysis.epsilons"), ',')) {
            c.epsilons.push_back(to_real("analysis.epsilons", e));
            if (!(c.epsilons.back() >= 0.0)) {
                throw config_error("analysis.epsilons", "epsilon values must be non-negative");
            }
        }
        c.robustness.n_repeats = positive_int("analysis.repeats");
        c.robustness.n_eval = positive_int("analysis.eval_sequences");
        c.robustness.accuracy_threshold = real("analysis.accuracy_threshold");
        c.horizon = positive_int("analysis.horizon");
        c.max_lag = positive_int("analysis.max_lag");
        if (c.horizon <= c.max_lag) {
            throw config_error("analysis.horizon", "must exceed analysis.max_lag");
        }
        c.dump_perturbed = boolean("analysis.dump_perturbed");
        c.generalize_base_n = positive_int("generalize.base_n");
        if (c.generalize_base_n < 2) {
            throw config_error("generalize.base_n", "must be >= 2");
        }
        c.generalize_k_max = positive_int("generalize.k_max");
        c.generalize_epochs = positive_int("generalize.epochs");
        c.params_n = positive_int("params.n");
        if (c.params_n < 2) {
            throw config_error("params.n", "must be >= 2");
        }
        c.params_modular_sizes = int_list("params.modular_sizes");
        c.params_nonmodular_sizes = int_list("params.nonmodular_sizes");
        if (c.curriculum.freeze_mode != FreezeMode::none && c.architecture != NetworkKind::modular) {
            throw config_error("growth.freeze_mode", "freeze modes require a modular architecture");
        }
        c.checkpoint = values_.at("input.checkpoint");
        c.output_dir = values_.at("output.dir");
        if (c.output_dir.empty()) {
            throw config_error("output.dir", "must not be empty");
        }
        c.jobs = non_negative_int("runner.jobs");
        return c;
    }

private:
    template <typename F>
    std::invoke_result_t<F, const std::string&> parse(const std::string& key, F&& f) const
    {
        try {
            return f(values_.at(key));
        } catch (const config_error&) {
            throw;
        } catch (const std::exception& e) {
            throw config_error(key, e.what());
        }
    }

    static double to_real(const std::string& key, const std::string& s)
    {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) {
            throw config_error(key, "expected a number, got '" + s + "'");
        }
        return v;
    }

    static long long to_int(const std::string& key, const std::string& s)
    {
        long long v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) {
            throw config_error(key, "expected an integer, got '" + s + "'");
        }
        return v;
    }

    double real(const std::string& key) const { return to_real(key, values_.at(key)); }

    int positive_int(const std::string& key) const
    {
        const auto v = to_int(key, values_.at(key));
        if (v <= 0 || v > 1'000'000'000) {
            throw config_error(key, "must be a positive integer");
        }
        return static_cast<int>(v);
    }

    int non_negative_int(const std::string& key) const
    {
        const auto v = to_int(key, values_.at(key));
        if (v < 0 || v > 1'000'000'000) {
            throw config_error(key, "must be a non-negative integer");
        }
        return static_cast<int>(v);
    }

    bool boolean(const std::string& key) const
    {
        const auto& v = values_.at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw config_error(key, "expected true or false, got '" + v + "'");
    }

    std::vector<int> int_list(const std::string& key) const
    {
        std::vector<int> out;
        for (const auto& s : detail::split(values_.at(key), ',')) {
            const auto v = to_int(key, s);
            if (v <= 0) {
                throw config_error(key, "sizes must be positive");
            }
            out.push_back(static_cast<int>(v));
        }
        return out;
    }

    std::vector<std::uint64_t> seed_list(const std::string& key) const
    {
        std::vector<std::uint64_t> out;
        for (const auto& s : detail::split(values_.at(key), ',')) {
            const auto v = to_int(key, s);
            if (v < 0) {
                throw config_error(key, "seeds must be non-negative");
            }
            out.push_back(static_cast<std::uint64_t>(v));
        }
        if (out.empty()) {
            throw config_error(key, "at least one seed is required");
        }
        return out;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace modgrow
