#pragma once

// Experiment subcommands. Each command writes into its own run directory,
// <out>/<command>-<config hash>/, containing the resolved config, a manifest
// and one set of per-seed files. Nothing outside that directory is touched,
// except by `aggregate`, which writes <out>/aggregate/.

#include "modgrow/analysis/perturbation.hpp"
#include "modgrow/analysis/timescales.hpp"
#include "modgrow/analysis/weights.hpp"
#include "modgrow/checkpoint.hpp"
#include "modgrow/experiment/config.hpp"
#include "modgrow/experiment/csv.hpp"
#include "modgrow/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace modgrow {

namespace fs = std::filesystem;

inline constexpr int manifest_format_version = 1;

/// Progress sink; may be called from several worker threads, one line at a time.
using LogFn = std::function<void(const std::string&)>;

struct CommandResult {
    fs::path run_dir;
    /// Paths relative to run_dir (or to the output dir for `aggregate`).
    std::vector<std::string> artifacts;
};

namespace detail {

inline std::string utc_now()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

/// Resolved config (minus placement keys) and any extras, as table metadata.
inline void describe(Table& t, const ExperimentConfig& cfg, const std::string& kind,
                     const std::vector<std::pair<std::string, std::string>>& extra = {})
{
    t.set_meta("kind", kind);
    for (const auto& [k, v] : extra) {
        t.set_meta(k, v);
    }
    t.set_meta("config_hash", cfg.hash());
    for (const auto& [k, v] : cfg.values) {
        if (!is_placement_key(k)) {
            t.set_meta("config." + k, v);
        }
    }
}

inline std::map<std::string, std::string> content_config(const ExperimentConfig& cfg)
{
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : cfg.values) {
        if (!is_placement_key(k)) {
            out[k] = v;
        }
    }
    return out;
}

struct JobRecord {
    std::uint64_t seed = 0;
    std::string label;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> artifacts;
};

/// Runs fn(0..n-1) on `jobs` worker threads. The first exception is rethrown
/// after all workers have stopped.
inline void run_jobs(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn)
{
    std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs) : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n && !failed; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

class RunDirectory {
public:
    RunDirectory(const ExperimentConfig& cfg, const std::string& command)
        : cfg_(cfg), command_(command), dir_(fs::path(cfg.output_dir) / (command + "-" + cfg.hash()))
    {
        fs::create_directories(dir_);
        started_ = utc_now();
        std::ofstream out(dir_ / "config.txt", std::ios::binary);
        out << "# resolved configuration for '" << command << "'\n" << cfg.resolved_text();
        if (!out) {
            throw std::runtime_error("cannot write " + (dir_ / "config.txt").string());
        }
        artifacts_.push_back("config.txt");
    }

    const fs::path& path() const { return dir_; }

    void write(const std::string& name, const Table& t)
    {
        write_csv(dir_ / name, t);
        artifacts_.push_back(name);
    }

    void add_job(JobRecord job) { jobs_.push_back(std::move(job)); }

    CommandResult finish()
    {
        std::sort(jobs_.begin(), jobs_.end(), [](const JobRecord& a, const JobRecord& b) {
            return std::tie(a.seed, a.label) < std::tie(b.seed, b.label);
        });
        nlohmann::json m;
        m["format"] = "modgrow-manifest";
        m["format_version"] = manifest_format_version;
        m["command"] = command_;
        m["config_hash"] = cfg_.hash();
        m["config"] = cfg_.values;
        m["seeds"] = cfg_.seeds;
        m["started_at"] = started_;
        m["finished_at"] = utc_now();
        m["artifacts"] = artifacts_;
        m["jobs"] = nlohmann::json::array();
        CommandResult result{dir_, artifacts_};
        for (const auto& j : jobs_) {
            m["jobs"].push_back({{"seed", j.seed},
                                 {"label", j.label},
                                 {"started_at", j.started_at},
                                 {"finished_at", j.finished_at},
                                 {"artifacts", j.artifacts}});
            result.artifacts.insert(result.artifacts.end(), j.artifacts.begin(), j.artifacts.end());
        }
        std::ofstream out(dir_ / "manifest.json", std::ios::binary);
        out << m.dump(2) << "\n";
        if (!out) {
            throw std::runtime_error("cannot write manifest in " + dir_.string());
        }
        result.artifacts.push_back("manifest.json");
        return result;
    }

private:
    const ExperimentConfig& cfg_;
    std::string command_;
    fs::path dir_;
    std::string started_;
    std::vector<std::string> artifacts_;
    std::vector<JobRecord> jobs_;
};

inline Table trace_table(const ExperimentConfig& cfg, const CurriculumTrace& trace, std::uint64_t seed,
                         const std::vector<std::pair<std::string, std::string>>& extra = {})
{
    Table t;
    auto meta = extra;
    meta.emplace_back("seed", std::to_string(seed));
    meta.emplace_back("plot", "x=epoch y=n_solved");
    describe(t, cfg, "trace", meta);
    int k_max = 2;
    for (const auto& e : trace.epochs) {
        k_max = std::max(k_max, e.n_max);
    }
    t.columns = {"epoch", "n_solved", "n_max", "loss"};
    for (int n = 2; n <= k_max; ++n) {
        t.columns.push_back("acc_" + std::to_string(n));
    }
    for (const auto& e : trace.epochs) {
        std::vector<std::string> row{std::to_string(e.epoch), std::to_string(e.n_solved), std::to_string(e.n_max),
                                     format_number(e.loss)};
        for (int n = 2; n <= k_max; ++n) {
            const auto it = e.accuracy.find(n);
            row.push_back(it == e.accuracy.end() ? "" : format_number(it->second));
        }
        t.add_row(std::move(row));
    }
    return t;
}

inline Table tau_steps_table(const ExperimentConfig& cfg, const CurriculumTrace& trace, std::uint64_t seed)
{
    Table t;
    describe(t, cfg, "trained_tau", {{"seed", std::to_string(seed)}, {"plot", "x=n_solved y=mean"}});
    t.columns = {"epoch", "n_solved", "module", "mean", "sd", "count"};
    for (const auto& step : trace.steps) {
        const int m = cfg.architecture == NetworkKind::modular ? step.n_solved - 2 : 0;
        if (m < 0 || m >= static_cast<int>(step.tau.size())) {
            continue;
        }
        const auto r = summarize_tau(step.n_solved, m, step.tau[static_cast<std::size_t>(m)]);
        t.add_row({std::to_string(step.epoch), std::to_string(r.n_solved), std::to_string(r.module),
                   format_number(r.mean), format_number(r.sd), std::to_string(r.count)});
    }
    return t;
}

inline Table weight_change_table(const ExperimentConfig& cfg, const Network& net, std::uint64_t seed)
{
    Table t;
    describe(t, cfg, "weight_changes", {{"seed", std::to_string(seed)}, {"plot", "x=module_to y=variance group=class"}});
    t.columns = {"module_from", "module_to", "class", "variance", "flagged"};
    for (const auto& r : weight_change_variance(net).rows) {
        t.add_row({std::to_string(r.module_from), std::to_string(r.module_to), std::string(to_string(r.weight_class)),
                   format_number(r.variance), r.flagged ? "true" : "false"});
    }
    return t;
}

inline Network fresh_network(const ExperimentConfig& cfg, std::uint64_t seed)
{
    return new_network(cfg.architecture, cfg.size, seed, cfg.activation, cfg.init);
}

inline void log_line(const LogFn& log, const std::string& line)
{
    if (log) log(line);
}

inline EpochCallback epoch_logger(const LogFn& log, const std::string& label)
{
    if (!log) return {};
    return [log, label](const EpochRecord& rec, const Network&) {
        log(label + " epoch " + std::to_string(rec.epoch) + " n_solved " + std::to_string(rec.n_solved));
    };
}

inline Checkpoint load_matching_checkpoint(const ExperimentConfig& cfg)
{
    if (cfg.checkpoint.empty()) {
        throw config_error("input.checkpoint", "a checkpoint path is required for this command");
    }
    if (!fs::exists(cfg.checkpoint)) {
        throw config_error("input.checkpoint", "no such file: " + cfg.checkpoint);
    }
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    if (ck.network.kind != cfg.architecture) {
        throw config_error("architecture", "checkpoint holds a " + std::string(to_string(ck.network.kind)) +
                                               " network but the config asks for " +
                                               std::string(to_string(cfg.architecture)));
    }
    return ck;
}

inline double sem(const std::vector<double>& xs)
{
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

inline double mean_of(const std::vector<double>& xs)
{
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(xs.size());
}

}  // namespace detail

/// Curriculum training per seed: trace, trained-tau steps, final checkpoint and
/// a summary row each. `freeze` shares this path with its own directory name.
inline CommandResult cmd_train(const ExperimentConfig& cfg, const LogFn& log = {}, const std::string& command = "train")
{
    detail::RunDirectory run(cfg, command);
    std::vector<std::vector<std::string>> summary(cfg.seeds.size());
    std::mutex mutex;
    detail::run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        detail::JobRecord job{seed, "", detail::utc_now(), "", {}};
        const auto label = detail::seed_tag(seed);
        auto result = run_curriculum(detail::fresh_network(cfg, seed), cfg.optimizer, cfg.curriculum, seed,
                                     detail::epoch_logger(log, command + " " + label));
        const auto trace_name = "trace_" + label + ".csv";
        const auto tau_name = "trained_tau_" + label + ".csv";
        const auto ck_name = "checkpoint_" + label + ".json";
        write_csv(run.path() / trace_name, detail::trace_table(cfg, result.trace, seed));
        write_csv(run.path() / tau_name, detail::tau_steps_table(cfg, result.trace, seed));
        save_checkpoint(result.network, run.path() / ck_name,
                        CheckpointMeta{result.trace.n_solved(), detail::content_config(cfg)});
        const auto params = count_parameters(result.network);
        summary[i] = {std::string(to_string(cfg.architecture)), std::to_string(cfg.size), std::to_string(seed),
                      std::to_string(params.total), std::to_string(params.trainable),
                      std::to_string(result.trace.n_solved()), std::to_string(result.trace.epochs.back().epoch)};
        job.artifacts = {trace_name, tau_name, ck_name};
        if (result.network.modular() && result.network.modules.size() >= 3) {
            const auto weights_name = "weight_changes_" + label + ".csv";
            write_csv(run.path() / weights_name, detail::weight_change_table(cfg, result.network, seed));
            job.artifacts.push_back(weights_name);
        }
        job.finished_at = detail::utc_now();
        std::lock_guard lock(mutex);
        run.add_job(std::move(job));
        detail::log_line(log, command + " " + label + " done: n_solved " + std::to_string(result.trace.n_solved()));
    });
    Table t;
    detail::describe(t, cfg, "summary", {{"plot", "x=total_params y=n_solved"}});
    t.columns = {"architecture", "size", "seed", "total_params", "trainable_params", "n_solved", "epochs"};
    for (auto& row : summary) {
        t.add_row(std::move(row));
    }
    run.write("summary.csv", t);
    return run.finish();
}

/// Curriculum training with a weight-freezing mode; modular networks only.
inline CommandResult cmd_freeze(const ExperimentConfig& cfg, const LogFn& log = {})
{
    if (cfg.architecture != NetworkKind::modular) {
        throw config_error("architecture", "freeze experiments require a modular architecture");
    }
    return cmd_train(cfg, log, "freeze");
}

/// All four (duplicate recurrent, duplicate feedforward) growth conditions per
/// seed, plus mean and SEM of N_solved against epoch per condition.
inline CommandResult cmd_duplicate(const ExperimentConfig& cfg, const LogFn& log = {})
{
    if (cfg.architecture != NetworkKind::modular) {
        throw config_error("architecture", "duplication experiments require a modular architecture");
    }
    const std::vector<std::pair<bool, bool>> conditions{{true, true}, {true, false}, {false, true}, {false, false}};
    auto tf = [](bool b) { return std::string(b ? "T" : "F"); };
    auto cond_name = [&](std::size_t c) {
        return "dupR" + tf(conditions[c].first) + "_dupFF" + tf(conditions[c].second);
    };

    detail::RunDirectory run(cfg, "duplicate");
    const std::size_t n_seeds = cfg.seeds.size();
    // n_solved[condition][seed][epoch], padded to max_epochs with the last value.
    std::vector<std::vector<std::vector<int>>> curves(conditions.size(), std::vector<std::vector<int>>(n_seeds));
    std::mutex mutex;
    detail::run_jobs(conditions.size() * n_seeds, cfg.jobs, [&](std::size_t job_index) {
        const std::size_t c = job_index / n_seeds;
        const std::size_t s = job_index % n_seeds;
        const auto seed = cfg.seeds[s];
        detail::JobRecord job{seed, cond_name(c), detail::utc_now(), "", {}};
        CurriculumConfig cc = cfg.curriculum;
        cc.duplicate_recurrent = conditions[c].first;
        cc.duplicate_feedforward = conditions[c].second;
        const auto label = cond_name(c) + "_" + detail::seed_tag(seed);
        auto result = run_curriculum(detail::fresh_network(cfg, seed), cfg.optimizer, cc, seed,
                                     detail::epoch_logger(log, "duplicate " + label));
        const auto trace_name = "trace_" + label + ".csv";
        write_csv(run.path() / trace_name,
                  detail::trace_table(cfg, result.trace, seed,
                                      {{"condition", cond_name(c)},
                                       {"duplicate_recurrent", conditions[c].first ? "true" : "false"},
                                       {"duplicate_feedforward", conditions[c].second ? "true" : "false"}}));
        std::vector<int> curve;
        for (const auto& e : result.trace.epochs) {
            curve.push_back(e.n_solved);
        }
        curve.resize(static_cast<std::size_t>(cfg.optimizer.max_epochs) + 1, curve.back());
        job.finished_at = detail::utc_now();
        job.artifacts = {trace_name};
        std::lock_guard lock(mutex);
        curves[c][s] = std::move(curve);
        run.add_job(std::move(job));
    });

    Table t;
    detail::describe(t, cfg, "duplication_curves", {{"plot", "x=epoch y=mean_n_solved err=sem group=condition"}});
    t.columns = {"condition", "duplicate_recurrent", "duplicate_feedforward", "epoch", "mean_n_solved", "sem", "runs"};
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        for (int e = 0; e <= cfg.optimizer.max_epochs; ++e) {
            std::vector<double> xs;
            for (const auto& curve : curves[c]) {
                xs.push_back(curve[static_cast<std::size_t>(e)]);
            }
            t.add_row({cond_name(c), conditions[c].first ? "true" : "false", conditions[c].second ? "true" : "false",
                       std::to_string(e), format_number(detail::mean_of(xs)), format_number(detail::sem(xs)),
                       std::to_string(xs.size())});
        }
    }
    run.write("curves.csv", t);
    return run.finish();
}

/// Robustness of a trained checkpoint to perturbation of each configured
/// parameter class over the epsilon grid; one CSV per seed. Feedforward
/// targets are skipped for non-modular networks.
inline CommandResult cmd_perturb(const ExperimentConfig& cfg, const LogFn& log = {})
{
    const Checkpoint ck = detail::load_matching_checkpoint(cfg);
    const Network& net = ck.network;
    std::vector<PerturbTarget> targets;
    for (auto t : cfg.targets) {
        if (t == PerturbTarget::feedforward && !net.modular()) {
            continue;
        }
        targets.push_back(t);
    }
    detail::RunDirectory run(cfg, "perturb");
    const auto tasks = task_range(net.max_task());
    std::mutex mutex;
    detail::run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        const auto label = detail::seed_tag(seed);
        detail::JobRecord job{seed, "", detail::utc_now(), "", {}};
        RobustnessOptions opts = cfg.robustness;
        opts.seed = seed;
        const auto rows = robustness_curve(net, targets, cfg.epsilons, opts);

        Table t;
        detail::describe(t, cfg, "robustness",
                         {{"seed", std::to_string(seed)},
                          {"checkpoint_n_solved", std::to_string(ck.meta.n_solved)},
                          {"plot", "x=epsilon y=mean_count group=target"}});
        t.columns = {"target", "epsilon", "mean_count"};
        for (int n : tasks) {
            t.columns.push_back("acc_" + std::to_string(n));
        }
        for (const auto& r : rows) {
            std::vector<std::string> row{std::string(to_string(r.target)), format_number(r.epsilon),
                                         format_number(r.mean_count)};
            for (int n : tasks) {
                row.push_back(format_number(r.accuracy.at(n)));
            }
            t.add_row(std::move(row));
        }
        const auto name = "robustness_" + label + ".csv";
        write_csv(run.path() / name, t);
        job.artifacts.push_back(name);

        if (cfg.dump_perturbed) {
            // Repeat 0 of each (target, epsilon), exactly as evaluated above.
            for (auto target : targets) {
                for (double eps : cfg.epsilons) {
                    const PerturbationSpec spec{target, eps, derive_seed(seed, {stream::perturb, 0})};
                    const auto dump = "perturbed_" + label + "_" + std::string(to_string(target)) + "_eps" +
                                      format_number(eps) + ".json";
                    save_checkpoint(perturb_network(net, spec), run.path() / dump, ck.meta);
                    job.artifacts.push_back(dump);
                }
            }
        }
        job.finished_at = detail::utc_now();
        std::lock_guard lock(mutex);
        run.add_job(std::move(job));
        detail::log_line(log, "perturb " + label + " done");
    });
    return run.finish();
}

/// Effective timescale of every neuron from the autocorrelation of its
/// activity under random input. Without a checkpoint, an untrained network is
/// built from the config for each seed.
inline CommandResult cmd_timescales(const ExperimentConfig& cfg, const LogFn& log = {})
{
    std::optional<Checkpoint> ck;
    if (!cfg.checkpoint.empty()) {
        ck = detail::load_matching_checkpoint(cfg);
    }
    detail::RunDirectory run(cfg, "timescales");
    std::mutex mutex;
    detail::run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        const auto label = detail::seed_tag(seed);
        detail::JobRecord job{seed, "", detail::utc_now(), "", {}};
        const Network net = ck ? ck->network : detail::fresh_network(cfg, seed);
        TimescaleOptions opts;
        opts.horizon = cfg.horizon;
        opts.max_lag = cfg.max_lag;
        opts.seed = seed;
        const auto ts = effective_timescales(net, opts);

        const std::vector<std::pair<std::string, std::string>> extra{
            {"seed", std::to_string(seed)}, {"source", ck ? "checkpoint" : "untrained"}};
        Table neurons;
        auto neuron_meta = extra;
        neuron_meta.emplace_back("plot", "x=trained_tau y=effective_tau");
        detail::describe(neurons, cfg, "neuron_timescales", neuron_meta);
        neurons.columns = {"module",      "index",          "trained_tau",       "effective_tau",
                           "model",       "timescale_fast", "timescale_slow",    "aic_single",
                           "aic_double",  "below_resolution", "flagged",         "flag_reason"};
        for (const auto& n : ts.neurons) {
            std::vector<std::string> row{std::to_string(n.module), std::to_string(n.index),
                                         format_number(n.trained_tau), format_number(n.effective)};
            if (n.fit) {
                const auto& f = *n.fit;
                row.push_back(std::string(to_string(f.model)));
                row.push_back(f.timescales.empty() ? "" : format_number(f.timescales.front()));
                row.push_back(f.timescales.size() > 1 ? format_number(f.timescales.back()) : "");
                row.push_back(format_number(f.aic_single));
                row.push_back(format_number(f.aic_double));
            } else {
                row.insert(row.end(), {"", "", "", "", ""});
            }
            row.push_back(n.below_resolution ? "true" : "false");
            row.push_back(n.flagged ? "true" : "false");
            std::string reason = n.flag_reason;
            std::replace(reason.begin(), reason.end(), ',', ';');
            row.push_back(reason);
            neurons.add_row(std::move(row));
        }
        Table modules;
        auto module_meta = extra;
        module_meta.emplace_back("network_mean_effective_tau", format_number(ts.network_mean));
        module_meta.emplace_back("plot", "x=module y=mean_effective_tau");
        detail::describe(modules, cfg, "module_timescales", module_meta);
        modules.columns = {"module", "mean_trained_tau", "mean_effective_tau"};
        for (std::size_t m = 0; m < ts.module_mean.size(); ++m) {
            modules.add_row({std::to_string(m), format_number(ts.module_trained_mean[m]),
                             format_number(ts.module_mean[m])});
        }
        const auto neuron_name = "timescales_" + label + ".csv";
        const auto module_name = "module_timescales_" + label + ".csv";
        write_csv(run.path() / neuron_name, neurons);
        write_csv(run.path() / module_name, modules);
        job.artifacts = {neuron_name, module_name};
        job.finished_at = detail::utc_now();
        std::lock_guard lock(mutex);
        run.add_job(std::move(job));
        detail::log_line(log, "timescales " + label + " done");
    });
    return run.finish();
}

/// Head-only transfer from the network that solved generalize.base_n to the
/// next generalize.k_max tasks. Uses input.checkpoint when given (which must
/// have solved exactly base_n), otherwise trains one network per seed up to base_n.
inline CommandResult cmd_generalize(const ExperimentConfig& cfg, const LogFn& log = {})
{
    std::optional<Checkpoint> ck;
    if (!cfg.checkpoint.empty()) {
        ck = detail::load_matching_checkpoint(cfg);
    }
    detail::RunDirectory run(cfg, "generalize");
    std::vector<std::vector<std::vector<std::string>>> rows(cfg.seeds.size());
    std::mutex mutex;
    detail::run_jobs(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        const auto label = detail::seed_tag(seed);
        detail::JobRecord job{seed, "", detail::utc_now(), "", {}};
        Network base;
        int n_solved = 0;
        if (ck) {
            base = ck->network;
            n_solved = ck->meta.n_solved;
        } else {
            CurriculumConfig cc = cfg.curriculum;
            cc.stop_at_n_solved = cfg.generalize_base_n;
            auto trained = run_curriculum(detail::fresh_network(cfg, seed), cfg.optimizer, cc, seed,
                                          detail::epoch_logger(log, "generalize " + label));
            n_solved = trained.trace.n_solved();
            if (n_solved != cfg.generalize_base_n) {
                throw std::runtime_error("generalize " + label + ": training reached N_solved = " +
                                         std::to_string(n_solved) + ", not " +
                                         std::to_string(cfg.generalize_base_n));
            }
            base = std::move(trained.network);
            const auto ck_name = "base_checkpoint_" + label + ".json";
            save_checkpoint(base, run.path() / ck_name, CheckpointMeta{n_solved, detail::content_config(cfg)});
            job.artifacts.push_back(ck_name);
        }
        const auto points = generalization_run(base, n_solved, cfg.generalize_k_max, cfg.optimizer,
                                               cfg.curriculum.eval_sequences, seed, cfg.generalize_base_n,
                                               cfg.generalize_epochs);
        for (const auto& p : points) {
            rows[i].push_back({std::string(to_string(cfg.architecture)), std::to_string(cfg.size),
                               std::to_string(seed), std::to_string(p.k), std::to_string(p.task_n),
                               format_number(p.accuracy)});
        }
        job.finished_at = detail::utc_now();
        std::lock_guard lock(mutex);
        run.add_job(std::move(job));
        detail::log_line(log, "generalize " + label + " done");
    });
    Table t;
    detail::describe(t, cfg, "generalization", {{"plot", "x=k y=accuracy group=architecture"}});
    t.columns = {"architecture", "size", "seed", "k", "task_n", "accuracy"};
    for (auto& seed_rows : rows) {
        for (auto& r : seed_rows) {
            t.add_row(std::move(r));
        }
    }
    run.write("generalization.csv", t);
    return run.finish();
}

/// Parameter counts of both architectures grown to params.n, for each
/// configured size. No training.
inline CommandResult cmd_params(const ExperimentConfig& cfg, const LogFn& log = {})
{
    detail::RunDirectory run(cfg, "params");
    Table t;
    detail::describe(t, cfg, "parameter_counts", {{"plot", "x=size y=total_params group=architecture"}});
    t.columns = {"architecture", "size", "n", "total_params", "trainable_params"};
    auto emit = [&](NetworkKind kind, int size) {
        Network net = new_network(kind, size, 0, cfg.activation, cfg.init);
        for (int n = 3; n <= cfg.params_n; ++n) {
            net = kind == NetworkKind::modular
                      ? grow(std::move(net), detail::grow_options_for(cfg.curriculum, n - 2), 0)
                      : add_head(std::move(net), 0);
        }
        const auto c = count_parameters(net);
        t.add_row({std::string(to_string(kind)), std::to_string(size), std::to_string(cfg.params_n),
                   std::to_string(c.total), std::to_string(c.trainable)});
        detail::log_line(log, "params " + std::string(to_string(kind)) + " " + std::to_string(size) + ": " +
                                  std::to_string(c.total));
    };
    for (int s : cfg.params_modular_sizes) emit(NetworkKind::modular, s);
    for (int s : cfg.params_nonmodular_sizes) emit(NetworkKind::nonmodular, s);
    run.write("params.csv", t);
    return run.finish();
}

/// Collects every run's summary.csv under the output directory into
/// <out>/aggregate/: all rows with their run name, and per (architecture, size)
/// means for the size/performance frontier.
inline CommandResult cmd_aggregate(const ExperimentConfig& cfg, const LogFn& log = {})
{
    const fs::path out(cfg.output_dir);
    if (!fs::is_directory(out)) {
        throw config_error("output.dir", "not a directory: " + cfg.output_dir);
    }
    std::vector<fs::path> runs;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.is_directory() && entry.path().filename() != "aggregate" &&
            fs::exists(entry.path() / "summary.csv")) {
            runs.push_back(entry.path());
        }
    }
    std::sort(runs.begin(), runs.end());

    Table all;
    all.set_meta("kind", "aggregate_summary");
    all.set_meta("runs", std::to_string(runs.size()));
    all.columns = {"run", "architecture", "size", "seed", "total_params", "trainable_params", "n_solved", "epochs"};
    struct Group {
        std::vector<double> params, solved;
    };
    std::map<std::pair<std::string, int>, Group> groups;
    for (const auto& dir : runs) {
        const Table s = read_csv(dir / "summary.csv");
        for (std::size_t r = 0; r < s.rows.size(); ++r) {
            std::vector<std::string> row{dir.filename().string()};
            for (std::size_t c = 1; c < all.columns.size(); ++c) {
                row.push_back(s.rows[r].at(s.column(all.columns[c])));
            }
            const std::string arch = row[1];
            auto& g = groups[{arch, std::stoi(row[2])}];
            g.params.push_back(parse_number(row[4]));
            g.solved.push_back(parse_number(row[6]));
            all.add_row(std::move(row));
        }
        detail::log_line(log, "aggregate: " + dir.filename().string());
    }
    Table front;
    front.set_meta("kind", "aggregate_frontier");
    front.set_meta("plot", "x=total_params y=mean_n_solved err=sem group=architecture");
    front.columns = {"architecture", "size", "mean_total_params", "mean_n_solved", "sem", "runs"};
    for (const auto& [key, g] : groups) {
        front.add_row({key.first, std::to_string(key.second), format_number(detail::mean_of(g.params)),
                       format_number(detail::mean_of(g.solved)), format_number(detail::sem(g.solved)),
                       std::to_string(g.solved.size())});
    }
    const fs::path dir = out / "aggregate";
    fs::create_directories(dir);
    write_csv(dir / "summary_all.csv", all);
    write_csv(dir / "frontier.csv", front);
    return {dir, {"summary_all.csv", "frontier.csv"}};
}

struct ValidationReport {
    int csv_files = 0;
    int checkpoints = 0;
    int manifests = 0;
};

/// Re-parses every CSV, checkpoint and manifest below the output directory.
/// CSVs must carry the format version and reproduce their bytes when
/// re-serialized; run outputs must also embed the resolved config.
inline ValidationReport cmd_validate(const ExperimentConfig& cfg, const LogFn& log = {})
{
    const fs::path out(cfg.output_dir);
    if (!fs::is_directory(out)) {
        throw config_error("output.dir", "not a directory: " + cfg.output_dir);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    ValidationReport report;
    const auto& defaults = default_config();
    for (const auto& path : files) {
        const auto ext = path.extension();
        if (ext == ".csv") {
            const std::string text = read_text(path);
            const Table t = parse_csv(text);
            if (to_csv_string(t) != text) {
                throw csv_error(path.string() + ": re-serialization differs from the file");
            }
            const bool aggregate = path.parent_path().filename() == "aggregate";
            if (!aggregate) {
                for (const auto& [k, v] : defaults) {
                    if (!is_placement_key(k) && !t.find_meta("config." + k)) {
                        throw csv_error(path.string() + ": missing resolved config key " + k);
                    }
                }
            }
            for (const auto& row : t.rows) {
                for (const auto& cell : row) {
                    const bool integer = !cell.empty() && std::all_of(cell.begin(), cell.end(), [](unsigned char c) {
                        return std::isdigit(c) != 0;
                    });
                    const bool numeric = !cell.empty() && (std::isdigit(static_cast<unsigned char>(cell[0])) ||
                                                           cell[0] == '-' || cell == "nan" || cell == "inf");
                    if (integer || !numeric) {
                        continue;
                    }
                    if (format_number(parse_number(cell)) != cell) {
                        throw csv_error(path.string() + ": number does not round-trip: " + cell);
                    }
                }
            }
            ++report.csv_files;
        } else if (ext == ".json") {
            const auto j = nlohmann::json::parse(read_text(path));
            if (j.value("format", "") == "modgrow-manifest") {
                if (j.at("format_version").get<int>() != manifest_format_version) {
                    throw std::runtime_error(path.string() + ": unsupported manifest version");
                }
                auto check = [&](const nlohmann::json& list) {
                    for (const auto& a : list) {
                        if (!fs::exists(path.parent_path() / a.get<std::string>())) {
                            throw std::runtime_error(path.string() + ": missing artifact " + a.get<std::string>());
                        }
                    }
                };
                check(j.at("artifacts"));
                for (const auto& job : j.at("jobs")) {
                    check(job.at("artifacts"));
                }
                ++report.manifests;
            } else {
                const Checkpoint ck = checkpoint_from_json(j);
                if (checkpoint_to_json(ck.network, ck.meta) != j) {
                    throw checkpoint_error(path.string() + ": checkpoint does not round-trip");
                }
                ++report.checkpoints;
            }
        }
    }
    detail::log_line(log, "validated " + std::to_string(report.csv_files) + " CSV files, " +
                              std::to_string(report.checkpoints) + " checkpoints, " +
                              std::to_string(report.manifests) + " manifests");
    return report;
}

}  // namespace modgrow
