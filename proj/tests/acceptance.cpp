// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is the number of failed criteria.

#include "modgrow/modgrow.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace modgrow;
using modgrow::testing::for_each_tensor;
using modgrow::testing::numeric_gradient;
using modgrow::testing::random_small_network;
using modgrow::testing::relative_error;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int digits = 4)
{
    std::ostringstream s;
    s.precision(digits);
    s << x;
    return s.str();
}

template <typename T>
std::string join(const std::vector<T>& xs)
{
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt(xs[i]);
        } else {
            out += std::to_string(xs[i]);
        }
    }
    return out;
}

void progress(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

const std::vector<std::uint64_t> seeds{1, 2, 3};

ExperimentConfig config(std::initializer_list<std::pair<std::string, std::string>> overrides)
{
    ConfigBuilder b;
    for (const auto& [k, v] : overrides) b.set(k, v);
    return b.build();
}

CurriculumResult train(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& label)
{
    const auto start = std::chrono::steady_clock::now();
    auto r = run_curriculum(detail::fresh_network(cfg, seed), cfg.optimizer, cfg.curriculum, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    progress(label + " seed " + std::to_string(seed) + ": N_solved " + std::to_string(r.trace.n_solved()) +
             " after " + std::to_string(r.trace.epochs.back().epoch) + " epochs (" + fmt(secs, 3) + " s)");
    return r;
}

int solved_at_epoch(const CurriculumTrace& trace, int epoch)
{
    int n = 1;
    for (const auto& e : trace.epochs) {
        if (e.epoch <= epoch) n = e.n_solved;
    }
    return n;
}

double mean(const std::vector<double>& xs)
{
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

std::vector<double> ranks(const std::vector<double>& xs)
{
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> r(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = mean(rx), my = mean(ry);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> ar1(double tau, long long length, std::uint64_t seed)
{
    const double phi = std::exp(-1.0 / tau);
    const double sd = std::sqrt(1.0 - phi * phi);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(static_cast<std::size_t>(length));
    double v = normal(rng);
    for (auto& out : x) {
        v = phi * v + sd * normal(rng);
        out = v;
    }
    return x;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness()
{
    std::set<std::string> kinds;
    double worst = 0.0;
    int instances = 0;
    for (int i = 0; i < 24; ++i, ++instances) {
        const auto kind = i % 2 ? NetworkKind::nonmodular : NetworkKind::modular;
        Network net = random_small_network(kind, 2 + i % 3, kind == NetworkKind::modular ? 1 + i % 2 : i % 3,
                                           5000 + static_cast<std::uint64_t>(i));
        const auto batch = gen_batch(net.max_task(), 2, 6000 + static_cast<std::uint64_t>(i));
        const auto reduction = i % 4 < 2 ? HeadReduction::mean : HeadReduction::sum;
        const auto lg = bptt_gradients(net, batch, reduction);
        for_each_tensor(net, lg.gradients, [&](const std::string& name, Eigen::Ref<Matrix> p, const Matrix& g) {
            const Matrix num = numeric_gradient(net, p, batch, reduction, 1e-5, name.find("recurrent") != std::string::npos);
            worst = std::max(worst, relative_error(g, num));
            const auto dot = name.find('.');
            kinds.insert((name.rfind("head", 0) == 0 ? "head." : "") + name.substr(dot + 1));
        });
    }
    const bool all_kinds = kinds.size() == 7;
    return {worst <= 1e-4 && all_kinds, std::to_string(instances) + " instances, " + std::to_string(kinds.size()) +
                                            "/7 tensor kinds, worst relative error " + fmt(worst, 3) +
                                            " (limit 1e-4)"};
}

Outcome parity_oracle()
{
    Rng rng(77);
    std::uniform_int_distribution<int> bit(0, 1), len(1, 64), nd(1, 40);
    int mismatches = 0;
    for (int q = 0; q < 10000; ++q) {
        const int n = nd(rng);
        Bits s(static_cast<std::size_t>(n - 1 + len(rng)));
        for (auto& b : s) b = static_cast<std::uint8_t>(bit(rng));
        const int t = std::uniform_int_distribution<int>(n - 1, static_cast<int>(s.size()) - 1)(rng);
        int ones = 0;
        for (int k = 0; k < n; ++k) ones += s[static_cast<std::size_t>(t - k)];
        mismatches += parity_target(s, n, t) != (ones % 2);
    }
    return {mismatches == 0, "10000 random queries, " + std::to_string(mismatches) + " mismatches"};
}

Outcome perturbation_identity_and_norm()
{
    Network net = random_small_network(NetworkKind::modular, 6, 3, 11);
    bool identity = true;
    for (auto t : {PerturbTarget::connections, PerturbTarget::recurrent, PerturbTarget::feedforward, PerturbTarget::tau}) {
        const Network p = perturb_network(net, {t, 0.0, 3});
        for (std::size_t m = 0; m < net.modules.size(); ++m) {
            auto same = [](const Matrix& a, const Matrix& b) {
                return a.size() == b.size() &&
                       std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
            };
            identity = identity && same(p.modules[m].recurrent, net.modules[m].recurrent) &&
                       same(p.modules[m].feedforward, net.modules[m].feedforward) &&
                       same(p.modules[m].tau, net.modules[m].tau);
        }
    }
    double worst = 0.0;
    std::uint64_t seed = 0;
    for (double eps : {0.01, 0.1, 1.0}) {
        for (auto t : {PerturbTarget::recurrent, PerturbTarget::feedforward, PerturbTarget::tau}) {
            const Network p = perturb_network(net, {t, eps, ++seed});
            for (std::size_t m = 0; m < net.modules.size(); ++m) {
                const auto& a = net.modules[m];
                const auto& b = p.modules[m];
                if (t == PerturbTarget::recurrent) {
                    worst = std::max(worst, std::abs((b.recurrent - a.recurrent).norm() / a.recurrent.norm() - eps));
                } else if (t == PerturbTarget::feedforward && a.has_feedforward()) {
                    worst = std::max(worst, std::abs((b.feedforward - a.feedforward).norm() / a.feedforward.norm() - eps));
                } else if (t == PerturbTarget::tau) {
                    worst = std::max(worst, std::abs((b.tau - a.tau).norm() / a.tau.norm() - eps));
                }
            }
        }
    }
    return {identity && worst <= 1e-6, std::string("epsilon=0 bit-identical: ") + (identity ? "yes" : "no") +
                                           "; worst |distortion - epsilon| " + fmt(worst, 3) + " (limit 1e-6)"};
}

Outcome timescale_recovery()
{
    std::vector<double> recovered;
    bool ok = true;
    std::uint64_t seed = 900;
    for (double tau : {2.0, 5.0, 20.0, 50.0}) {
        const auto ac = autocorrelation(ar1(tau, 100000, ++seed), 200);
        const auto fit = fit_timescales(*ac);
        recovered.push_back(fit.reported_timescale);
        ok = ok && !fit.flagged && std::abs(fit.reported_timescale / tau - 1.0) <= 0.1;
    }
    int single = 0, curves = 0;
    for (double tau : {1.5, 3.0, 7.0, 10.0, 25.0, 60.0, 150.0}) {
        for (double amp : {1.0, 0.4, 1e-3}) {
            for (double offset : {0.0, 0.05}) {
                std::vector<double> ac(201);
                for (std::size_t k = 0; k < ac.size(); ++k) ac[k] = offset + amp * std::exp(-static_cast<double>(k) / tau);
                ac[0] = 1.0;
                ++curves;
                single += fit_timescales(ac).model == TimescaleModel::single;
            }
        }
    }
    return {ok && single == curves, "AR(1) tau 2,5,20,50 -> " + join(recovered) + " (within 10%: " +
                                        (ok ? "yes" : "no") + "); exact single exponentials selecting single: " +
                                        std::to_string(single) + "/" + std::to_string(curves)};
}

struct Runs {
    std::vector<CurriculumResult> modular10, nonmodular54, modular15;
};

Outcome modular_speed(const Runs& runs)
{
    std::vector<int> at30;
    for (const auto& r : runs.modular10) at30.push_back(solved_at_epoch(r.trace, 30));
    const int best = *std::max_element(at30.begin(), at30.end());
    return {best >= 15, "M_m=10 N_solved at epoch 30 per seed: " + join(at30) + "; best " + std::to_string(best) +
                            " (need >= 15)"};
}

Outcome pareto(const Runs& runs)
{
    std::vector<int> mod, non;
    for (const auto& r : runs.modular10) mod.push_back(r.trace.n_solved());
    for (const auto& r : runs.nonmodular54) non.push_back(r.trace.n_solved());
    const double mm = mean(std::vector<double>(mod.begin(), mod.end()));
    const double mn = mean(std::vector<double>(non.begin(), non.end()));
    const bool plateau = std::abs(mn - 10.0) <= 3.0;
    return {mm > mn && plateau, "60 epochs, mean N_solved modular M_m=10 " + fmt(mm) + " (" + join(mod) +
                                    ") vs non-modular M=54 " + fmt(mn) + " (" + join(non) + "); non-modular within 10+-3: " +
                                    (plateau ? "yes" : "no")};
}

Outcome freezing()
{
    std::vector<int> ff, rec;
    for (auto s : seeds) {
        ff.push_back(train(config({{"size", "5"}, {"growth.freeze_mode", "feedforward"}}), s, "frozen-FF M_m=5")
                         .trace.n_solved());
    }
    for (auto s : seeds) {
        rec.push_back(train(config({{"size", "5"}, {"growth.freeze_mode", "recurrent"}}), s, "frozen-rec M_m=5")
                          .trace.n_solved());
    }
    const int ff_max = *std::max_element(ff.begin(), ff.end());
    const int rec_best = *std::max_element(rec.begin(), rec.end());
    return {ff_max <= 3 && rec_best >= 10, "frozen feedforward N_solved " + join(ff) + " (need all <= 3); frozen recurrent " +
                                               join(rec) + " (need best >= 10)"};
}

Outcome timescale_dissociation(const Runs& runs)
{
    // Modular: per-module mean trained tau and effective timescale, ensemble over seeds.
    std::size_t modules = runs.modular15.front().network.modules.size();
    for (const auto& r : runs.modular15) modules = std::min(modules, r.network.modules.size());
    std::vector<double> trained(modules, 0.0), effective(modules, 0.0);
    std::vector<int> eff_count(modules, 0);
    for (std::size_t i = 0; i < runs.modular15.size(); ++i) {
        const auto& net = runs.modular15[i].network;
        const auto rows = trained_timescale_summary(net);
        TimescaleOptions opts;
        opts.seed = seeds[i];
        const auto start = std::chrono::steady_clock::now();
        const auto ts = effective_timescales(net, opts);
        progress("effective timescales seed " + std::to_string(seeds[i]) + " (" +
                 fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 3) + " s)");
        for (std::size_t m = 0; m < modules; ++m) {
            trained[m] += rows[m].mean / static_cast<double>(runs.modular15.size());
            if (std::isfinite(ts.module_mean[m])) {
                effective[m] += ts.module_mean[m];
                ++eff_count[m];
            }
        }
    }
    for (std::size_t m = 0; m < modules; ++m) effective[m] /= std::max(1, eff_count[m]);
    const double tm = mean(trained);
    double var = 0.0;
    for (double t : trained) var += (t - tm) * (t - tm);
    const double cv = std::sqrt(var / static_cast<double>(modules)) / tm;
    const auto [lo, hi] = std::minmax_element(trained.begin(), trained.end());
    const double spread = (*hi - *lo) / tm;
    std::vector<double> index(modules);
    std::iota(index.begin(), index.end(), 0.0);
    const double rho = spearman(index, effective);

    // Non-modular: mean tau when N_solved first reached 8, against the initial mean.
    std::vector<double> at8, initial;
    for (std::size_t i = 0; i < runs.nonmodular54.size(); ++i) {
        for (const auto& step : runs.nonmodular54[i].trace.steps) {
            if (step.n_solved >= 8) {
                at8.push_back(step.tau.front().mean());
                initial.push_back(
                    detail::fresh_network(config({{"architecture", "nonmodular"}, {"size", "54"}}), seeds[i])
                        .modules.front()
                        .tau.mean());
                break;
            }
        }
    }
    const bool nonmod_ok = !at8.empty() && mean(at8) < mean(initial);
    const bool ok = modules >= 10 && spread < 0.25 && effective.back() > effective.front() && rho > 0.0 && nonmod_ok;
    return {ok, std::to_string(modules) + " modules; trained tau per module " + join(trained) + " ((max-min)/mean " + fmt(spread, 3) +
                    ", need < 0.25; CV " + fmt(cv, 3) + "); effective per module " + join(effective) + " (last > first: " +
                    (effective.back() > effective.front() ? "yes" : "no") + ", Spearman " + fmt(rho, 3) +
                    "); non-modular mean tau at N>=8 " + fmt(at8.empty() ? std::nan("") : mean(at8)) + " vs initial " +
                    fmt(initial.empty() ? std::nan("") : mean(initial)) + " over " + std::to_string(at8.size()) +
                    " networks"};
}

Outcome conservation(const Runs& runs)
{
    std::vector<double> rec, ff;
    std::vector<int> solved;
    for (const auto& r : runs.modular15) {
        const auto stats = weight_change_variance(r.network);
        rec.push_back(stats.mean_variance(WeightClass::recurrent));
        ff.push_back(stats.mean_variance(WeightClass::feedforward));
        solved.push_back(r.trace.n_solved());
    }
    const bool enough = std::all_of(solved.begin(), solved.end(), [](int n) { return n >= 10; });
    return {enough && mean(rec) < mean(ff), "M_m=15 networks N_solved " + join(solved) +
                                                "; mean normalized change variance recurrent " + fmt(mean(rec)) +
                                                " (" + join(rec) + ") vs feedforward " + fmt(mean(ff)) + " (" + join(ff) +
                                                ")"};
}

Outcome targeted_perturbation(const Runs& runs)
{
    const std::vector<double> grid{0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0};
    const std::set<double> judged{0.03, 0.1, 0.3};
    std::size_t modules = runs.modular15.front().network.modules.size();
    for (const auto& r : runs.modular15) modules = std::min(modules, r.network.modules.size());
    // loss[target][epsilon index][module], ensemble mean over networks.
    std::map<PerturbTarget, std::vector<std::vector<double>>> loss;
    for (auto t : {PerturbTarget::recurrent, PerturbTarget::feedforward}) {
        loss[t].assign(grid.size(), std::vector<double>(modules, 0.0));
    }
    for (std::size_t i = 0; i < runs.modular15.size(); ++i) {
        RobustnessOptions opts;
        opts.n_repeats = 5;
        opts.n_eval = 100;
        opts.seed = seeds[i];
        const auto rows = robustness_curve(runs.modular15[i].network,
                                           {PerturbTarget::recurrent, PerturbTarget::feedforward}, grid, opts);
        for (const auto& row : rows) {
            const auto e = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), row.epsilon) - grid.begin());
            const auto& base = rows[row.target == PerturbTarget::recurrent ? 0 : grid.size()];
            for (std::size_t m = 0; m < modules; ++m) {
                const int task = static_cast<int>(m) + 2;
                loss[row.target][e][m] +=
                    (base.accuracy.at(task) - row.accuracy.at(task)) / static_cast<double>(runs.modular15.size());
            }
        }
        progress("robustness seed " + std::to_string(seeds[i]));
    }
    bool ff_ge_rec = true, deeper = true;
    std::string detail;
    const std::size_t half = modules / 2;
    for (std::size_t e = 1; e < grid.size(); ++e) {
        const double lr = mean(loss[PerturbTarget::recurrent][e]);
        const double lf = mean(loss[PerturbTarget::feedforward][e]);
        std::string depth;
        bool depth_ok = true;
        for (auto t : {PerturbTarget::recurrent, PerturbTarget::feedforward}) {
            const auto& l = loss[t][e];
            const double shallow = mean(std::vector<double>(l.begin(), l.begin() + static_cast<long>(half)));
            const double deep = mean(std::vector<double>(l.end() - static_cast<long>(half), l.end()));
            depth_ok = depth_ok && deep >= shallow;
            depth += std::string(t == PerturbTarget::recurrent ? " rec" : " ff") + " shallow/deep " + fmt(shallow, 3) +
                     "/" + fmt(deep, 3);
        }
        const bool judged_here = judged.count(grid[e]) > 0;
        if (judged_here) {
            ff_ge_rec = ff_ge_rec && lf >= lr;
            deeper = deeper && depth_ok;
        }
        detail += (detail.empty() ? "" : "; ") + std::string(judged_here ? "*" : "") + "eps " + fmt(grid[e]) +
                  ": loss ff " + fmt(lf, 3) + " rec " + fmt(lr, 3) + depth;
    }
    return {ff_ge_rec && deeper, std::string("ff >= rec at judged eps (*): ") + (ff_ge_rec ? "yes" : "no") +
                                     ", deeper >= shallower: " + (deeper ? "yes" : "no") + " | " + detail};
}

Outcome determinism()
{
    const auto base = std::filesystem::temp_directory_path() / "modgrow_acceptance";
    std::filesystem::remove_all(base);
    auto cfg_for = [&](const std::string& out) {
        return config({{"size", "4"},
                       {"seeds", "1,2"},
                       {"optimizer.max_epochs", "4"},
                       {"optimizer.batches_per_epoch", "20"},
                       {"output.dir", (base / out).string()}});
    };
    const auto a = cmd_train(cfg_for("a"));
    const auto b = cmd_train(cfg_for("b"));
    bool traces = true;
    for (const char* name : {"trace_seed1.csv", "trace_seed2.csv"}) {
        traces = traces && read_text(a.run_dir / name) == read_text(b.run_dir / name);
    }
    bool round_trip = true;
    for (const char* name : {"checkpoint_seed1.json", "checkpoint_seed2.json"}) {
        const auto ck = load_checkpoint(a.run_dir / name);
        save_checkpoint(ck.network, base / "again.json", ck.meta);
        const auto again = load_checkpoint(base / "again.json");
        round_trip = round_trip && read_text(a.run_dir / name) == read_text(base / "again.json") &&
                     again.network == ck.network;
    }
    std::filesystem::remove_all(base);
    return {traces && round_trip, std::string("trace CSVs byte-identical: ") + (traces ? "yes" : "no") +
                                      "; checkpoint round-trip bit-exact: " + (round_trip ? "yes" : "no")};
}

}  // namespace

int main()
{
    int failed = 0;
    auto report = [&](int id, const std::string& name, const Outcome& o) {
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " " << name << ": " << o.detail << std::endl;
    };
    auto timed = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        std::cerr << "criterion " << id << " " << name << std::endl;
        report(id, name, fn());
    };

    timed(1, "gradient correctness", gradient_correctness);
    timed(2, "parity oracle", parity_oracle);
    timed(3, "perturbation identity and norm", perturbation_identity_and_norm);
    timed(4, "timescale recovery", timescale_recovery);

    std::cerr << "training networks for criteria 5, 6, 8, 9, 10" << std::endl;
    Runs runs;
    for (auto s : seeds) runs.modular10.push_back(train(config({{"size", "10"}}), s, "modular M_m=10"));
    for (auto s : seeds) {
        runs.nonmodular54.push_back(train(config({{"architecture", "nonmodular"}, {"size", "54"}}), s, "non-modular M=54"));
    }
    for (auto s : seeds) {
        runs.modular15.push_back(train(
            config({{"size", "15"}, {"curriculum.stop_at_n_solved", "12"}, {"optimizer.max_epochs", "30"}}), s,
            "modular M_m=15"));
    }

    timed(5, "modular learning speed", [&] { return modular_speed(runs); });
    timed(6, "pareto dominance", [&] { return pareto(runs); });
    timed(7, "freezing ablation", freezing);
    timed(8, "timescale dissociation", [&] { return timescale_dissociation(runs); });
    timed(9, "conservation asymmetry", [&] { return conservation(runs); });
    timed(10, "targeted perturbation asymmetry", [&] { return targeted_perturbation(runs); });
    timed(11, "determinism", determinism);

    std::cout << (11 - failed) << "/11 criteria passed" << std::endl;
    return failed;
}
