// modgrow: run the growing-network experiments from a config file.
//
//   modgrow train --config configs/train_modular.cfg --seed 1 --seed 2 --out runs
//   modgrow perturb --config runs/train-.../config.txt --override input.checkpoint=runs/.../checkpoint_seed1.json
//   modgrow validate --out runs
//
// Exit status: 0 on success, 1 for configuration or usage errors, 2 when a run fails.

#include "modgrow/modgrow.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <mutex>

namespace {

struct Options {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App& cmd, Options& opt)
{
    cmd.add_option("--config", opt.config, "config file with 'key = value' lines");
    cmd.add_option("--seed", opt.seeds, "seed (repeatable); replaces the 'seeds' key");
    cmd.add_option("--out", opt.out, "output directory; replaces 'output.dir'");
    cmd.add_option("--override", opt.overrides, "KEY=VALUE (repeatable), applied after the config file");
}

modgrow::ExperimentConfig resolve(const Options& opt)
{
    modgrow::ConfigBuilder b;
    if (!opt.config.empty()) {
        b.load_file(opt.config);
    }
    for (const auto& o : opt.overrides) {
        b.override_with(o);
    }
    if (!opt.seeds.empty()) {
        std::string joined;
        for (auto s : opt.seeds) {
            joined += (joined.empty() ? "" : ",") + std::to_string(s);
        }
        b.set("seeds", joined);
    }
    if (!opt.out.empty()) {
        b.set("output.dir", opt.out);
    }
    return b.build();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Growing modular and non-modular recurrent networks on N-parity"};
    app.require_subcommand(1);
    Options opt;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"train", "curriculum training per seed: traces, checkpoints, summary"},
        {"freeze", "curriculum training with growth.freeze_mode (modular only)"},
        {"duplicate", "the four duplicate-recurrent / duplicate-feedforward growth conditions"},
        {"perturb", "robustness of input.checkpoint to weight and tau perturbations"},
        {"timescales", "effective neuron timescales of input.checkpoint (or an untrained network)"},
        {"generalize", "head-only transfer to tasks beyond generalize.base_n"},
        {"params", "parameter counts at params.n for each configured size"},
        {"aggregate", "collect summary.csv files under --out into <out>/aggregate"},
        {"validate", "re-parse every output under --out"},
    };
    for (const auto& [name, help] : commands) {
        add_common(*app.add_subcommand(name, help), opt);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    std::mutex log_mutex;
    const modgrow::LogFn log = [&](const std::string& line) {
        std::lock_guard lock(log_mutex);
        std::cerr << line << '\n';
    };

    modgrow::ExperimentConfig cfg;
    try {
        cfg = resolve(opt);
    } catch (const modgrow::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (command == "validate") {
            modgrow::cmd_validate(cfg, log);
            return 0;
        }
        modgrow::CommandResult result;
        if (command == "train") result = modgrow::cmd_train(cfg, log);
        else if (command == "freeze") result = modgrow::cmd_freeze(cfg, log);
        else if (command == "duplicate") result = modgrow::cmd_duplicate(cfg, log);
        else if (command == "perturb") result = modgrow::cmd_perturb(cfg, log);
        else if (command == "timescales") result = modgrow::cmd_timescales(cfg, log);
        else if (command == "generalize") result = modgrow::cmd_generalize(cfg, log);
        else if (command == "params") result = modgrow::cmd_params(cfg, log);
        else if (command == "aggregate") result = modgrow::cmd_aggregate(cfg, log);
        std::cout << result.run_dir.string() << '\n';
    } catch (const modgrow::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
