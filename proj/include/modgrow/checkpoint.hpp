#pragma once

// Versioned JSON checkpoints. Matrices are stored row-major as flat arrays.
// Doubles are written with round-trip precision, so load(save(x)) == x bit for bit.
//
// {
//   "format": "modgrow-checkpoint", "format_version": 1,
//   "kind": "modular" | "nonmodular",
//   "activation": {"alpha": a}, "init": {"tau_min": lo, "tau_max": hi},
//   "meta": {"n_solved": n, "config": {"key": "value", ...}},
//   "modules": [{"size": M, "recurrent": [...], "feedforward": [...] | null,
//                "input": [...], "bias": [...], "tau": [...],
//                "frozen": {"recurrent": b, "feedforward": b, "input": b, "bias": b, "tau": b}}],
//   "heads": [{"task_n": n, "source": m, "frozen": b, "weights": [...2*M], "bias": [b0, b1]}]
// }

#include "modgrow/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace modgrow {

inline constexpr int checkpoint_format_version = 1;

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    int n_solved = 1;
    std::map<std::string, std::string> config;
};

struct Checkpoint {
    Network network;
    CheckpointMeta meta;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m)
{
    auto arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            arr.push_back(m(i, j));
        }
    }
    return arr;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (!j.is_array() || j.size() != static_cast<std::size_t>(rows * cols)) {
        throw checkpoint_error("checkpoint: '" + what + "' has " + std::to_string(j.is_array() ? j.size() : 0) +
                               " entries, expected " + std::to_string(rows * cols));
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& v = j[k++];
            if (!v.is_number()) {
                throw checkpoint_error("checkpoint: '" + what + "' contains a non-number");
            }
            m(i, c) = v.get<double>();
        }
    }
    return m;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Network& net, const CheckpointMeta& meta = {})
{
    using nlohmann::json;
    json j;
    j["format"] = "modgrow-checkpoint";
    j["format_version"] = checkpoint_format_version;
    j["kind"] = std::string(to_string(net.kind));
    j["activation"] = {{"alpha", net.activation.alpha}};
    j["init"] = {{"tau_min", net.init.tau_min}, {"tau_max", net.init.tau_max}};
    j["meta"] = {{"n_solved", meta.n_solved}, {"config", meta.config}};
    j["modules"] = json::array();
    for (const auto& mod : net.modules) {
        json m;
        m["size"] = mod.size();
        m["recurrent"] = detail::matrix_to_json(mod.recurrent);
        m["feedforward"] = mod.has_feedforward() ? detail::matrix_to_json(mod.feedforward) : json(nullptr);
        m["input"] = detail::matrix_to_json(mod.input);
        m["bias"] = detail::matrix_to_json(mod.bias);
        m["tau"] = detail::matrix_to_json(mod.tau);
        m["frozen"] = {{"recurrent", mod.frozen.recurrent}, {"feedforward", mod.frozen.feedforward},
                       {"input", mod.frozen.input},         {"bias", mod.frozen.bias},
                       {"tau", mod.frozen.tau}};
        j["modules"].push_back(std::move(m));
    }
    j["heads"] = json::array();
    for (const auto& h : net.heads) {
        j["heads"].push_back({{"task_n", h.task_n},
                              {"source", h.source},
                              {"frozen", h.frozen},
                              {"weights", detail::matrix_to_json(h.weights)},
                              {"bias", detail::matrix_to_json(h.bias)}});
    }
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j)
{
    try {
        if (j.value("format", std::string{}) != "modgrow-checkpoint") {
            throw checkpoint_error("checkpoint: not a modgrow checkpoint");
        }
        const int version = j.at("format_version").get<int>();
        if (version != checkpoint_format_version) {
            throw checkpoint_error("checkpoint: unsupported format version " + std::to_string(version));
        }
        Checkpoint cp;
        Network& net = cp.network;
        net.kind = parse_network_kind(j.at("kind").get<std::string>());
        net.activation.alpha = j.at("activation").at("alpha").get<double>();
        net.init.tau_min = j.at("init").at("tau_min").get<double>();
        net.init.tau_max = j.at("init").at("tau_max").get<double>();
        cp.meta.n_solved = j.at("meta").at("n_solved").get<int>();
        cp.meta.config = j.at("meta").at("config").get<std::map<std::string, std::string>>();
        for (const auto& m : j.at("modules")) {
            const auto size = m.at("size").get<Eigen::Index>();
            if (size <= 0) {
                throw checkpoint_error("checkpoint: module size must be positive");
            }
            ModuleParams mod;
            mod.recurrent = detail::matrix_from_json(m.at("recurrent"), size, size, "recurrent");
            if (!m.at("feedforward").is_null()) {
                mod.feedforward = detail::matrix_from_json(m.at("feedforward"), size, size, "feedforward");
            }
            mod.input = detail::matrix_from_json(m.at("input"), size, 1, "input");
            mod.bias = detail::matrix_from_json(m.at("bias"), size, 1, "bias");
            mod.tau = detail::matrix_from_json(m.at("tau"), size, 1, "tau");
            const auto& f = m.at("frozen");
            mod.frozen = {f.at("recurrent").get<bool>(), f.at("feedforward").get<bool>(), f.at("input").get<bool>(),
                          f.at("bias").get<bool>(), f.at("tau").get<bool>()};
            net.modules.push_back(std::move(mod));
        }
        for (const auto& h : j.at("heads")) {
            ReadoutHead head;
            head.task_n = h.at("task_n").get<int>();
            head.source = h.at("source").get<int>();
            head.frozen = h.at("frozen").get<bool>();
            if (head.source < 0 || head.source >= static_cast<int>(net.modules.size())) {
                throw checkpoint_error("checkpoint: head source out of range");
            }
            const auto cols = net.modules[static_cast<std::size_t>(head.source)].size();
            head.weights = detail::matrix_from_json(h.at("weights"), 2, cols, "head weights");
            head.bias = detail::matrix_from_json(h.at("bias"), 2, 1, "head bias");
            net.heads.push_back(std::move(head));
        }
        validate_network(net);
        return cp;
    } catch (const checkpoint_error&) {
        throw;
    } catch (const std::exception& e) {
        throw checkpoint_error(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path, const CheckpointMeta& meta = {})
{
    std::ofstream out(path);
    if (!out) {
        throw checkpoint_error("checkpoint: cannot write " + path.string());
    }
    out << checkpoint_to_json(net, meta).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw checkpoint_error("checkpoint: cannot read " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw checkpoint_error(std::string("checkpoint: corrupt file: ") + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace modgrow
