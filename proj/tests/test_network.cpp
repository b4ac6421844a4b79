#include "modgrow/checkpoint.hpp"
#include "modgrow/forward.hpp"
#include "modgrow/network.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace modgrow;

namespace {

// Loop-and-count over every stored scalar, skipping recurrent diagonals.
ParameterCount loop_count(const Network& net)
{
    ParameterCount c;
    auto visit = [&c](const Matrix& m, bool frozen, bool skip_diag) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                if (skip_diag && i == j) continue;
                ++c.total;
                if (!frozen) ++c.trainable;
            }
        }
    };
    for (const auto& mod : net.modules) {
        visit(mod.recurrent, mod.frozen.recurrent, true);
        visit(mod.feedforward, mod.frozen.feedforward, false);
        visit(mod.input, mod.frozen.input, false);
        visit(mod.bias, mod.frozen.bias, false);
        visit(mod.tau, mod.frozen.tau, false);
    }
    for (const auto& h : net.heads) {
        visit(h.weights, h.frozen, false);
        visit(h.bias, h.frozen, false);
    }
    return c;
}

Network grown(int size, int modules, std::uint64_t seed, GrowOptions opts = {})
{
    Network net = new_network(NetworkKind::modular, size, seed);
    for (int i = 1; i < modules; ++i) {
        net = grow(std::move(net), opts, seed);
    }
    return net;
}

std::filesystem::path temp_file(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "modgrow_test_network";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(NewNetwork, DeterministicPerSeed)
{
    EXPECT_TRUE(new_network(NetworkKind::modular, 5, 1) == new_network(NetworkKind::modular, 5, 1));
    EXPECT_FALSE(new_network(NetworkKind::modular, 5, 1) == new_network(NetworkKind::modular, 5, 2));
}

TEST(NewNetwork, ShapesAndInitializer)
{
    const Network net = new_network(NetworkKind::nonmodular, 20, 4);
    ASSERT_EQ(net.modules.size(), 1u);
    ASSERT_EQ(net.heads.size(), 1u);
    const auto& m = net.modules[0];
    EXPECT_EQ(m.recurrent.rows(), 20);
    EXPECT_EQ(m.recurrent.cols(), 20);
    EXPECT_TRUE(m.recurrent.diagonal().isZero(0.0));
    EXPECT_FALSE(m.has_feedforward());
    EXPECT_LE(m.recurrent.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(20.0));
    EXPECT_LE(m.input.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_TRUE(m.bias.isZero(0.0));
    EXPECT_GE(m.tau.minCoeff(), 1.0);
    EXPECT_LE(m.tau.maxCoeff(), 3.0);
    EXPECT_EQ(net.heads[0].task_n, 2);
    EXPECT_THROW(new_network(NetworkKind::modular, 0, 1), std::invalid_argument);
}

TEST(CountParameters, HandCountedExamples)
{
    EXPECT_EQ(count_parameters(new_network(NetworkKind::modular, 5, 1)).total, 20 + 5 + 5 + 5 + 12);
    EXPECT_EQ(count_parameters(new_network(NetworkKind::nonmodular, 20, 1)).total, 380 + 20 + 20 + 20 + 42);
}

TEST(CountParameters, MatchesLoopOracle)
{
    for (int modules = 1; modules <= 5; ++modules) {
        const Network net = grown(15, modules, 3);
        const auto c = count_parameters(net);
        const auto o = loop_count(net);
        EXPECT_EQ(c.total, o.total);
        EXPECT_EQ(c.trainable, o.trainable);
    }
    // Only the newest module (15*14 + 15*15 + 3*15) and its head (2*15 + 2) train.
    EXPECT_EQ(count_parameters(grown(15, 4, 3)).trainable, 210 + 225 + 45 + 32);
    EXPECT_EQ(count_parameters(grown(15, 1, 3)).trainable, 210 + 45 + 32);
}

TEST(CountParameters, SizePairingsAreComparableAtThirtyTasks)
{
    const std::vector<std::pair<int, int>> pairs{{5, 20}, {10, 54}, {15, 91}, {20, 128}};
    for (const auto& [mm, m] : pairs) {
        Network mod = new_network(NetworkKind::modular, mm, 1);
        Network non = new_network(NetworkKind::nonmodular, m, 1);
        for (int n = 3; n <= 30; ++n) {
            mod = grow(std::move(mod), {}, 1);
            non = add_head(std::move(non), 1);
        }
        // Closed forms at N = 30: 29 modules, 28 with feedforward, 29 heads.
        const std::int64_t mod_total = 29 * (mm * (mm - 1) + 3 * mm) + 28 * mm * mm + 29 * (2 * mm + 2);
        const std::int64_t non_total = m * (m - 1) + 3 * m + 29 * (2 * m + 2);
        EXPECT_EQ(count_parameters(mod).total, mod_total);
        EXPECT_EQ(count_parameters(non).total, non_total);
        const double ratio = static_cast<double>(mod_total) / static_cast<double>(non_total);
        EXPECT_GT(ratio, 0.8) << mm << " vs " << m;
        EXPECT_LT(ratio, 1.3) << mm << " vs " << m;
    }
}

TEST(Grow, DuplicationCopiesExactly)
{
    const Network net = grown(6, 3, 8);
    EXPECT_TRUE(same_values(net.modules[1].recurrent, net.modules[0].recurrent));
    EXPECT_TRUE(same_values(net.modules[2].recurrent, net.modules[1].recurrent));
    EXPECT_TRUE(same_values(net.modules[2].feedforward, net.modules[1].feedforward));
    EXPECT_FALSE(net.modules[0].has_feedforward());
}

TEST(Grow, WithoutDuplicationTensorsAreFresh)
{
    GrowOptions opts;
    opts.duplicate_recurrent = false;
    opts.duplicate_feedforward = false;
    const Network net = grown(6, 3, 8, opts);
    EXPECT_FALSE(same_values(net.modules[1].recurrent, net.modules[0].recurrent));
    EXPECT_FALSE(same_values(net.modules[2].feedforward, net.modules[1].feedforward));
    EXPECT_TRUE(net.modules[1].recurrent.diagonal().isZero(0.0));
    const Network other = grown(6, 3, 9, opts);
    EXPECT_FALSE(same_values(net.modules[2].recurrent, other.modules[2].recurrent));
}

TEST(Grow, BookkeepingAndFreezeFlags)
{
    const Network net = grown(4, 3, 2);
    ASSERT_EQ(net.modules.size(), 3u);
    ASSERT_EQ(net.heads.size(), 3u);
    for (int m = 0; m < 3; ++m) {
        EXPECT_EQ(net.heads[static_cast<std::size_t>(m)].task_n, m + 2);
        EXPECT_EQ(net.heads[static_cast<std::size_t>(m)].source, m);
    }
    for (std::size_t m = 0; m < 2; ++m) {
        const auto& f = net.modules[m].frozen;
        EXPECT_TRUE(f.recurrent && f.feedforward && f.input && f.bias && f.tau) << "module " << m;
        EXPECT_TRUE(net.heads[m].frozen);
    }
    const auto& last = net.modules[2].frozen;
    EXPECT_FALSE(last.recurrent || last.feedforward || last.input || last.bias || last.tau);
    EXPECT_FALSE(net.heads[2].frozen);
    EXPECT_NO_THROW(validate_network(net));
}

TEST(Grow, OldTauAndHeadsCanStayTrainable)
{
    GrowOptions opts;
    opts.freeze_old_tau = false;
    opts.freeze_old_heads = false;
    const Network net = grown(4, 3, 2, opts);
    EXPECT_FALSE(net.modules[0].frozen.tau);
    EXPECT_TRUE(net.modules[0].frozen.recurrent);
    EXPECT_FALSE(net.heads[0].frozen);
}

TEST(Grow, RejectsNonModular)
{
    EXPECT_THROW(grow(new_network(NetworkKind::nonmodular, 4, 1), {}, 1), std::invalid_argument);
}

TEST(AddHead, AppendsTasksWithoutFreezing)
{
    Network net = new_network(NetworkKind::nonmodular, 7, 3);
    auto before = count_parameters(net).total;
    for (int i = 0; i < 3; ++i) {
        net = add_head(std::move(net), 3);
        const auto after = count_parameters(net).total;
        EXPECT_EQ(after - before, 2 * 7 + 2);
        before = after;
    }
    ASSERT_EQ(net.heads.size(), 4u);
    for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(net.heads[static_cast<std::size_t>(k)].task_n, k + 2);
        EXPECT_FALSE(net.heads[static_cast<std::size_t>(k)].frozen);
    }
    const auto& f = net.modules[0].frozen;
    EXPECT_FALSE(f.recurrent || f.input || f.bias || f.tau);
    EXPECT_EQ(count_parameters(net).trainable, count_parameters(net).total);
    EXPECT_THROW(add_head(new_network(NetworkKind::modular, 4, 1), 1), std::invalid_argument);
}

TEST(Forward, ZeroNetworkEmitsHeadBias)
{
    Network net = new_network(NetworkKind::modular, 3, 1);
    net = grow(std::move(net), {}, 1);
    for (auto& m : net.modules) {
        m.recurrent.setZero();
        m.feedforward.setZero();
        m.input.setZero();
    }
    net.heads[0].bias << 0.3, -0.2;
    net.heads[1].bias << -1.0, 2.0;
    const auto out = forward(net, Bits{1, 0, 1, 1}, true);
    for (const auto& a : out.activity) {
        EXPECT_TRUE(a.isZero(0.0));
    }
    for (std::size_t h = 0; h < 2; ++h) {
        for (int t = 0; t < 4; ++t) {
            EXPECT_EQ(out.logits[h].col(t), net.heads[h].bias);
        }
    }
}

TEST(Forward, SingleNeuronIteratesNeuronUpdate)
{
    Network net = new_network(NetworkKind::nonmodular, 1, 1);
    auto& m = net.modules[0];
    m.input << 0.7;
    m.bias << -0.2;
    m.tau << 2.5;
    net.heads[0].weights << 1.0, -3.0;
    net.heads[0].bias << 0.0, 0.5;
    const Bits seq{1, 0, 0, 1, 1, 0, 1};
    const auto out = forward(net, seq, true);
    double r = 0.0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        r = neuron_update(r, 0.7 * seq[t] - 0.2, 2.5, net.activation.alpha);
        EXPECT_DOUBLE_EQ(out.activity[0](0, static_cast<Eigen::Index>(t)), r);
        EXPECT_DOUBLE_EQ(out.logits[0](1, static_cast<Eigen::Index>(t)), -3.0 * r + 0.5);
    }
}

TEST(Forward, RelayDelaysPreviousModuleByOneStep)
{
    Network net = new_network(NetworkKind::modular, 2, 1);
    net = grow(std::move(net), {}, 1);
    auto& a = net.modules[0];
    auto& b = net.modules[1];
    a.recurrent.setZero();
    a.input << 1.0, 2.0;
    a.bias.setZero();
    a.tau.setOnes();
    b.recurrent.setZero();
    b.feedforward = Matrix::Identity(2, 2);
    b.input.setZero();
    b.bias.setZero();
    b.tau.setOnes();
    const Bits seq{1, 0, 1, 1, 0, 0, 1};
    const auto out = forward(net, seq, true);
    EXPECT_TRUE(out.activity[1].col(0).isZero(0.0));
    for (Eigen::Index t = 1; t < static_cast<Eigen::Index>(seq.size()); ++t) {
        EXPECT_EQ(out.activity[1].col(t), out.activity[0].col(t - 1));
    }
}

TEST(Checkpoint, RoundTripIsExact)
{
    GrowOptions opts;
    opts.freeze_old_heads = false;
    Network net = grown(5, 4, 12, opts);
    net.modules[3].bias << 0.1, -1e-300, 3.0e10, 1.0 / 3.0, -0.0;
    CheckpointMeta meta{4, {{"optimizer.lr", "1"}, {"architecture", "modular"}}};
    const auto path = temp_file("roundtrip.json");
    save_checkpoint(net, path, meta);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_TRUE(back.network == net);
    EXPECT_EQ(back.meta.n_solved, 4);
    EXPECT_EQ(back.meta.config, meta.config);
    EXPECT_EQ(back.network.activation.alpha, net.activation.alpha);
    for (std::size_t m = 0; m < net.modules.size(); ++m) {
        EXPECT_EQ(0, std::memcmp(back.network.modules[m].bias.data(), net.modules[m].bias.data(),
                                 sizeof(double) * static_cast<std::size_t>(net.modules[m].bias.size())));
    }
    const Checkpoint non = checkpoint_from_json(checkpoint_to_json(add_head(new_network(NetworkKind::nonmodular, 6, 2), 2)));
    EXPECT_EQ(non.network.kind, NetworkKind::nonmodular);
    EXPECT_EQ(non.network.heads.size(), 2u);
}

TEST(Checkpoint, DifferentSeedsDiffer)
{
    EXPECT_NE(checkpoint_to_json(new_network(NetworkKind::modular, 5, 1)),
              checkpoint_to_json(new_network(NetworkKind::modular, 5, 2)));
}

TEST(Checkpoint, TamperedFilesRaiseStructuredErrors)
{
    const auto good = checkpoint_to_json(grown(4, 2, 1));

    auto bad_size = good;
    bad_size["modules"][1]["size"] = 5;
    EXPECT_THROW(checkpoint_from_json(bad_size), checkpoint_error);

    auto short_tau = good;
    short_tau["modules"][0]["tau"].erase(0);
    EXPECT_THROW(checkpoint_from_json(short_tau), checkpoint_error);

    auto version = good;
    version["format_version"] = 99;
    EXPECT_THROW(checkpoint_from_json(version), checkpoint_error);

    auto low_tau = good;
    low_tau["modules"][0]["tau"][0] = 0.5;
    EXPECT_THROW(checkpoint_from_json(low_tau), checkpoint_error);

    auto missing = good;
    missing.erase("heads");
    EXPECT_THROW(checkpoint_from_json(missing), checkpoint_error);

    const auto path = temp_file("corrupt.json");
    {
        std::ofstream out(path);
        out << "{\"format\": \"modgrow-checkpoint\", ";
    }
    EXPECT_THROW(load_checkpoint(path), checkpoint_error);
    EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.json")), checkpoint_error);
}
