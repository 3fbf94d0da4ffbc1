#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "mostnet/trainer.hpp"

using namespace mostnet;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.batch_size = 2;
    c.steps = 4;
    c.memory_size = 16;
    c.alpha = 0.9;
    c.seed = 3;
    c.network.feature_channels = 8;
    c.network.encoder_width1 = 4;
    c.network.encoder_width2 = 6;
    c.network.encoder_blocks = 1;
    c.network.decoder_blocks = 1;
    c.network.si_blocks = 1;
    c.network.style_hidden = 6;
    c.network.disc_width = 4;
    return c;
}

const Dataset& tiny_data() {
    static const Dataset d = gen_synthetic_pairs(4, 32, 21);
    return d;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mostnet_trainer_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <class T>
std::vector<std::vector<T>> snapshot(const TrainState<T>& s) {
    std::vector<std::vector<T>> out;
    for (const auto& plist : {s.generator.parameters(), s.discriminator.parameters()})
        for (const auto& [name, p] : plist) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

template <class T>
std::vector<std::vector<T>> snapshot(const ParamList<T>& params) {
    std::vector<std::vector<T>> out;
    for (const auto& [name, p] : params) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

template <class T>
bool same_state(const TrainState<T>& a, const TrainState<T>& b) {
    return snapshot(a) == snapshot(b) && a.memory == b.memory && a.step == b.step &&
           a.opt_g.first_moments() == b.opt_g.first_moments() && a.opt_g.second_moments() == b.opt_g.second_moments() &&
           a.opt_d.first_moments() == b.opt_d.first_moments() && a.opt_d.second_moments() == b.opt_d.second_moments() &&
           a.opt_g.steps() == b.opt_g.steps() && a.opt_d.steps() == b.opt_d.steps();
}

}  // namespace

TEST(Adam, MatchesScalarReference) {
    // Loss sum_i c_i * w_i^2 with w_i, c_i fixed; reference Adam written out per scalar.
    const std::vector<double> w0{0.5, -1.5, 2.0}, c{1.0, 3.0, 0.1};
    auto w = Tensor<double>(Shape{3}, w0, true);
    Adam<double> opt({{"w", w}}, {0.01, 0.9, 0.999, 1e-8});
    std::vector<double> ref = w0, m(3, 0), v(3, 0);
    for (int t = 1; t <= 10; ++t) {
        opt.zero_grad();
        backward(sum(mul(Tensor<double>(Shape{3}, c), square(w))));
        opt.step();
        for (int i = 0; i < 3; ++i) {
            const double g = 2 * c[i] * ref[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        for (int i = 0; i < 3; ++i) ASSERT_NEAR(w[i], ref[i], 1e-7) << "step " << t;
    }
    EXPECT_EQ(opt.steps(), 10u);
}

TEST(TrainConfig, JsonRoundTrip) {
    auto c = tiny_config();
    c.tau = 0.25;
    c.mr_loss_enabled = false;
    c.content_target = ContentTarget::sketch;
    c.weights.style = 7.5;
    c.lr_d = 3e-4;
    EXPECT_EQ(train_config_from_json(to_json(c)), c);
    EXPECT_EQ(train_config_from_json(nlohmann::json::parse(to_json(TrainConfig{}).dump())), TrainConfig{});
}

TEST(TrainConfig, Validation) {
    auto c = tiny_config();
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.tau = 0;
    EXPECT_THROW(TrainState<float>::create(c), std::invalid_argument);
    c = tiny_config();
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainStep, Deterministic) {
    auto a = TrainState<float>::create(tiny_config());
    auto b = TrainState<float>::create(tiny_config());
    const auto batch = make_batch<float>(tiny_data(), {0, 1});
    for (int i = 0; i < 3; ++i) EXPECT_EQ(train_step(a, batch), train_step(b, batch));
    EXPECT_TRUE(same_state(a, b));
}

TEST(TrainStep, TotalIsWeightedSumOfLoggedComponents) {
    for (bool mr : {true, false}) {
        auto cfg = tiny_config();
        cfg.mr_loss_enabled = mr;
        auto s = TrainState<float>::create(cfg);
        const auto m = train_step(s, make_batch<float>(tiny_data(), {2, 3}));
        auto w = cfg.weights;
        if (!mr) w.memory_refinement = 0;
        const std::array<float, 5> parts{static_cast<float>(m.adversarial), static_cast<float>(m.reconstruction),
                                         static_cast<float>(m.style), static_cast<float>(m.content),
                                         static_cast<float>(m.mr_soft)};
        EXPECT_EQ(m.total, total_loss_value(parts, w));
        EXPECT_GT(m.mr_soft, 0.0);
        EXPECT_GE(m.mr_hard, 0.0);
        EXPECT_LE(m.mr_hard, 1.0);
    }
}

TEST(TrainStep, MemoryMovesWhenAlphaBelowOne) {
    auto s = TrainState<float>::create(tiny_config());
    const auto before = s.memory;
    train_step(s, make_batch<float>(tiny_data(), {0, 1}));
    EXPECT_FALSE(s.memory == before);

    auto cfg = tiny_config();
    cfg.alpha = 1.0;
    auto frozen = TrainState<float>::create(cfg);
    const auto kept = frozen.memory;
    train_step(frozen, make_batch<float>(tiny_data(), {0, 1}));
    EXPECT_TRUE(frozen.memory == kept);
}

TEST(TrainStep, MemoryRefinementOnlyPathway) {
    // With every other weight at zero the generator moves only through the
    // refinement term, and not at all once it is disabled.
    auto cfg = tiny_config();
    cfg.weights = {0, 0, 0, 0, 10};
    for (bool mr : {true, false}) {
        cfg.mr_loss_enabled = mr;
        auto s = TrainState<float>::create(cfg);
        const auto before = snapshot(s.generator.parameters());
        train_step(s, make_batch<float>(tiny_data(), {0, 1}));
        const auto after = snapshot(s.generator.parameters());
        EXPECT_EQ(before != after, mr);
    }
}

TEST(TrainStep, EachWeightedTermReachesTheDecoder) {
    auto cfg = tiny_config();
    for (std::size_t k = 0; k < 4; ++k) {
        std::array<double, 5> w{0, 0, 0, 0, 0};
        w[k] = 1.0;
        cfg.weights = {w[0], w[1], w[2], w[3], w[4]};
        auto s = TrainState<float>::create(cfg);
        ParamList<float> decoder;
        s.generator.decoder.collect(decoder, "dec");
        const auto before = snapshot(decoder);
        train_step(s, make_batch<float>(tiny_data(), {0, 1}));
        EXPECT_NE(before, snapshot(decoder)) << "weight " << k;
    }
}

TEST(Train, EpochCountDeterminesSteps) {
    auto cfg = tiny_config();
    cfg.steps = 0;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    const auto eight = gen_synthetic_pairs(8, 32, 4);
    auto s = TrainState<float>::create(cfg);
    const auto log = train(s, eight);
    ASSERT_EQ(log.size(), 2u);
    EXPECT_EQ(log[0].step, 0u);
    EXPECT_EQ(log[1].step, 1u);
    EXPECT_EQ(s.step, 2u);
}

TEST(Train, BatchIndicesCoverEachEpoch) {
    for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
        std::vector<std::size_t> seen;
        for (std::uint64_t k = 0; k < 3; ++k) {
            const auto idx = batch_indices(7, 3, 5, epoch * 3 + k);
            EXPECT_EQ(idx.size(), k < 2 ? 3u : 1u);
            seen.insert(seen.end(), idx.begin(), idx.end());
        }
        std::sort(seen.begin(), seen.end());
        EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
    }
    EXPECT_EQ(batch_indices(7, 3, 5, 4), batch_indices(7, 3, 5, 4));
}

TEST(Train, StopHookHaltsEarly) {
    auto s = TrainState<float>::create(tiny_config());
    int calls = 0;
    TrainHooks hooks;
    hooks.should_stop = [&] { return calls >= 2; };
    hooks.on_step = [&](const StepMetrics&) { ++calls; };
    EXPECT_EQ(train(s, tiny_data(), hooks).size(), 2u);
    EXPECT_THROW(train(s, Dataset{}), TrainingError);
}

TEST(Checkpoint, SaveLoadIsBitwise) {
    TempDir dir("bitwise");
    auto s = TrainState<float>::create(tiny_config());
    s.config.steps = 2;
    train(s, tiny_data());
    save_checkpoint(s, dir.path / "c.mostnet");
    const auto loaded = load_checkpoint<float>(dir.path / "c.mostnet");
    EXPECT_EQ(loaded.config, s.config);
    EXPECT_TRUE(same_state(loaded, s));
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
    TempDir dir("resume");
    auto straight = TrainState<float>::create(tiny_config());
    const auto full_log = train(straight, tiny_data());

    auto first = TrainState<float>::create(tiny_config());
    first.config.steps = 2;
    auto log = train(first, tiny_data());
    save_checkpoint(first, dir.path / "c.mostnet");

    auto resumed = TrainState<float>::create(tiny_config());
    load_checkpoint_into(resumed, dir.path / "c.mostnet");
    const auto rest = train(resumed, tiny_data());
    log.insert(log.end(), rest.begin(), rest.end());
    EXPECT_EQ(log, full_log);
    EXPECT_TRUE(same_state(resumed, straight));
}

TEST(Checkpoint, TruncatedFileLeavesStateUntouched) {
    TempDir dir("trunc");
    auto s = TrainState<float>::create(tiny_config());
    save_checkpoint(s, dir.path / "c.mostnet");
    auto bytes = read_file_bytes(dir.path / "c.mostnet");
    bytes.resize(bytes.size() / 2);
    write_file_bytes(dir.path / "t.mostnet", bytes);

    auto target = TrainState<float>::create(tiny_config());
    target.config.seed = 99;
    train_step(target, make_batch<float>(tiny_data(), {0, 1}));
    const auto before = snapshot(target);
    const auto memory = target.memory;
    EXPECT_THROW(load_checkpoint_into(target, dir.path / "t.mostnet"), CheckpointError);
    EXPECT_EQ(snapshot(target), before);
    EXPECT_TRUE(target.memory == memory);
    EXPECT_EQ(target.step, 1u);
    EXPECT_THROW(load_checkpoint<float>(dir.path / "missing.mostnet"), std::runtime_error);
}

TEST(Checkpoint, MemorySizeMismatchRejected) {
    TempDir dir("ksize");
    auto cfg = tiny_config();
    cfg.memory_size = 512;
    save_checkpoint(TrainState<float>::create(cfg), dir.path / "c.mostnet");
    cfg.memory_size = 256;
    auto other = TrainState<float>::create(cfg);
    const auto before = snapshot(other);
    try {
        load_checkpoint_into(other, dir.path / "c.mostnet");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("512"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("256"), std::string::npos) << e.what();
    }
    EXPECT_EQ(snapshot(other), before);
}

TEST(Checkpoint, VersionMismatchNamed) {
    TempDir dir("version");
    save_checkpoint(TrainState<float>::create(tiny_config()), dir.path / "c.mostnet");
    auto bytes = read_file_bytes(dir.path / "c.mostnet");
    bytes[8] = 7;
    write_file_bytes(dir.path / "v.mostnet", bytes);
    try {
        load_checkpoint<float>(dir.path / "v.mostnet");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version 7"), std::string::npos) << e.what();
    }
    bytes[0] = 'X';
    write_file_bytes(dir.path / "m.mostnet", bytes);
    EXPECT_THROW(load_checkpoint<float>(dir.path / "m.mostnet"), CheckpointError);
}

TEST(Infer, OneSketchPerPhotoDeterministic) {
    TempDir dir("infer");
    save_dataset(tiny_data(), dir.path / "data");
    const auto s = TrainState<float>::create(tiny_config());
    const auto names = infer_dir(s, dir.path / "data" / "photos", dir.path / "out1");
    infer_dir(s, dir.path / "data" / "photos", dir.path / "out2");
    ASSERT_EQ(names.size(), tiny_data().size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        EXPECT_EQ(names[i], tiny_data().pairs[i].name);
        const auto a = read_png(dir.path / "out1" / (names[i] + ".png"));
        const auto b = read_png(dir.path / "out2" / (names[i] + ".png"));
        EXPECT_EQ(a, b);
        EXPECT_EQ(a.channels, 1u);
        EXPECT_EQ(a.height, 32u);
    }
}

TEST(Infer, FitReportLeavesMemoryAlone) {
    const auto s = TrainState<float>::create(tiny_config());
    const auto memory = s.memory;
    const auto fit = evaluate_fit(s, tiny_data());
    EXPECT_EQ(fit.train_path.count(), tiny_data().size());
    EXPECT_EQ(fit.inference.count(), tiny_data().size());
    EXPECT_TRUE(s.memory == memory);
    const auto grid = sample_grid(s, tiny_data(), 2);
    EXPECT_EQ(grid.height, 64u);
    EXPECT_EQ(grid.width, 96u);
}
