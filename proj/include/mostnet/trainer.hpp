#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mostnet/adam.hpp"
#include "mostnet/checkpoint.hpp"
#include "mostnet/data.hpp"
#include "mostnet/evaluation.hpp"
#include "mostnet/losses.hpp"
#include "mostnet/memory.hpp"
#include "mostnet/networks.hpp"

namespace mostnet {

enum class ContentTarget { photo, sketch };

struct TrainConfig {
    double lr_g = 4e-4;
    double lr_d = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t batch_size = 4;
    std::size_t steps = 2000;  // 0: use epochs instead
    std::size_t epochs = 0;
    double alpha = 0.999;
    LossWeights weights;
    double tau = 0.1;
    std::size_t memory_size = 512;
    std::uint64_t seed = 1;
    bool mr_loss_enabled = true;
    ContentTarget content_target = ContentTarget::photo;
    NetworkConfig network;

    void validate() const {
        if (!(lr_g > 0) || !(lr_d > 0)) throw std::invalid_argument("learning rates must be positive");
        if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("alpha must lie in [0, 1]");
        if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
        if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
        if (memory_size == 0) throw std::invalid_argument("memory size must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
        weights.validate();
    }

    std::size_t total_steps(std::size_t dataset_size) const {
        if (steps > 0) return steps;
        return epochs * ((dataset_size + batch_size - 1) / batch_size);
    }

    bool operator==(const TrainConfig&) const = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    const auto& n = c.network;
    return {{"lr_g", c.lr_g},
            {"lr_d", c.lr_d},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"batch_size", c.batch_size},
            {"steps", c.steps},
            {"epochs", c.epochs},
            {"alpha", c.alpha},
            {"lambda", {c.weights.adversarial, c.weights.reconstruction, c.weights.style, c.weights.content,
                        c.weights.memory_refinement}},
            {"tau", c.tau},
            {"memory_size", c.memory_size},
            {"seed", c.seed},
            {"mr_loss_enabled", c.mr_loss_enabled},
            {"content_target", c.content_target == ContentTarget::photo ? "photo" : "sketch"},
            {"network",
             {{"feature_channels", n.feature_channels},
              {"encoder_width1", n.encoder_width1},
              {"encoder_width2", n.encoder_width2},
              {"encoder_blocks", n.encoder_blocks},
              {"decoder_blocks", n.decoder_blocks},
              {"si_blocks", n.si_blocks},
              {"style_hidden", n.style_hidden},
              {"disc_width", n.disc_width}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr_g = j.at("lr_g");
    c.lr_d = j.at("lr_d");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.batch_size = j.at("batch_size");
    c.steps = j.at("steps");
    c.epochs = j.at("epochs");
    c.alpha = j.at("alpha");
    const auto& l = j.at("lambda");
    c.weights = {l.at(0), l.at(1), l.at(2), l.at(3), l.at(4)};
    c.tau = j.at("tau");
    c.memory_size = j.at("memory_size");
    c.seed = j.at("seed");
    c.mr_loss_enabled = j.at("mr_loss_enabled");
    c.content_target = j.at("content_target") == "photo" ? ContentTarget::photo : ContentTarget::sketch;
    const auto& n = j.at("network");
    c.network.feature_channels = n.at("feature_channels");
    c.network.encoder_width1 = n.at("encoder_width1");
    c.network.encoder_width2 = n.at("encoder_width2");
    c.network.encoder_blocks = n.at("encoder_blocks");
    c.network.decoder_blocks = n.at("decoder_blocks");
    c.network.si_blocks = n.at("si_blocks");
    c.network.style_hidden = n.at("style_hidden");
    c.network.disc_width = n.at("disc_width");
    c.validate();
    return c;
}

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything a run needs to continue bit-exactly.
template <class T>
struct TrainState {
    TrainConfig config;
    Generator<T> generator;
    Discriminator<T> discriminator;
    MemoryDictionary<T> memory;
    PerceptualExtractor<T> perceptual;
    Adam<T> opt_g;
    Adam<T> opt_d;
    std::uint64_t step = 0;

    static TrainState create(const TrainConfig& config) {
        config.validate();
        TrainState s;
        s.config = config;
        s.generator = Generator<T>::make(config.network, config.seed);
        s.discriminator = Discriminator<T>::make(config.network, config.seed);
        s.memory = init_memory<T>(config.memory_size, config.network.feature_channels, config.seed,
                                  static_cast<T>(config.alpha));
        s.perceptual = PerceptualExtractor<T>::make();
        s.opt_g = Adam<T>(s.generator.parameters(), {config.lr_g, config.beta1, config.beta2});
        s.opt_d = Adam<T>(s.discriminator.parameters(), {config.lr_d, config.beta1, config.beta2});
        return s;
    }
};

struct StepMetrics {
    std::uint64_t step = 0;
    double loss_d = 0;
    double adversarial = 0;  // generator side
    double reconstruction = 0;
    double style = 0;
    double content = 0;
    double mr_soft = 0;
    double mr_hard = 0;
    double total = 0;

    bool operator==(const StepMetrics&) const = default;

    static std::string csv_header() { return "step,loss_d,adversarial,reconstruction,style,content,mr_soft,mr_hard,total"; }

    std::string csv_row() const {
        char buf[320];
        std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                      static_cast<unsigned long long>(step), loss_d, adversarial, reconstruction, style, content,
                      mr_soft, mr_hard, total);
        return buf;
    }
};

template <class T>
struct Batch {
    std::vector<Tensor<T>> photos;    // 3 x H x W in [-1, 1]
    std::vector<Tensor<T>> sketches;  // 1 x H x W in [-1, 1]
};

template <class T>
Batch<T> make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
    Batch<T> b;
    for (auto i : indices) {
        b.photos.push_back(image_to_tensor<T>(data.pairs.at(i).photo));
        b.sketches.push_back(image_to_tensor<T>(data.pairs.at(i).sketch));
    }
    return b;
}

namespace detail {

template <class T>
void set_requires_grad(const ParamList<T>& params, bool on) {
    for (auto [name, p] : params) p.set_requires_grad(on);
}

inline void require_finite(double v, const char* component, std::uint64_t step) {
    if (!std::isfinite(v)) {
        throw TrainingError(std::string("non-finite ") + component + " loss at step " + std::to_string(step));
    }
}

}  // namespace detail

// One alternation: generator forward on the training path (memory update
// inside), a discriminator step on detached fakes, then a generator step on
// the weighted objective with scores from the updated discriminator.
template <class T>
StepMetrics train_step(TrainState<T>& state, const Batch<T>& batch) {
    const auto& cfg = state.config;
    const std::size_t n = batch.photos.size();
    if (n == 0 || batch.sketches.size() != n) throw TrainingError("train_step: empty or ragged batch");
    StepMetrics metrics;
    metrics.step = state.step;

    const auto fwd = state.generator.forward_train(batch.photos, batch.sketches, state.memory);

    // Discriminator.
    state.opt_d.zero_grad();
    {
        std::vector<Tensor<T>> losses;
        for (std::size_t b = 0; b < n; ++b) {
            losses.push_back(discriminator_loss(state.discriminator(batch.photos[b], batch.sketches[b]),
                                                state.discriminator(batch.photos[b], fwd.fake[b].detach())));
        }
        const auto loss_d = mean_of(losses);
        metrics.loss_d = loss_d.item();
        detail::require_finite(metrics.loss_d, "discriminator", state.step);
        backward(loss_d);
        state.opt_d.step();
    }

    // Generator.
    state.opt_g.zero_grad();
    const auto d_params = state.discriminator.parameters();
    detail::set_requires_grad(d_params, false);
    std::vector<Tensor<T>> adv, rec, sty, con, mr_soft;
    double mr_hard = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        const auto& fake = fwd.fake[b];
        adv.push_back(generator_adversarial_loss(state.discriminator(batch.photos[b], fake)));
        rec.push_back(reconstruction_loss(fake, batch.sketches[b]));
        sty.push_back(style_loss(state.perceptual, fake, batch.sketches[b]));
        const auto& reference = cfg.content_target == ContentTarget::photo ? batch.photos[b] : batch.sketches[b];
        con.push_back(content_loss(state.perceptual, reference, fake));
        if (cfg.mr_loss_enabled) {
            mr_soft.push_back(mr_loss(fwd.photo_slots[b], fwd.sketch_slots[b], state.memory, AssignmentMode::soft,
                                      static_cast<T>(cfg.tau)));
        } else {
            NoGradGuard no_grad;
            mr_soft.push_back(mr_loss(fwd.photo_slots[b], fwd.sketch_slots[b], state.memory, AssignmentMode::soft,
                                      static_cast<T>(cfg.tau)));
        }
        mr_hard += static_cast<double>(
            mr_loss(fwd.photo_slots[b], fwd.sketch_slots[b], state.memory, AssignmentMode::hard).item());
    }
    LossComponents<T> parts{mean_of(adv), mean_of(rec), mean_of(sty), mean_of(con), mean_of(mr_soft)};
    LossWeights weights = cfg.weights;
    if (!cfg.mr_loss_enabled) weights.memory_refinement = 0.0;
    const auto total = total_loss(parts, weights);

    metrics.adversarial = parts.adversarial.item();
    metrics.reconstruction = parts.reconstruction.item();
    metrics.style = parts.style.item();
    metrics.content = parts.content.item();
    metrics.mr_soft = parts.memory_refinement.item();
    metrics.mr_hard = mr_hard / static_cast<double>(n);
    metrics.total = total.item();
    detail::require_finite(metrics.adversarial, "adversarial", state.step);
    detail::require_finite(metrics.reconstruction, "reconstruction", state.step);
    detail::require_finite(metrics.style, "style", state.step);
    detail::require_finite(metrics.content, "content", state.step);
    detail::require_finite(metrics.mr_soft, "memory refinement", state.step);

    backward(total);
    detail::set_requires_grad(d_params, true);
    state.opt_g.step();
    ++state.step;
    return metrics;
}

// Indices of the pairs used at `step`: each epoch visits a seeded
// permutation of the dataset in consecutive batches, the last one possibly
// short.
inline std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t step) {
    const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
    const std::uint64_t epoch = step / per_epoch;
    const std::size_t within = static_cast<std::size_t>(step % per_epoch);
    std::vector<std::size_t> perm(dataset_size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed, 0x65706f6368000000ULL + epoch);
    for (std::size_t i = dataset_size; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(perm[i - 1], perm[j]);
    }
    const std::size_t begin = within * batch_size;
    const std::size_t end = std::min(dataset_size, begin + batch_size);
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

struct TrainHooks {
    std::function<void(const StepMetrics&)> on_step;
    // Called with the number of completed steps.
    std::function<void(std::uint64_t)> on_periodic;
    std::size_t periodic_every = 0;
    std::function<bool()> should_stop;
};

// Runs from state.step up to the configured number of steps.
template <class T>
std::vector<StepMetrics> train(TrainState<T>& state, const Dataset& data, const TrainHooks& hooks = {}) {
    if (data.pairs.empty()) throw TrainingError("train: empty dataset");
    const auto total = state.config.total_steps(data.size());
    std::vector<StepMetrics> log;
    while (state.step < total) {
        if (hooks.should_stop && hooks.should_stop()) break;
        const auto idx = batch_indices(data.size(), state.config.batch_size, state.config.seed, state.step);
        log.push_back(train_step(state, make_batch<T>(data, idx)));
        if (hooks.on_step) hooks.on_step(log.back());
        if (hooks.on_periodic && hooks.periodic_every > 0 && state.step % hooks.periodic_every == 0) hooks.on_periodic(state.step);
    }
    return log;
}

// --- checkpoints -----------------------------------------------------------

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
    CheckpointWriter w;
    w.add_text("config", to_json(state.config).dump());
    w.add_u64("step", state.step);
    for (const auto& [name, p] : state.generator.parameters()) w.add_tensor(name, p);
    for (const auto& [name, p] : state.discriminator.parameters()) w.add_tensor(name, p);
    const Shape mem_shape{state.memory.count(), state.memory.dim()};
    w.add_array<T>("memory.keys", mem_shape, state.memory.keys());
    w.add_array<T>("memory.values", mem_shape, state.memory.values());
    const double alpha = static_cast<double>(state.memory.alpha());
    w.add_array<double>("memory.alpha", Shape{}, std::span<const double>(&alpha, 1));
    auto add_opt = [&](const std::string& prefix, const Adam<T>& opt) {
        w.add_u64(prefix + ".t", opt.steps());
        for (std::size_t k = 0; k < opt.params().size(); ++k) {
            const auto& [name, p] = opt.params()[k];
            w.add_array<T>(prefix + ".m." + name, p.shape(), opt.first_moments()[k]);
            w.add_array<T>(prefix + ".v." + name, p.shape(), opt.second_moments()[k]);
        }
    };
    add_opt("adam_g", state.opt_g);
    add_opt("adam_d", state.opt_d);
    w.save(path);
}

// Loads into an existing state whose shapes must match the file. Every
// record is read and validated before anything is written, so a failure
// leaves `state` untouched.
template <class T>
void load_checkpoint_into(TrainState<T>& state, const CheckpointFile& file) {
    std::vector<std::pair<Tensor<T>, std::vector<T>>> params;
    for (const auto& plist : {state.generator.parameters(), state.discriminator.parameters()})
        for (const auto& [name, p] : plist) params.emplace_back(p, file.array<T>(name, p.shape()));
    const Shape mem_shape{state.memory.count(), state.memory.dim()};
    if (file.record("memory.keys").shape != mem_shape) {
        throw CheckpointError("checkpoint memory is " + shape_str(file.record("memory.keys").shape) +
                              " but the configuration expects " + shape_str(mem_shape));
    }
    auto keys = file.array<T>("memory.keys", mem_shape);
    auto values = file.array<T>("memory.values", mem_shape);
    const auto alpha = file.array<double>("memory.alpha", Shape{}).front();
    struct OptData {
        std::uint64_t t;
        std::vector<std::vector<T>> m, v;
    };
    auto read_opt = [&](const std::string& prefix, const Adam<T>& opt) {
        OptData d{file.u64(prefix + ".t"), {}, {}};
        for (const auto& [name, p] : opt.params()) {
            d.m.push_back(file.array<T>(prefix + ".m." + name, p.shape()));
            d.v.push_back(file.array<T>(prefix + ".v." + name, p.shape()));
        }
        return d;
    };
    auto og = read_opt("adam_g", state.opt_g);
    auto od = read_opt("adam_d", state.opt_d);
    const auto step = file.u64("step");
    MemoryDictionary<T> memory(mem_shape[0], mem_shape[1], static_cast<T>(alpha), std::move(keys), std::move(values));

    for (auto& [p, v] : params) std::copy(v.begin(), v.end(), p.mutable_data().begin());
    state.memory = std::move(memory);
    state.opt_g.set_steps(og.t);
    state.opt_g.first_moments() = std::move(og.m);
    state.opt_g.second_moments() = std::move(og.v);
    state.opt_d.set_steps(od.t);
    state.opt_d.first_moments() = std::move(od.m);
    state.opt_d.second_moments() = std::move(od.v);
    state.step = step;
}

template <class T>
void load_checkpoint_into(TrainState<T>& state, const std::filesystem::path& path) {
    load_checkpoint_into(state, CheckpointFile::load(path));
}

// Rebuilds the full state from the configuration stored in the file.
template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
    const auto file = CheckpointFile::load(path);
    auto state = TrainState<T>::create(train_config_from_json(nlohmann::json::parse(file.text("config"))));
    load_checkpoint_into(state, file);
    return state;
}

// Replaces the perceptual extractor weights with records named
// perceptual.level{1..4}.{weight,bias} from a checkpoint-format file.
template <class T>
void load_perceptual_weights(PerceptualExtractor<T>& extractor, const std::filesystem::path& path) {
    const auto file = CheckpointFile::load(path);
    ParamList<T> params;
    extractor.collect(params);
    std::vector<std::vector<T>> loaded;
    for (const auto& [name, p] : params) loaded.push_back(file.array<T>(name, p.shape()));
    for (std::size_t k = 0; k < params.size(); ++k)
        std::copy(loaded[k].begin(), loaded[k].end(), params[k].second.mutable_data().begin());
}

// --- inference ---------------------------------------------------------------

template <class T>
Image infer_sketch(const TrainState<T>& state, const Image& photo) {
    NoGradGuard no_grad;
    return tensor_to_image(state.generator.forward_infer(image_to_tensor<T>(to_rgb(photo)), state.memory));
}

// One sketch PNG per photo PNG, same file name.
template <class T>
std::vector<std::string> infer_dir(const TrainState<T>& state, const std::filesystem::path& photo_dir,
                                   const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    for (const auto& [stem, path] : detail::png_files(photo_dir)) {
        write_png(out_dir / (stem + ".png"), infer_sketch(state, read_png(path)));
        written.push_back(stem);
    }
    return written;
}

// Photo | real sketch | synthesized sketch, one row per pair.
template <class T>
Image sample_grid(const TrainState<T>& state, const Dataset& data, std::size_t rows) {
    rows = std::min(rows, data.size());
    const auto h = data.pairs.front().photo.height, w = data.pairs.front().photo.width;
    Image grid(3, rows * h, 3 * w);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& pair = data.pairs[r];
        const auto fake = infer_sketch(state, pair.photo);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    grid.at(c, r * h + y, x) = pair.photo.at(c, y, x);
                    grid.at(c, r * h + y, w + x) = pair.sketch.at(0, y, x);
                    grid.at(c, r * h + y, 2 * w + x) = fake.at(0, y, x);
                }
    }
    return grid;
}

// Training-path reconstruction of every pair (memory copied, not mutated)
// and photo-only inference, both scored against the real sketches.
struct FitReport {
    MetricReport train_path;
    MetricReport inference;
};

template <class T>
FitReport evaluate_fit(const TrainState<T>& state, const Dataset& data) {
    NoGradGuard no_grad;
    FitReport report;
    for (const auto& pair : data.pairs) {
        auto memory = state.memory;
        const auto out = state.generator.forward_train(image_to_tensor<T>(pair.photo), image_to_tensor<T>(pair.sketch), memory);
        const auto fake = tensor_to_image(out.fake.front());
        report.train_path.pairs.push_back({pair.name, ssim(fake, pair.sketch), mean_l1(fake, pair.sketch)});
        const auto inferred = infer_sketch(state, pair.photo);
        report.inference.pairs.push_back({pair.name, ssim(inferred, pair.sketch), mean_l1(inferred, pair.sketch)});
    }
    report.train_path.finalize();
    report.inference.finalize();
    return report;
}

}  // namespace mostnet
