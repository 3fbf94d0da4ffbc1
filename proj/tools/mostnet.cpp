#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mostnet/evaluation.hpp"
#include "mostnet/gradcheck_suite.hpp"
#include "mostnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace mostnet;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted = true; }

struct TrainArgs {
    fs::path data;
    fs::path out;
    std::optional<fs::path> resume;
    std::string content_target = "photo";
    bool no_mr_loss = false;
    std::size_t checkpoint_every = 500;
    std::size_t sample_every = 500;
    std::size_t log_every = 50;
    TrainConfig config;
};

void print_fit(const char* label, const MetricReport& r) {
    std::printf("%-22s mean SSIM %.4f  mean L1 %.4f\n", label, r.mean_ssim, r.mean_l1);
}

int run_gen_data(std::size_t n, std::size_t size, std::uint64_t seed, const fs::path& out) {
    const auto data = gen_synthetic_pairs(n, size, seed);
    save_dataset(data, out);
    std::printf("wrote %zu pairs of %zux%zu to %s\n", data.size(), size, size, out.string().c_str());
    return 0;
}

int run_train(TrainArgs& a) {
    auto& cfg = a.config;
    cfg.mr_loss_enabled = !a.no_mr_loss;
    if (a.content_target == "photo") cfg.content_target = ContentTarget::photo;
    else if (a.content_target == "sketch") cfg.content_target = ContentTarget::sketch;
    else throw std::invalid_argument("--content-target must be photo or sketch");

    const auto data = load_dataset(a.data);
    for (const auto& w : data.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (data.pairs.empty()) throw std::runtime_error("no training pairs found under " + a.data.string());

    auto state = TrainState<float>::create(cfg);
    if (a.resume) {
        load_checkpoint_into(state, *a.resume);
        std::printf("resumed from %s at step %llu\n", a.resume->string().c_str(),
                    static_cast<unsigned long long>(state.step));
    }
    fs::create_directories(a.out / "samples");
    {
        std::ofstream cfg_out(a.out / "config.json");
        cfg_out << to_json(cfg).dump(2) << '\n';
    }
    const auto metrics_path = a.out / "metrics.csv";
    std::ofstream metrics(metrics_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
    if (state.step == 0) metrics << StepMetrics::csv_header() << '\n';

    const auto checkpoint_path = a.out / "checkpoint.mostnet";
    const auto start = std::chrono::steady_clock::now();
    std::signal(SIGINT, on_sigint);
    TrainHooks hooks;
    hooks.should_stop = [] { return g_interrupted.load(); };
    hooks.on_step = [&](const StepMetrics& m) {
        metrics << m.csv_row() << '\n';
        if (a.log_every > 0 && (m.step + 1) % a.log_every == 0) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::printf("step %6llu  total %9.4f  D %.4f  adv %.4f  rec %.4f  sty %.4f  con %.4f  mr %.4f/%.4f  %.0fs\n",
                        static_cast<unsigned long long>(m.step + 1), m.total, m.loss_d, m.adversarial,
                        m.reconstruction, m.style, m.content, m.mr_soft, m.mr_hard, secs);
            std::fflush(stdout);
        }
    };
    hooks.periodic_every = 1;
    hooks.on_periodic = [&](std::uint64_t step) {
        if (a.checkpoint_every > 0 && step % a.checkpoint_every == 0) {
            metrics.flush();
            save_checkpoint(state, checkpoint_path);
        }
        if (a.sample_every > 0 && step % a.sample_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06llu.png", static_cast<unsigned long long>(step));
            write_png(a.out / "samples" / name, sample_grid(state, data, 4));
        }
    };
    train(state, data, hooks);
    metrics.flush();
    save_checkpoint(state, checkpoint_path);
    std::signal(SIGINT, SIG_DFL);
    if (g_interrupted) {
        std::fprintf(stderr, "interrupted at step %llu; checkpoint written to %s\n",
                     static_cast<unsigned long long>(state.step), checkpoint_path.string().c_str());
        return 130;
    }
    const auto fit = evaluate_fit(state, data);
    print_fit("training path:", fit.train_path);
    print_fit("photo-only inference:", fit.inference);
    std::printf("checkpoint: %s\n", checkpoint_path.string().c_str());
    return 0;
}

int run_infer(const fs::path& checkpoint, const fs::path& photos, const fs::path& out) {
    const auto state = load_checkpoint<float>(checkpoint);
    const auto written = infer_dir(state, photos, out);
    if (written.empty()) throw std::runtime_error("no PNG photos found in " + photos.string());
    std::printf("wrote %zu sketches to %s\n", written.size(), out.string().c_str());
    return 0;
}

int run_eval(const fs::path& generated, const fs::path& reference, const std::optional<fs::path>& csv) {
    const auto report = evaluate_dirs(generated, reference);
    for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write_report_table(std::cout, report);
    if (csv) write_report_csv(*csv, report);
    return 0;
}

int run_gradcheck(std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const auto cases = run_gradcheck_suite(seed);
    bool all = true;
    for (const auto& c : cases) {
        std::printf("%s  %-40s max rel err %.3e\n", c.passed() ? "PASS" : "FAIL", c.name.c_str(), c.report.max_rel_error());
        if (!c.passed()) std::fputs(c.report.summary().c_str(), stdout);
        all = all && c.passed();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s (%zu operations, %.1fs)\n", all ? "all gradient checks passed" : "gradient checks FAILED", cases.size(), secs);
    if (!all) std::fprintf(stderr, "error: gradient check failed\n");
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-mediated photo-to-sketch synthesis"};
    app.require_subcommand(1);

    std::size_t n = 0, size = 0;
    std::uint64_t seed = 0;
    fs::path out;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic paired dataset");
    gen->add_option("--n", n, "Number of pairs")->required()->check(CLI::PositiveNumber);
    gen->add_option("--size", size, "Image side in pixels")->required();
    gen->add_option("--seed", seed, "Generator seed")->required();
    gen->add_option("--out", out, "Output directory")->required();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train on <data>/photos and <data>/sketches");
    tr->add_option("--data", ta.data, "Dataset directory")->required();
    tr->add_option("--out", ta.out, "Run directory")->required();
    tr->add_option("--steps", ta.config.steps, "Training steps (0 uses --epochs)")->capture_default_str();
    tr->add_option("--epochs", ta.config.epochs, "Epochs when --steps is 0")->capture_default_str();
    tr->add_option("--batch", ta.config.batch_size, "Batch size")->capture_default_str();
    tr->add_option("--seed", ta.config.seed, "Seed for initialization and batching")->capture_default_str();
    tr->add_option("--k", ta.config.memory_size, "Memory entries")->capture_default_str();
    tr->add_option("--alpha", ta.config.alpha, "Memory decay rate")->capture_default_str();
    tr->add_option("--tau", ta.config.tau, "Soft assignment temperature of the refinement loss")->capture_default_str();
    tr->add_flag("--no-mr-loss", ta.no_mr_loss, "Disable the memory refinement loss");
    tr->add_option("--content-target", ta.content_target, "Content loss reference: photo or sketch")
        ->check(CLI::IsMember({"photo", "sketch"}))
        ->capture_default_str();
    tr->add_option("--lr-g", ta.config.lr_g, "Generator learning rate")->capture_default_str();
    tr->add_option("--lr-d", ta.config.lr_d, "Discriminator learning rate")->capture_default_str();
    tr->add_option("--lambda1", ta.config.weights.adversarial, "Adversarial weight")->capture_default_str();
    tr->add_option("--lambda2", ta.config.weights.reconstruction, "Reconstruction weight")->capture_default_str();
    tr->add_option("--lambda3", ta.config.weights.style, "Style weight")->capture_default_str();
    tr->add_option("--lambda4", ta.config.weights.content, "Content weight")->capture_default_str();
    tr->add_option("--lambda5", ta.config.weights.memory_refinement, "Memory refinement weight")->capture_default_str();
    tr->add_option("--checkpoint-every", ta.checkpoint_every, "Steps between checkpoints (0 disables)")->capture_default_str();
    tr->add_option("--sample-every", ta.sample_every, "Steps between sample grids (0 disables)")->capture_default_str();
    tr->add_option("--log-every", ta.log_every, "Steps between progress lines (0 disables)")->capture_default_str();
    tr->add_option("--resume", ta.resume, "Continue from a checkpoint");

    fs::path checkpoint, photos;
    auto* inf = app.add_subcommand("infer", "Synthesize sketches from photos");
    inf->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    inf->add_option("--photos", photos, "Directory of photo PNGs")->required();
    inf->add_option("--out", out, "Output directory")->required();

    fs::path generated, reference;
    std::optional<fs::path> csv;
    auto* ev = app.add_subcommand("eval", "Score generated sketches against references");
    ev->add_option("--generated", generated, "Directory of generated PNGs")->required();
    ev->add_option("--reference", reference, "Directory of reference PNGs")->required();
    ev->add_option("--csv", csv, "Also write per-image metrics as CSV");

    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    gc->add_option("--seed", gc_seed, "Seed for inputs and parameters")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
    }

    try {
        if (*gen) return run_gen_data(n, size, seed, out);
        if (*tr) return run_train(ta);
        if (*inf) return run_infer(checkpoint, photos, out);
        if (*ev) return run_eval(generated, reference, csv);
        if (*gc) return run_gradcheck(gc_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
