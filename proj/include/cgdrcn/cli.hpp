// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgdrcn/ablation.hpp"
#include "cgdrcn/annotations.hpp"
#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/evaluation.hpp"
#include "cgdrcn/parallel.hpp"
#include "cgdrcn/synthcrowd.hpp"
#include "cgdrcn/training.hpp"
#include "cgdrcn/verify.hpp"

namespace cgdrcn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace cli {

struct TrainFlags {
    std::string dataset, images, preset = "tiny", out, log;
    std::optional<double> lambda_c;
    std::size_t steps = 0, crop_size = 224, crops_per_image = 4, batch_size = 4, checkpoint_every = 100;
    std::uint64_t seed = 0;
    double lr = 1e-5, beta1 = 0.9, val_fraction = 0.10, sigma = 4.0;
    bool no_residual = false, no_uceb = false, squared_norm = false, literal_upsample = false;
};

inline void add_train_flags(CLI::App& sub, TrainFlags& f, bool with_model_flags) {
    sub.add_option("--dataset", f.dataset, "Dataset file")->required();
    sub.add_option("--images", f.images, "Directory holding <id>.ppm")->required();
    sub.add_option("--steps", f.steps, "Optimizer steps");
    sub.add_option("--seed", f.seed, "Seed for initialization, split and sampling");
    sub.add_option("--lr", f.lr, "Adam learning rate");
    sub.add_option("--beta1", f.beta1, "Adam first-moment decay");
    sub.add_option("--batch-size", f.batch_size, "Patches per step");
    sub.add_option("--crop-size", f.crop_size, "Square patch extent, a multiple of 32");
    sub.add_option("--crops-per-image", f.crops_per_image, "Patches drawn per image per epoch");
    sub.add_option("--checkpoint-every", f.checkpoint_every, "Validation cadence in steps");
    sub.add_option("--val-fraction", f.val_fraction, "Fraction of training images held out");
    sub.add_option("--sigma", f.sigma, "Gaussian kernel width for targets");
    sub.add_option("--preset", f.preset, "Backbone width")->check(CLI::IsMember({"tiny", "full"}));
    if (!with_model_flags) return;
    sub.add_option("--lambda-c", f.lambda_c, "Confidence loss weight [default: 1 with UCEB, else 0]");
    sub.add_option("--out", f.out, "Checkpoint path")->required();
    sub.add_option("--log", f.log, "Metrics CSV [default: <out>.metrics.csv]");
    sub.add_flag("--no-residual", f.no_residual, "Base network only (implies --no-uceb)");
    sub.add_flag("--no-uceb", f.no_uceb, "Residual branches without confidence gating");
    sub.add_flag("--squared-norm", f.squared_norm, "Use squared Frobenius norms in L_d");
    sub.add_flag("--literal-upsample", f.literal_upsample, "Bilinear upsampling without the 1/4 mass factor");
}

inline TrainConfig train_config(const TrainFlags& f, std::size_t threads) {
    if (f.lambda_c && *f.lambda_c > 0.0 && f.no_residual)
        throw UsageError("--lambda-c > 0 needs confidence blocks; drop --no-residual or set --lambda-c 0");
    if (f.lambda_c && *f.lambda_c > 0.0 && f.no_uceb)
        throw UsageError("--lambda-c > 0 needs confidence blocks; drop --no-uceb or set --lambda-c 0");
    TrainConfig c;
    c.model = f.preset == "full" ? ModelConfig::full() : ModelConfig::tiny();
    c.model.enable_residual = !f.no_residual;
    c.model.enable_uceb = !f.no_residual && !f.no_uceb;
    c.model.preserve_integral_upsample = !f.literal_upsample;
    c.loss.lambda_c = f.lambda_c.value_or(c.model.enable_uceb ? 1.0 : 0.0);
    c.loss.squared_norm = f.squared_norm;
    c.steps = f.steps;
    c.seed = f.seed;
    c.lr = f.lr;
    c.beta1 = f.beta1;
    c.batch_size = f.batch_size;
    c.crop_size = f.crop_size;
    c.crops_per_image = f.crops_per_image;
    c.checkpoint_every = f.checkpoint_every;
    c.val_fraction = f.val_fraction;
    c.gaussian = GaussianSpec::with_sigma(f.sigma);
    c.threads = threads;
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw UsageError("--val-fraction must be in (0, 1)");
    c.validate();
    return c;
}

inline void require_file(const std::string& path, const char* flag) {
    if (!std::filesystem::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file: " + path);
}

inline void require_dir(const std::string& path, const char* flag) {
    if (!std::filesystem::is_directory(path)) throw UsageError(std::string(flag) + ": no such directory: " + path);
}

inline std::vector<ImageRecord> load_records(const std::string& path, std::ostream& err) {
    auto ds = parse_dataset(path);
    for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
    return std::move(ds.images);
}

inline void write_text(const std::string& path, const std::string& text) {
    detail::write_file(path, text);
}

} // namespace cli

/// Parses argv and runs one subcommand. Exit codes: 0 success, 1 usage or validation error,
/// 2 runtime error (including a failed gradient check).
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Confidence-guided deep residual crowd counting"};
    app.name("cgdrcn");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    std::size_t threads = default_threads();
    auto add_threads = [&](CLI::App* sub) {
        sub->add_option("--threads", threads, "Worker threads (1 is bit-reproducible; env CGDRCN_THREADS)");
    };

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic annotated corpus");
    std::string gen_out;
    CorpusSpec spec;
    CorpusOptions gen_opt;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--low", spec.low, "Images with 5-50 heads");
    gen->add_option("--medium", spec.medium, "Images with 51-300 heads");
    gen->add_option("--high", spec.high, "Images with 501-650 heads");
    gen->add_option("--distractors", spec.distractors, "Images without people");
    gen->add_option("--weather", spec.weather, "Degraded Low/Medium images");
    gen->add_option("--seed", gen_seed, "Corpus seed");
    gen->add_option("--width", gen_opt.width, "Image width, a multiple of 32");
    gen->add_option("--height", gen_opt.height, "Image height, a multiple of 32");
    gen->add_option("--test-fraction", gen_opt.test_fraction, "Fraction of images marked as test split");

    // rasterize
    auto* ras = app.add_subcommand("rasterize", "Render one record's density map");
    std::string ras_dataset, ras_image, ras_out, ras_pgm;
    double ras_sigma = 4.0;
    ras->add_option("--dataset", ras_dataset, "Dataset file")->required();
    ras->add_option("--image", ras_image, "Record id")->required();
    ras->add_option("--sigma", ras_sigma, "Gaussian kernel width (truncated at 4 sigma)");
    ras->add_option("--out", ras_out, "Density map file (DMAP)")->required();
    ras->add_option("--pgm", ras_pgm, "Optional 8-bit visualization");

    // train
    auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint and metrics log");
    cli::TrainFlags tf;
    cli::add_train_flags(*tr, tf, true);
    add_threads(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "Category-wise MAE/MSE of a checkpoint");
    std::string ev_ckpt, ev_dataset, ev_images, ev_format = "text", ev_split = "auto", ev_out;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--dataset", ev_dataset, "Dataset file")->required();
    ev->add_option("--images", ev_images, "Directory holding <id>.ppm")->required();
    ev->add_option("--format", ev_format, "Report format")->check(CLI::IsMember({"text", "csv", "json-like", "json"}));
    ev->add_option("--split", ev_split, "Records to evaluate; auto = test split if present, else all")
        ->check(CLI::IsMember({"auto", "all", "train", "val", "test"}));
    ev->add_option("--out", ev_out, "Write the report here instead of stdout");
    add_threads(ev);

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and evaluate the four ablation configurations");
    cli::TrainFlags af;
    std::string ab_format = "text";
    cli::add_train_flags(*ab, af, false);
    ab->add_option("--format", ab_format, "Table format")->check(CLI::IsMember({"text", "csv"}));
    add_threads(ab);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of dL_f/dtheta through the network");
    std::string gc_preset = "tiny";
    int gc_bits = 64;
    ModelGradcheckOptions gco;
    std::optional<double> gc_h, gc_threshold;
    gc->add_option("--preset", gc_preset, "Backbone width")->check(CLI::IsMember({"tiny", "full"}));
    gc->add_option("--seed", gco.seed, "Seed for weights, scene and probes");
    gc->add_option("--bits", gc_bits, "Precision of the analytic gradients")->check(CLI::IsMember({32, 64}));
    gc->add_option("--probes", gco.probes, "Parameters probed");
    gc->add_option("--size", gco.size, "Input extent, a multiple of 32");
    gc->add_option("--lambda-c", gco.loss.lambda_c, "Confidence loss weight");
    gc->add_option("--step", gc_h, "Central-difference step [default: 1e-6]");
    gc->add_option("--threshold", gc_threshold, "Max relative error [default: 1e-5 at 64 bits, 1e-3 at 32]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }
    if (threads == 0) {
        err << "error: --threads must be at least 1\n";
        return kExitUsage;
    }

    int stage = kExitUsage; // validation failures before any work map to 1
    try {
        if (*gen) {
            if (gen_opt.width == 0 || gen_opt.width % 32 || gen_opt.height == 0 || gen_opt.height % 32)
                throw UsageError("--width/--height must be positive multiples of 32");
            if (gen_opt.test_fraction < 0.0 || gen_opt.test_fraction >= 1.0)
                throw UsageError("--test-fraction must be in [0, 1)");
            stage = kExitRuntime;
            const auto records = generate_corpus(spec, gen_seed, gen_out, gen_opt);
            const auto h = generation_histogram(records);
            out << "wrote " << records.size() << " images to " << gen_out << "\n";
            out << "low " << h.low << " medium " << h.medium << " high " << h.high << " distractors " << h.distractors
                << " weather " << h.weather << "\n";
        } else if (*ras) {
            cli::require_file(ras_dataset, "--dataset");
            const auto spec_g = GaussianSpec::with_sigma(ras_sigma);
            spec_g.validate();
            const auto records = cli::load_records(ras_dataset, err);
            const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == ras_image; });
            if (it == records.end()) throw UsageError("--image: no record with id '" + ras_image + "'");
            stage = kExitRuntime;
            const auto pts = it->head_points();
            const auto map = rasterize(pts, it->width, it->height, spec_g);
            save_density(map, ras_out);
            if (!ras_pgm.empty()) save_density_pgm(map, ras_pgm);
            char buf[96];
            std::snprintf(buf, sizeof buf, "count %.6f (annotated %zu)\n", count(map), it->count());
            out << buf;
        } else if (*tr) {
            const auto cfg = cli::train_config(tf, threads);
            cli::require_file(tf.dataset, "--dataset");
            cli::require_dir(tf.images, "--images");
            const auto records = cli::load_records(tf.dataset, err);
            stage = kExitRuntime;
            const auto corpus = load_corpus(records, tf.images, cfg.gaussian);
            for (const auto& w : corpus.warnings) err << "warning: " << w << "\n";
            const auto res = train(corpus.samples, cfg, [&](const MetricsRow& row) {
                if (row.val_mae)
                    err << "step " << row.step << " l_f " << row.l_f << " val_mae " << *row.val_mae << "\n";
            });
            for (const auto& w : res.warnings) err << "warning: " << w << "\n";
            save_checkpoint({res.best_state, res.best_step, config_digest(cfg)}, tf.out);
            const std::string log = tf.log.empty() ? tf.out + ".metrics.csv" : tf.log;
            cli::write_text(log, metrics_csv(res.log));
            out << "train images " << res.train_indices.size() << ", validation images " << res.val_indices.size()
                << "\n";
            if (res.best_val_mae) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "best validation MAE %.4f at step %zu\n", *res.best_val_mae,
                              res.best_step);
                out << buf;
            }
            out << "checkpoint " << tf.out << " (" << model_digest(res.best_state) << ")\n";
            out << "metrics " << log << "\n";
        } else if (*ev) {
            cli::require_file(ev_ckpt, "--ckpt");
            cli::require_file(ev_dataset, "--dataset");
            cli::require_dir(ev_images, "--images");
            auto records = cli::load_records(ev_dataset, err);
            stage = kExitRuntime;
            const auto ck = load_checkpoint(ev_ckpt);
            std::string which = ev_split;
            if (which == "auto")
                which = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.split == Split::Test; })
                            ? "test"
                            : "all";
            if (which != "all")
                std::erase_if(records, [&](const auto& r) { return to_string(r.split) != which; });
            const auto report = evaluate(ck.state, records, ev_images, threads);
            for (const auto& e : report.errors) err << "warning: " << e.id << ": " << e.message << "\n";
            const std::string doc = ev_format == "csv"    ? emit_csv(report)
                                    : ev_format == "text" ? emit_text(report)
                                                          : emit_structured(report);
            if (ev_out.empty())
                out << doc;
            else
                cli::write_text(ev_out, doc);
        } else if (*ab) {
            auto base = cli::train_config(af, threads);
            cli::require_file(af.dataset, "--dataset");
            cli::require_dir(af.images, "--images");
            const auto records = cli::load_records(af.dataset, err);
            stage = kExitRuntime;
            const auto corpus = load_corpus(records, af.images, base.gaussian);
            for (const auto& w : corpus.warnings) err << "warning: " << w << "\n";
            const auto rows = ablation_suite(corpus.samples, base, [&](const std::string& l) { err << "training " << l << "\n"; });
            if (ab_format == "csv") {
                out << "method,mae,mse\n";
                for (const auto& r : rows) {
                    const auto& m = r.report.bucket(Category::Overall).metrics;
                    char buf[96];
                    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", m ? m->mae : 0.0, m ? m->mse : 0.0);
                    out << '"' << r.label << '"' << buf;
                }
            } else {
                out << ablation_table(rows);
            }
        } else if (*gc) {
            gco.model = gc_preset == "full" ? ModelConfig::full() : ModelConfig::tiny();
            if (gco.size == 0 || gco.size % 32) throw UsageError("--size must be a positive multiple of 32");
            if (gco.probes == 0) throw UsageError("--probes must be positive");
            if (!(gco.loss.lambda_c >= 0.0)) throw UsageError("--lambda-c must be >= 0");
            gco.h = gc_h.value_or(1e-6);
            if (!(gco.h > 0.0)) throw UsageError("--step must be positive");
            const double threshold = gc_threshold.value_or(gc_bits == 64 ? 1e-5 : 1e-3);
            stage = kExitRuntime;
            const auto report = gc_bits == 64 ? model_gradcheck<double, long double>(gco)
                                              : model_gradcheck<float, double>(gco);
            const auto& w = report.probes[report.worst];
            const auto names = init_model<float>(gco.model, gco.seed).parameter_names();
            char buf[256];
            std::snprintf(buf, sizeof buf,
                          "probes %zu\nmax relative error %.3e (threshold %.1e)\nworst %s[%zu] analytic %.9e numeric "
                          "%.9e\n",
                          report.probes.size(), report.max_rel_error, threshold, names[w.tensor].c_str(), w.index, w.analytic,
                          w.numeric);
            out << buf;
            if (!(report.max_rel_error < threshold)) {
                err << "gradcheck FAILED: max relative error " << report.max_rel_error << " >= " << threshold << "\n";
                return kExitRuntime;
            }
            out << "gradcheck passed\n";
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return stage;
    }
    return kExitOk;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"cgdrcn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace cgdrcn
