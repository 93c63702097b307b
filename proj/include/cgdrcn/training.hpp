// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgdrcn/adam.hpp"
#include "cgdrcn/annotations.hpp"
#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/image_io.hpp"
#include "cgdrcn/loss.hpp"
#include "cgdrcn/model.hpp"
#include "cgdrcn/parallel.hpp"
#include "cgdrcn/rng.hpp"

namespace cgdrcn {

struct TrainConfig {
    std::size_t crop_size = 224;
    std::size_t crops_per_image = 4;
    double lr = 1e-5;
    double beta1 = 0.9;
    std::size_t steps = 0;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    LossConfig loss;
    ModelConfig model;
    std::size_t checkpoint_every = 100; // validation cadence
    double val_fraction = 0.10;
    GaussianSpec gaussian;
    std::size_t threads = 1; // results do not depend on this

    void validate() const {
        if (crop_size == 0 || crop_size % 32 != 0) throw UsageError("crop_size must be a positive multiple of 32");
        if (crops_per_image == 0) throw UsageError("crops_per_image must be positive");
        if (batch_size == 0) throw UsageError("batch_size must be positive");
        if (!(lr > 0.0)) throw UsageError("lr must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw UsageError("beta1 must be in [0, 1)");
        if (checkpoint_every == 0) throw UsageError("checkpoint_every must be positive");
        if (!std::isfinite(loss.lambda_c) || loss.lambda_c < 0.0) throw UsageError("lambda_c must be finite and >= 0");
        gaussian.validate();
        model.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"crop_size", c.crop_size},
            {"crops_per_image", c.crops_per_image},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"lambda_c", c.loss.lambda_c},
            {"squared_norm", c.loss.squared_norm},
            {"batch_reduction", c.loss.batch_reduction == BatchReduction::Mean ? "mean" : "sum"},
            {"model", to_json(c.model)},
            {"checkpoint_every", c.checkpoint_every},
            {"val_fraction", c.val_fraction},
            {"sigma", c.gaussian.sigma},
            {"truncation_radius", c.gaussian.truncation_radius}};
}

inline std::string config_digest(const TrainConfig& c) { return sha256_hex(to_json(c).dump()); }

/// One annotated image with its full-resolution target.
struct TrainingSample {
    ImageRecord record;
    Image image;
    DensityMap density;
};

struct LoadedCorpus {
    std::vector<TrainingSample> samples;
    std::vector<std::string> warnings;
};

/// Reads `<images_dir>/<id>.ppm` for each record and rasterizes its heads.
inline LoadedCorpus load_corpus(const std::vector<ImageRecord>& records, const std::filesystem::path& images_dir,
                                const GaussianSpec& spec) {
    LoadedCorpus c;
    for (const auto& r : records) {
        const auto path = images_dir / (r.id + ".ppm");
        if (!std::filesystem::exists(path)) {
            c.warnings.push_back("missing image " + path.string() + "; record skipped");
            continue;
        }
        Image img = load_ppm(path);
        if (img.dim(1) != r.height || img.dim(2) != r.width)
            throw ValidationError(path.string() + " does not match the annotated size of '" + r.id + "'");
        const auto pts = r.head_points();
        c.samples.push_back({r, std::move(img), rasterize(pts, r.width, r.height, spec)});
    }
    return c;
}

struct Patch {
    Tensor<float> image;
    TargetPyramid targets;
};

/// Uniformly random crop_size window; the target is cropped from the full map, then pyramided.
inline Patch sample_patch(const TrainingSample& s, std::size_t crop_size, Rng& rng) {
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    if (h < crop_size || w < crop_size)
        throw ShapeError("image '" + s.record.id + "' (" + std::to_string(w) + "x" + std::to_string(h) +
                         ") is smaller than the crop " + std::to_string(crop_size));
    const auto y0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h - crop_size)));
    const auto x0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(w - crop_size)));
    Patch p{Tensor<float>({3, crop_size, crop_size}), {}};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < crop_size; ++y)
            for (std::size_t x = 0; x < crop_size; ++x) p.image.at(c, y, x) = s.image.at(c, y0 + y, x0 + x);
    p.targets = target_pyramid(crop(s.density, y0, x0, crop_size, crop_size));
    return p;
}

struct MetricsRow {
    std::size_t step = 0; // 1-based optimizer step
    double l_f = 0.0, l_d = 0.0, l_c = 0.0;
    std::optional<double> val_mae;
    double grad_norm = 0.0;
};

inline constexpr std::string_view kMetricsHeader = "step,l_f,l_d,l_c,val_mae,grad_norm";

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) {
        char buf[192];
        char val[32] = "";
        if (r.val_mae) std::snprintf(val, sizeof val, "%.9g", *r.val_mae);
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%s,%.9g\n", r.step, r.l_f, r.l_d, r.l_c, val, r.grad_norm);
        out += buf;
    }
    return out;
}

struct TrainResult {
    ModelState<float> final_state;
    ModelState<float> best_state; // lowest validation MAE seen (final_state if never validated)
    std::size_t best_step = 0;
    std::optional<double> best_val_mae;
    std::vector<MetricsRow> log;
    std::vector<std::size_t> train_indices, val_indices;
    std::vector<std::string> warnings;
};

struct SampleLoss {
    double l_f = 0, l_d = 0, l_c = 0;
};

/// Loss terms and parameter gradients of one patch.
inline SampleLoss patch_gradients(const ModelState<float>& state, const Patch& patch, const LossConfig& loss,
                                  std::vector<std::vector<float>>& grads) {
    Graph<float> g;
    const auto out = forward(g, state, g.input(patch.image));
    const auto terms = model_loss(g, out, patch.targets, loss);
    g.backward(terms.l_f);
    grads.resize(out.params.size());
    for (std::size_t i = 0; i < out.params.size(); ++i) {
        const auto gr = g.grad(out.params[i]);
        grads[i].assign(gr.begin(), gr.end());
    }
    return {g.value(terms.l_f)[0], g.value(terms.l_d)[0], g.value(terms.l_c)[0]};
}

/// Mean absolute count error of full-image inference over `indices`.
inline double validation_mae(const ModelState<float>& state, const std::vector<TrainingSample>& corpus,
                             const std::vector<std::size_t>& indices, std::size_t threads) {
    std::vector<double> err(indices.size());
    parallel_for(indices.size(), threads, [&](std::size_t k) {
        const auto& s = corpus[indices[k]];
        err[k] = std::abs(infer_count(state, s.image).count - static_cast<double>(s.record.count()));
    });
    double total = 0;
    for (double e : err) total += e;
    return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

using StepCallback = std::function<void(const MetricsRow&)>;

/// Adam on random patches from the non-test records. The validation images are split off
/// before any patch is drawn and never reach the sampler.
inline TrainResult train(const std::vector<TrainingSample>& corpus, const TrainConfig& cfg,
                         const StepCallback& on_step = {}) {
    cfg.validate();
    TrainResult res;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        if (s.record.split == Split::Test) continue;
        if (s.image.dim(1) < cfg.crop_size || s.image.dim(2) < cfg.crop_size) {
            res.warnings.push_back("image '" + s.record.id + "' is smaller than the crop; excluded");
            continue;
        }
        usable.push_back(i);
    }
    if (usable.size() < 2) throw UsageError("training needs at least 2 usable training images");

    const auto split = split_train_val(usable.size(), cfg.val_fraction, cfg.seed);
    for (std::size_t k = 0; k < usable.size(); ++k)
        (split[k] == Split::Val ? res.val_indices : res.train_indices).push_back(usable[k]);

    ModelState<float> state = init_model<float>(cfg.model, cfg.seed);
    res.best_state = state;
    AdamState<float> adam;
    adam.lr = static_cast<float>(cfg.lr);
    adam.beta1 = static_cast<float>(cfg.beta1);

    Rng sampler(mix_seed(cfg.seed, hash_name("patch-sampler")));
    std::vector<std::size_t> queue;
    std::size_t cursor = 0;
    auto next_image = [&] {
        if (cursor == queue.size()) {
            queue.clear();
            for (auto i : res.train_indices)
                for (std::size_t c = 0; c < cfg.crops_per_image; ++c) queue.push_back(i);
            sampler.shuffle(queue);
            cursor = 0;
        }
        return queue[cursor++];
    };

    const double weight = batch_weight(cfg.loss, cfg.batch_size);
    std::vector<Patch> batch(cfg.batch_size);
    std::vector<SampleLoss> losses(cfg.batch_size);
    std::vector<std::vector<std::vector<float>>> sample_grads(cfg.batch_size);
    std::vector<std::vector<float>> grads(state.params.size());
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        for (auto& p : batch) p = sample_patch(corpus[next_image()], cfg.crop_size, sampler);
        parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t b) {
            losses[b] = patch_gradients(state, batch[b], cfg.loss, sample_grads[b]);
        });

        MetricsRow row;
        row.step = step;
        double sq = 0;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            grads[i].assign(state.params[i].size(), 0.0f);
            for (std::size_t b = 0; b < cfg.batch_size; ++b)
                for (std::size_t k = 0; k < grads[i].size(); ++k)
                    grads[i][k] += static_cast<float>(weight) * sample_grads[b][i][k];
            for (float v : grads[i]) sq += static_cast<double>(v) * v;
        }
        for (const auto& l : losses) {
            row.l_f += weight * l.l_f;
            row.l_d += weight * l.l_d;
            row.l_c += weight * l.l_c;
        }
        row.grad_norm = std::sqrt(sq);
        if (!std::isfinite(row.l_f) || !std::isfinite(row.grad_norm))
            throw DivergenceError("training diverged at step " + std::to_string(step) + ": L_f = " +
                                  std::to_string(row.l_f) + ", gradient norm = " + std::to_string(row.grad_norm));

        auto ptrs = state.parameter_ptrs();
        adam_step<float>(ptrs, grads, adam);

        if ((step % cfg.checkpoint_every == 0 || step == cfg.steps) && !res.val_indices.empty()) {
            row.val_mae = validation_mae(state, corpus, res.val_indices, cfg.threads);
            if (!res.best_val_mae || *row.val_mae < *res.best_val_mae) {
                res.best_val_mae = row.val_mae;
                res.best_step = step;
                res.best_state = state;
            }
        }
        res.log.push_back(row);
        if (on_step) on_step(row);
    }
    res.final_state = std::move(state);
    if (!res.best_val_mae) res.best_state = res.final_state;
    return res;
}

} // namespace cgdrcn
