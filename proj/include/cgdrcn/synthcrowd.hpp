// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/image_io.hpp"
#include "cgdrcn/rng.hpp"

namespace cgdrcn {

/// Stylized stand-ins for fog/haze, rain and snow.
enum class Degradation : std::uint8_t { None, BrightnessHaze, AdditiveStreaks, WhiteSpeckle };

inline Weather weather_of(Degradation d) {
    switch (d) {
    case Degradation::BrightnessHaze: return Weather::FogHaze;
    case Degradation::AdditiveStreaks: return Weather::Rain;
    case Degradation::WhiteSpeckle: return Weather::Snow;
    default: return Weather::None;
    }
}

struct SceneConfig {
    std::size_t width = 128;
    std::size_t height = 128;
    std::size_t target_count = 0; // 0 produces a distractor scene
    double perspective_strength = 1.0;
    Degradation degradation = Degradation::None;
    double clutter_level = 0.0;
    std::uint64_t seed = 0;
    std::string id = "scene";
};

struct Scene {
    Image image;
    ImageRecord record;
};

namespace synth {

inline constexpr double kMinRadius = 1.5;
inline constexpr double kRadiusGain = 4.0;
inline constexpr double kMinCenterDistance = 2.0;
inline constexpr int kPlacementRetries = 1000;

inline const std::array<const char*, 6> kSceneLabels{"marathon", "mall", "walking", "stadium", "street", "station"};

inline double head_radius(double y, std::size_t height, double perspective) {
    return kMinRadius + perspective * (y / static_cast<double>(height)) * kRadiusGain;
}

/// Overlap fraction thresholds: < 0.1 unoccluded, 0.1-0.6 partial, > 0.6 full.
inline Occlusion occlusion_from_overlap(double overlap) {
    if (overlap < 0.1) return Occlusion::Unoccluded;
    if (overlap <= 0.6) return Occlusion::PartiallyOccluded;
    return Occlusion::FullyOccluded;
}

inline int size_level_from_radius(double r) { return std::max(0, static_cast<int>(std::floor(r)) - 1); }

inline void paint_background(Image& img, Rng& rng) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    std::array<float, 3> top{}, bottom{};
    for (auto& c : top) c = static_cast<float>(rng.uniform(0.45, 0.8));
    for (auto& c : bottom) c = static_cast<float>(rng.uniform(0.35, 0.7));
    const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08), phase = rng.uniform(0.0, 6.28);
    for (std::size_t y = 0; y < h; ++y) {
        const float t = static_cast<float>(y) / static_cast<float>(h);
        for (std::size_t x = 0; x < w; ++x) {
            const auto tex = static_cast<float>(0.04 * std::sin(fx * static_cast<double>(x) + phase) *
                                                std::cos(fy * static_cast<double>(y)));
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = (1.0f - t) * top[c] + t * bottom[c] + tex;
        }
    }
}

/// Crowd-free structures: rectangles and stripe bands.
inline void paint_clutter(Image& img, double level, Rng& rng) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    const auto shapes = static_cast<int>(std::lround(level * static_cast<double>(h * w) / 400.0));
    for (int s = 0; s < shapes; ++s) {
        const auto x0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(w) - 1));
        const auto y0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h) - 1));
        const auto bw = static_cast<std::size_t>(rng.integer(3, 18));
        const auto bh = static_cast<std::size_t>(rng.integer(3, 18));
        const bool striped = rng.uniform() < 0.4;
        std::array<float, 3> col{};
        for (auto& c : col) c = static_cast<float>(rng.uniform(0.1, 0.95));
        for (std::size_t y = y0; y < std::min(h, y0 + bh); ++y)
            for (std::size_t x = x0; x < std::min(w, x0 + bw); ++x) {
                if (striped && ((x + y) / 2) % 2 == 0) continue;
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
            }
    }
}

inline void box_blur3(Image& img) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    Image src = img;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                float acc = 0.0f;
                int n = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                        acc += src.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        ++n;
                    }
                img.at(c, y, x) = acc / static_cast<float>(n);
            }
}

inline void degrade(Image& img, Degradation d, Rng& rng) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    switch (d) {
    case Degradation::BrightnessHaze: {
        box_blur3(img);
        const auto haze = static_cast<float>(rng.uniform(0.8, 0.92));
        for (auto& v : img.values()) v = 0.55f * v + 0.45f * haze;
        break;
    }
    case Degradation::AdditiveStreaks: {
        const double angle = rng.uniform(1.6, 2.0);
        const double dx = std::cos(angle), dy = std::sin(angle);
        const auto streaks = static_cast<int>(h * w / 150);
        for (int s = 0; s < streaks; ++s) {
            double x = rng.uniform(0.0, static_cast<double>(w)), y = rng.uniform(0.0, static_cast<double>(h));
            const auto len = static_cast<int>(rng.integer(6, 14));
            for (int t = 0; t < len; ++t, x += dx, y += dy) {
                if (x < 0 || y < 0 || x >= static_cast<double>(w) || y >= static_cast<double>(h)) break;
                for (std::size_t c = 0; c < 3; ++c) {
                    float& v = img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                    v = std::min(1.0f, v + 0.3f);
                }
            }
        }
        break;
    }
    case Degradation::WhiteSpeckle: {
        const auto specks = static_cast<int>(h * w / 60);
        for (int s = 0; s < specks; ++s) {
            const auto x = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(w) - 1));
            const auto y = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h) - 1));
            const auto size = static_cast<std::size_t>(rng.integer(1, 2));
            for (std::size_t yy = y; yy < std::min(h, y + size); ++yy)
                for (std::size_t xx = x; xx < std::min(w, x + size); ++xx)
                    for (std::size_t c = 0; c < 3; ++c) img.at(c, yy, xx) = 1.0f;
        }
        break;
    }
    default: break;
    }
}

} // namespace synth

/// Renders a scene and its annotation record. Heads are placed uniformly with centre
/// spacing of at least 2 px and drawn far-to-near (ascending y), so occlusion labels come
/// from how much of each disk nearer heads cover.
inline Scene generate_scene(const SceneConfig& cfg) {
    if (cfg.width == 0 || cfg.height == 0 || cfg.width % 32 != 0 || cfg.height % 32 != 0)
        throw UsageError("scene extents must be positive multiples of 32");
    if (cfg.perspective_strength < 0.0) throw UsageError("perspective_strength must be non-negative");
    if (cfg.clutter_level < 0.0 || cfg.clutter_level > 1.0) throw UsageError("clutter_level must be in [0, 1]");

    const std::size_t w = cfg.width, h = cfg.height;
    Rng rng(cfg.seed);
    Scene scene{Image({3, h, w}), {}};
    Image& img = scene.image;
    synth::paint_background(img, rng);
    synth::paint_clutter(img, cfg.clutter_level, rng);

    // placement with a 2 px spatial hash
    std::vector<Point> centres;
    centres.reserve(cfg.target_count);
    const std::size_t gw = w / 2 + 1, gh = h / 2 + 1;
    std::vector<std::vector<std::size_t>> grid(gw * gh);
    for (std::size_t k = 0; k < cfg.target_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < synth::kPlacementRetries && !placed; ++attempt) {
            const Point p{rng.uniform(0.0, static_cast<double>(w)), rng.uniform(0.0, static_cast<double>(h))};
            const auto cx = static_cast<long>(p.x / 2.0), cy = static_cast<long>(p.y / 2.0);
            bool clear = true;
            for (long gy = cy - 1; gy <= cy + 1 && clear; ++gy)
                for (long gx = cx - 1; gx <= cx + 1 && clear; ++gx) {
                    if (gx < 0 || gy < 0 || gx >= static_cast<long>(gw) || gy >= static_cast<long>(gh)) continue;
                    for (auto idx : grid[static_cast<std::size_t>(gy) * gw + static_cast<std::size_t>(gx)]) {
                        const double ddx = centres[idx].x - p.x, ddy = centres[idx].y - p.y;
                        if (ddx * ddx + ddy * ddy < synth::kMinCenterDistance * synth::kMinCenterDistance) {
                            clear = false;
                            break;
                        }
                    }
                }
            if (clear) {
                grid[static_cast<std::size_t>(cy) * gw + static_cast<std::size_t>(cx)].push_back(centres.size());
                centres.push_back(p);
                placed = true;
            }
        }
        if (!placed)
            throw CapacityError("could not place head " + std::to_string(k + 1) + " of " +
                                std::to_string(cfg.target_count) + " in a " + std::to_string(w) + "x" +
                                std::to_string(h) + " scene");
    }
    std::stable_sort(centres.begin(), centres.end(), [](const Point& a, const Point& b) { return a.y < b.y; });

    // far-to-near painting; `owner` remembers the last head drawn on each pixel
    std::vector<std::int64_t> owner(w * h, -1);
    std::vector<std::size_t> area(centres.size(), 0);
    std::vector<double> radii(centres.size());
    for (std::size_t k = 0; k < centres.size(); ++k) {
        const Point& p = centres[k];
        const double r = synth::head_radius(p.y, h, cfg.perspective_strength);
        radii[k] = r;
        const float tone = static_cast<float>(rng.uniform(0.05, 0.3));
        const float warm = static_cast<float>(rng.uniform(0.0, 0.1));
        const long x0 = std::max(0L, static_cast<long>(std::floor(p.x - r)));
        const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(p.x + r)));
        const long y0 = std::max(0L, static_cast<long>(std::floor(p.y - r)));
        const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(p.y + r)));
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                const double ddx = static_cast<double>(x) + 0.5 - p.x, ddy = static_cast<double>(y) + 0.5 - p.y;
                const double d = std::sqrt(ddx * ddx + ddy * ddy);
                const bool centre_pixel = x == static_cast<long>(p.x) && y == static_cast<long>(p.y);
                if (d > r && !centre_pixel) continue;
                const auto shade = static_cast<float>(0.6 + 0.4 * std::max(0.0, 1.0 - d / r));
                const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
                img.at(0, uy, ux) = tone * shade + warm;
                img.at(1, uy, ux) = tone * shade;
                img.at(2, uy, ux) = tone * shade * 0.8f;
                owner[uy * w + ux] = static_cast<std::int64_t>(k);
                ++area[k];
            }
    }
    std::vector<std::size_t> visible(centres.size(), 0);
    for (auto o : owner)
        if (o >= 0) ++visible[static_cast<std::size_t>(o)];

    synth::degrade(img, cfg.degradation, rng);
    for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);

    ImageRecord& rec = scene.record;
    rec.id = cfg.id;
    rec.width = w;
    rec.height = h;
    rec.weather = weather_of(cfg.degradation);
    rec.is_distractor = cfg.target_count == 0;
    rec.scene_label = synth::kSceneLabels[static_cast<std::size_t>(rng.integer(0, synth::kSceneLabels.size() - 1))];
    const Blur blur = cfg.degradation == Degradation::BrightnessHaze ? Blur::Blur : Blur::NoBlur;
    for (std::size_t k = 0; k < centres.size(); ++k) {
        const double overlap = 1.0 - static_cast<double>(visible[k]) / static_cast<double>(area[k]);
        rec.heads.push_back({centres[k].x, centres[k].y, synth::occlusion_from_overlap(overlap), blur,
                             synth::size_level_from_radius(radii[k])});
    }
    return scene;
}

// --- corpus ----------------------------------------------------------------------------

/// Number of images per generation class. Weather images are generated on top of the
/// density classes with alternating Low / Medium counts.
struct CorpusSpec {
    std::size_t low = 0;
    std::size_t medium = 0;
    std::size_t high = 0;
    std::size_t distractors = 0;
    std::size_t weather = 0;

    std::size_t total() const { return low + medium + high + distractors + weather; }
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

struct CorpusOptions {
    std::size_t width = 256;
    std::size_t height = 256;
    double test_fraction = 0.0;
};

/// The class an image was generated for: Weather if degraded, else its density bucket.
inline CorpusSpec generation_histogram(const std::vector<ImageRecord>& records) {
    CorpusSpec s;
    for (const auto& r : records) {
        const auto cats = categorize(r);
        if (cats.contains(Category::Weather))
            ++s.weather;
        else if (cats.contains(Category::Distractors))
            ++s.distractors;
        else if (cats.contains(Category::Low))
            ++s.low;
        else if (cats.contains(Category::Medium))
            ++s.medium;
        else
            ++s.high;
    }
    return s;
}

inline std::string corpus_image_name(const ImageRecord& r) { return r.id + ".ppm"; }

/// Scene configs for a corpus, in output order. Every scene's seed is derived from
/// (seed, index) alone.
inline std::vector<SceneConfig> plan_corpus(const CorpusSpec& spec, std::uint64_t seed, const CorpusOptions& opt) {
    std::vector<SceneConfig> plan;
    Rng rng(mix_seed(seed, hash_name("corpus-plan")));
    std::size_t index = 0;
    auto add = [&](std::size_t count, Degradation deg, double clutter) {
        SceneConfig c;
        c.width = opt.width;
        c.height = opt.height;
        c.target_count = count;
        c.degradation = deg;
        c.clutter_level = clutter;
        c.perspective_strength = rng.uniform(0.5, 1.0);
        c.seed = mix_seed(seed, index);
        char buf[32];
        std::snprintf(buf, sizeof buf, "img_%04zu", index + 1);
        c.id = buf;
        ++index;
        plan.push_back(c);
    };
    auto low = [&] { return static_cast<std::size_t>(rng.integer(5, 50)); };
    auto medium = [&] { return static_cast<std::size_t>(rng.integer(51, 300)); };
    for (std::size_t i = 0; i < spec.low; ++i) add(low(), Degradation::None, rng.uniform(0.0, 0.3));
    for (std::size_t i = 0; i < spec.medium; ++i) add(medium(), Degradation::None, rng.uniform(0.0, 0.3));
    for (std::size_t i = 0; i < spec.high; ++i)
        add(static_cast<std::size_t>(rng.integer(501, 650)), Degradation::None, rng.uniform(0.0, 0.3));
    for (std::size_t i = 0; i < spec.distractors; ++i) add(0, Degradation::None, rng.uniform(0.6, 1.0));
    static constexpr std::array<Degradation, 3> kCycle{Degradation::BrightnessHaze, Degradation::AdditiveStreaks,
                                                       Degradation::WhiteSpeckle};
    for (std::size_t i = 0; i < spec.weather; ++i)
        add(i % 2 == 0 ? low() : medium(), kCycle[i % 3], rng.uniform(0.0, 0.3));
    return plan;
}

/// Writes `<out>/dataset.json` and `<out>/images/<id>.ppm`; returns the records.
inline std::vector<ImageRecord> generate_corpus(const CorpusSpec& spec, std::uint64_t seed,
                                                const std::filesystem::path& out, const CorpusOptions& opt = {}) {
    if (opt.test_fraction < 0.0 || opt.test_fraction >= 1.0) throw UsageError("test fraction must be in [0, 1)");
    const auto plan = plan_corpus(spec, seed, opt);
    std::error_code ec;
    std::filesystem::create_directories(out / "images", ec);
    if (ec) throw IoError("cannot create " + (out / "images").string() + ": " + ec.message());

    std::vector<ImageRecord> records;
    records.reserve(plan.size());
    for (const auto& cfg : plan) {
        Scene scene = generate_scene(cfg);
        save_ppm(scene.image, out / "images" / corpus_image_name(scene.record));
        records.push_back(std::move(scene.record));
    }
    if (opt.test_fraction > 0.0 && !records.empty()) {
        std::vector<std::size_t> order(records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(seed, hash_name("test-split")));
        rng.shuffle(order);
        const auto n = static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(records.size())));
        for (std::size_t i = 0; i < n; ++i) records[order[i]].split = Split::Test;
    }
    write_dataset(records, out / "dataset.json");
    return records;
}

} // namespace cgdrcn
