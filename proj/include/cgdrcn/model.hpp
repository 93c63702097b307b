// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/graph.hpp"
#include "cgdrcn/rng.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

enum class Precision : std::uint8_t { F32, F64 };

/// Architecture switches. The presets differ only in backbone widths; the residual and
/// confidence branches are 32 channels wide in both.
struct ModelConfig {
    std::array<std::size_t, 5> stage_channels{8, 16, 32, 64, 64};
    std::array<std::size_t, 5> stage_convs{2, 2, 3, 3, 3};
    bool enable_residual = true;
    bool enable_uceb = true;
    double cm_epsilon = 1e-6;
    bool preserve_integral_upsample = true;
    Precision precision = Precision::F32;

    static ModelConfig tiny() { return {}; }
    static ModelConfig full() {
        ModelConfig c;
        c.stage_channels = {64, 128, 256, 512, 512};
        return c;
    }

    void validate() const {
        for (std::size_t i = 0; i < 5; ++i) {
            if (stage_channels[i] == 0) throw UsageError("stage_channels must be positive");
            if (stage_convs[i] == 0) throw UsageError("stage_convs must be positive");
        }
        if (!(cm_epsilon > 0.0 && cm_epsilon < 1.0)) throw UsageError("cm_epsilon must be in (0, 1)");
        if (enable_uceb && !enable_residual) throw UsageError("confidence blocks require the residual branches");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"stage_channels", c.stage_channels},
            {"stage_convs", c.stage_convs},
            {"enable_residual", c.enable_residual},
            {"enable_uceb", c.enable_uceb},
            {"cm_epsilon", c.cm_epsilon},
            {"preserve_integral_upsample", c.preserve_integral_upsample},
            {"precision", c.precision == Precision::F64 ? "f64" : "f32"}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.stage_channels = j.at("stage_channels").get<std::array<std::size_t, 5>>();
    c.stage_convs = j.at("stage_convs").get<std::array<std::size_t, 5>>();
    c.enable_residual = j.at("enable_residual").get<bool>();
    c.enable_uceb = j.at("enable_uceb").get<bool>();
    c.cm_epsilon = j.at("cm_epsilon").get<double>();
    c.preserve_integral_upsample = j.at("preserve_integral_upsample").get<bool>();
    c.precision = j.at("precision").get<std::string>() == "f64" ? Precision::F64 : Precision::F32;
    return c;
}

inline constexpr std::size_t kBranchWidth = 32;

struct ConvSpec {
    std::string name;
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;

    std::size_t padding() const { return (kernel - 1) / 2; }
};

/// Residual levels in refinement order (coarse to fine).
inline constexpr std::array<int, 3> kResidualLevels{5, 4, 3};

/// Every convolution of the network in parameter order:
///   backbone c{stage}_{j}, then cb6_*, then per level 5, 4, 3: cb{l}_*, reduce{l}, uceb{l}_*.
inline std::vector<ConvSpec> conv_layout(const ModelConfig& c) {
    std::vector<ConvSpec> out;
    std::size_t cin = 3;
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t j = 0; j < c.stage_convs[s]; ++j) {
            out.push_back({"c" + std::to_string(s + 1) + "_" + std::to_string(j), cin, c.stage_channels[s], 3});
            cin = c.stage_channels[s];
        }
    auto block = [&](const std::string& name, std::size_t in) {
        out.push_back({name + "_0", in, kBranchWidth, 1});
        out.push_back({name + "_1", kBranchWidth, kBranchWidth, 3});
        out.push_back({name + "_2", kBranchWidth, 1, 3});
    };
    block("cb6", c.stage_channels[4]);
    if (!c.enable_residual) return out;
    for (int level : kResidualLevels) {
        const std::size_t tap = c.stage_channels[static_cast<std::size_t>(level - 1)];
        const std::string l = std::to_string(level);
        block("cb" + l, tap);
        if (c.enable_uceb) {
            out.push_back({"reduce" + l, tap, kBranchWidth, 1});
            out.push_back({"uceb" + l + "_0", kBranchWidth + 1, 32, 1});
            out.push_back({"uceb" + l + "_1", 32, 16, 3});
            out.push_back({"uceb" + l + "_2", 16, 16, 3});
            out.push_back({"uceb" + l + "_3", 16, 1, 1});
        }
    }
    return out;
}

/// Learnable parameters: two tensors (weight, bias) per entry of conv_layout, in order.
template <std::floating_point T>
struct ModelState {
    ModelConfig config;
    std::vector<ConvSpec> layout;
    std::vector<Tensor<T>> params;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> names;
        for (const auto& c : layout) {
            names.push_back(c.name + ".weight");
            names.push_back(c.name + ".bias");
        }
        return names;
    }

    std::vector<Tensor<T>*> parameter_ptrs() {
        std::vector<Tensor<T>*> out;
        for (auto& p : params) out.push_back(&p);
        return out;
    }

    friend bool operator==(const ModelState& a, const ModelState& b) {
        return a.config == b.config && a.params == b.params;
    }
};

/// He-normal weights (std sqrt(2 / fan_in)) and zero biases. Each tensor draws from its own
/// stream keyed by (seed, name), so configurations that share a layer get identical weights.
template <std::floating_point T>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState<T> s;
    s.config = config;
    s.layout = conv_layout(config);
    for (const auto& c : s.layout) {
        Tensor<T> w({c.out_channels, c.in_channels, c.kernel, c.kernel});
        Rng rng(mix_seed(seed, hash_name(c.name)));
        const double stddev = std::sqrt(2.0 / static_cast<double>(c.in_channels * c.kernel * c.kernel));
        for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
        s.params.push_back(std::move(w));
        s.params.emplace_back(Shape{c.out_channels});
    }
    return s;
}

template <std::floating_point T, std::floating_point U>
ModelState<U> cast_model(const ModelState<T>& s) {
    ModelState<U> out;
    out.config = s.config;
    out.config.precision = std::is_same_v<U, double> ? Precision::F64 : Precision::F32;
    out.layout = s.layout;
    for (const auto& p : s.params) out.params.push_back(p.template cast<U>());
    return out;
}

/// Per-level index into ForwardOutputs arrays: level 5 -> 0, 4 -> 1, 3 -> 2.
constexpr std::size_t level_slot(int level) { return static_cast<std::size_t>(5 - level); }

template <std::floating_point T>
struct ForwardOutputs {
    Var y6, y5, y4, y3;
    std::array<Var, 3> residual{};       // R_5, R_4, R_3
    std::array<Var, 3> gated_residual{}; // R̂_i
    std::array<Var, 3> confidence{};     // CM_i; invalid when confidence blocks are off
    std::vector<Var> params;             // leaves in ModelState::params order

    bool has_residual() const { return residual[0].valid(); }
    bool has_confidence() const { return confidence[0].valid(); }

    /// Prediction at level 3..6.
    Var prediction(int level) const {
        switch (level) {
        case 6: return y6;
        case 5: return y5;
        case 4: return y4;
        default: return y3;
        }
    }
};

/// Forced confidence maps (test hook), by level slot. Values are clamped like learned maps.
template <std::floating_point T>
using ConfidenceOverrides = std::array<std::optional<Tensor<T>>, 3>;

/// Progressive coarse-to-fine forward pass.
///
/// Max-pools follow stages 1-4, so the residual taps C3, C4, C5 sit at /4, /8, /16 and the
/// extra pool after CB6 brings Ŷ6 to /32. Each refinement is Ŷ_i = R̂_i + up(Ŷ_{i+1}),
/// with R̂_i = R_i ⊙ CM_i when confidence blocks are enabled. Without residual branches the
/// coarse map is upsampled three times so Ŷ3 is always available.
///
/// `leaves` may supply existing parameter Vars (in ModelState::params order); otherwise the
/// state's tensors are registered on `g`.
template <std::floating_point T>
ForwardOutputs<T> forward(Graph<T>& g, const ModelState<T>& state, Var image,
                          const ConfidenceOverrides<T>* overrides = nullptr, std::span<const Var> leaves = {}) {
    const auto& x0 = g.value(image);
    if (x0.rank() != 3 || x0.dim(0) != 3) throw ShapeError("forward: image must be [3,H,W]");
    if (x0.dim(1) == 0 || x0.dim(2) == 0 || x0.dim(1) % 32 != 0 || x0.dim(2) % 32 != 0)
        throw ShapeError("forward: image extents " + to_string(x0.shape()) + " must be multiples of 32");
    const ModelConfig& cfg = state.config;
    const bool up_keep = cfg.preserve_integral_upsample;

    ForwardOutputs<T> out;
    if (leaves.empty()) {
        for (const auto& p : state.params) out.params.push_back(g.parameter(p));
    } else {
        if (leaves.size() != state.params.size()) throw ShapeError("forward: expected one leaf per parameter tensor");
        for (std::size_t i = 0; i < leaves.size(); ++i)
            if (g.shape(leaves[i]) != state.params[i].shape())
                throw ShapeError("forward: leaf " + std::to_string(i) + " does not match " + state.parameter_names()[i]);
        out.params.assign(leaves.begin(), leaves.end());
    }
    std::size_t next = 0;
    auto conv = [&](Var x) {
        const auto& spec = state.layout[next];
        Var y = g.conv2d(x, out.params[2 * next], out.params[2 * next + 1], 1, spec.padding());
        ++next;
        return y;
    };
    auto conv_block = [&](Var x) {
        Var y = g.relu(conv(x));
        y = g.relu(conv(y));
        return conv(y);
    };

    std::array<Var, 5> taps{};
    Var x = image;
    for (std::size_t s = 0; s < 5; ++s) {
        for (std::size_t j = 0; j < cfg.stage_convs[s]; ++j) x = g.relu(conv(x));
        taps[s] = x;
        if (s < 4) x = g.maxpool2d(x, 2, 2);
    }

    out.y6 = g.maxpool2d(conv_block(taps[4]), 2, 2);
    if (!cfg.enable_residual) {
        out.y5 = g.upsample2x(out.y6, up_keep);
        out.y4 = g.upsample2x(out.y5, up_keep);
        out.y3 = g.upsample2x(out.y4, up_keep);
        return out;
    }

    Var coarse = out.y6;
    for (int level : kResidualLevels) {
        const std::size_t slot = level_slot(level);
        const Var feat = taps[static_cast<std::size_t>(level - 1)];
        const Var r = conv_block(feat);
        Var gated = r;
        if (cfg.enable_uceb) {
            const Var reduced = conv(feat);
            Var u = g.relu(conv(g.concat_channels(r, reduced)));
            u = g.relu(conv(u));
            u = g.relu(conv(u));
            u = conv(u);
            const T lo = static_cast<T>(cfg.cm_epsilon);
            Var cm;
            if (overrides && (*overrides)[slot]) {
                const auto& forced = *(*overrides)[slot];
                if (forced.shape() != g.shape(r))
                    throw ShapeError("forward: confidence override for level " + std::to_string(level) +
                                     " has shape " + to_string(forced.shape()) + ", expected " +
                                     to_string(g.shape(r)));
                cm = g.clamp(g.input(forced), lo, T{1});
            } else {
                cm = g.clamp(g.sigmoid(u), lo, T{1});
            }
            out.confidence[slot] = cm;
            gated = g.mul(r, cm);
        }
        out.residual[slot] = r;
        out.gated_residual[slot] = gated;
        const Var refined = g.add(gated, g.upsample2x(coarse, up_keep));
        if (level == 5) out.y5 = refined;
        if (level == 4) out.y4 = refined;
        if (level == 3) out.y3 = refined;
        coarse = refined;
    }
    return out;
}

struct CountResult {
    double count = 0.0;
    DensityMap density; // Ŷ3 cropped to the valid region, scale_divisor 4
};

/// Zero-pads right/bottom to multiples of 32, runs the network and sums the valid part of Ŷ3.
template <std::floating_point T>
CountResult infer_count(const ModelState<T>& state, const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("infer_count: image must be [3,H,W]");
    const std::size_t h = image.dim(1), w = image.dim(2);
    const std::size_t ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
    Tensor<T> padded({3, ph, pw});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) padded.at(c, y, x) = static_cast<T>(image.at(c, y, x));

    Graph<T> g;
    const auto out = forward(g, state, g.input(std::move(padded)));
    const auto& y3 = g.value(out.y3);
    const std::size_t vh = (h + 3) / 4, vw = (w + 3) / 4;
    CountResult res;
    res.density = DensityMap(vh, vw, 4);
    for (std::size_t y = 0; y < vh; ++y)
        for (std::size_t x = 0; x < vw; ++x) res.density.at(y, x) = static_cast<double>(y3.at(0, y, x));
    res.count = count(res.density);
    return res;
}

} // namespace cgdrcn
