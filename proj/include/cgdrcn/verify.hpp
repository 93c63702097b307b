// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstdint>

#include "cgdrcn/gradcheck.hpp"
#include "cgdrcn/loss.hpp"
#include "cgdrcn/model.hpp"
#include "cgdrcn/synthcrowd.hpp"

namespace cgdrcn {

struct ModelGradcheckOptions {
    ModelConfig model = ModelConfig::tiny();
    LossConfig loss; // λ_c = 1
    std::size_t size = 32;
    std::size_t heads = 6;
    std::size_t probes = 200;
    double h = 1e-6;
    std::uint64_t seed = 0;
};

/// Finite-difference check of the full objective L_f through the network, on a synthetic
/// scene of options.size pixels square.
template <std::floating_point T, std::floating_point U = T>
GradcheckReport model_gradcheck(const ModelGradcheckOptions& opt) {
    SceneConfig sc;
    sc.width = sc.height = opt.size;
    sc.target_count = opt.heads;
    sc.seed = mix_seed(opt.seed, hash_name("gradcheck-scene"));
    const Scene scene = generate_scene(sc);
    const auto pts = scene.record.head_points();
    const auto pyramid = target_pyramid(rasterize(pts, opt.size, opt.size, GaussianSpec{}));

    ModelState<T> state = init_model<T>(opt.model, opt.seed);
    const ModelState<U> wide_state = cast_model<T, U>(state);
    auto builder = [&]<std::floating_point V>(const ModelState<V>& s) {
        return LossBuilder<V>([&, image = scene.image.template cast<V>()](Graph<V>& g, std::span<const Var> leaves) {
            const auto out = forward<V>(g, s, g.input(image), nullptr, leaves);
            return model_loss(g, out, pyramid, opt.loss).l_f;
        });
    };
    const LossBuilder<T> loss = builder(state);
    const LossBuilder<U> oracle = builder(wide_state);
    auto ptrs = state.parameter_ptrs();
    return gradcheck<T, U>(ptrs, loss, opt.probes, static_cast<T>(opt.h),
                           mix_seed(opt.seed, hash_name("gradcheck-probes")),
                           std::is_same_v<T, U> ? nullptr : &oracle);
}

} // namespace cgdrcn
