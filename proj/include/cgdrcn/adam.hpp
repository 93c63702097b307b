// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "cgdrcn/errors.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

/// Adam moments and hyperparameters. beta1 doubles as the "momentum" of SGD-style configs.
template <std::floating_point T>
struct AdamState {
    T lr = T(1e-5);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of every parameter from `grads` (same order, same sizes).
template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const std::vector<T>> grads, AdamState<T>& state) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->size(), T{0});
            state.v[i].assign(params[i]->size(), T{0});
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i]->size() || state.m[i].size() != params[i]->size())
            throw ShapeError("adam_step: size mismatch for parameter " + std::to_string(i));
    }

    ++state.step;
    const T bc1 = T{1} - std::pow(state.beta1, static_cast<T>(state.step));
    const T bc2 = T{1} - std::pow(state.beta2, static_cast<T>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i]->values();
        const auto& g = grads[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = state.beta1 * m[j] + (T{1} - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T{1} - state.beta2) * g[j] * g[j];
            const T m_hat = m[j] / bc1;
            const T v_hat = v[j] / bc2;
            theta[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

/// Convenience overload using each tensor's own gradient accumulator.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state) {
    std::vector<std::vector<T>> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(p->grad());
    adam_step<T>(params, grads, state);
}

} // namespace cgdrcn
