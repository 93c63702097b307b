// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "cgdrcn/errors.hpp"
#include "cgdrcn/graph.hpp"
#include "cgdrcn/rng.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

struct GradcheckProbe {
    std::size_t tensor = 0;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckProbe> probes;
    double max_rel_error = 0.0;
    std::size_t worst = 0;

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Builds a scalar loss on a fresh graph from parameter leaves (one per tensor, same order).
template <std::floating_point T>
using LossBuilder = std::function<Var(Graph<T>&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences (f(θ+h) − f(θ−h)) / 2h
/// on `probe_count` coordinates. Every tensor is probed at least once when
/// probe_count allows it; remaining probes are uniform over all coordinates.
/// Parameters are perturbed in place and restored bitwise.
///
/// When `oracle` is given, the finite differences are taken on that builder in precision U
/// (e.g. long double) with the parameters widened. The reverse-mode side always runs in T.
template <std::floating_point T, std::floating_point U = T>
GradcheckReport gradcheck(std::span<Tensor<T>* const> params, const LossBuilder<T>& build_loss,
                          std::size_t probe_count, T h, std::uint64_t seed,
                          const LossBuilder<U>* oracle = nullptr) {
    auto evaluate = [&](bool with_grad, std::vector<std::vector<T>>* grads) {
        Graph<T> graph;
        std::vector<Var> leaves;
        leaves.reserve(params.size());
        for (auto* p : params) leaves.push_back(graph.parameter(*p));
        const Var root = build_loss(graph, leaves);
        const T value = graph.value(root)[0];
        if (with_grad) {
            graph.backward(root);
            grads->clear();
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                auto g = graph.grad(leaves[i]);
                grads->emplace_back(g.begin(), g.end());
                grads->back().resize(params[i]->size(), T{0});
            }
        }
        return value;
    };

    std::vector<Tensor<U>> wide;
    if (oracle)
        for (auto* p : params) wide.push_back(p->template cast<U>());
    auto evaluate_wide = [&](std::size_t t, std::size_t i, U delta) {
        U& slot = wide[t][i];
        const U saved = slot;
        slot = saved + delta;
        Graph<U> graph;
        std::vector<Var> leaves;
        for (const auto& p : wide) leaves.push_back(graph.parameter(p));
        const U value = graph.value((*oracle)(graph, leaves))[0];
        slot = saved;
        return value;
    };

    std::vector<std::vector<T>> analytic;
    const T first = evaluate(true, &analytic);
    const T second = evaluate(false, nullptr);
    if (first != second) throw UsageError("gradcheck: loss is not deterministic");

    std::size_t total = 0;
    for (auto* p : params) total += p->size();
    probe_count = std::min(probe_count, total);

    Rng rng(seed);
    std::set<std::pair<std::size_t, std::size_t>> chosen;
    std::vector<std::pair<std::size_t, std::size_t>> order;
    auto take = [&](std::size_t t, std::size_t i) {
        if (chosen.insert({t, i}).second) order.emplace_back(t, i);
    };
    if (probe_count >= params.size()) {
        for (std::size_t t = 0; t < params.size(); ++t)
            if (params[t]->size() > 0)
                take(t, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(params[t]->size()) - 1)));
    }
    while (order.size() < probe_count) {
        auto flat = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(total) - 1));
        std::size_t t = 0;
        while (flat >= params[t]->size()) flat -= params[t]->size(), ++t;
        take(t, flat);
    }

    GradcheckReport report;
    for (const auto& [t, i] : order) {
        long double diff = 0.0L; // f(θ+h) − f(θ−h), subtracted before narrowing
        if (oracle) {
            const U plus = evaluate_wide(t, i, static_cast<U>(h));
            const U minus = evaluate_wide(t, i, -static_cast<U>(h));
            diff = static_cast<long double>(plus - minus);
        } else {
            T& slot = (*params[t])[i];
            const T saved = slot;
            slot = saved + h;
            const T plus = evaluate(false, nullptr);
            slot = saved - h;
            const T minus = evaluate(false, nullptr);
            slot = saved;
            diff = static_cast<long double>(plus - minus);
        }

        GradcheckProbe probe;
        probe.tensor = t;
        probe.index = i;
        probe.analytic = static_cast<double>(analytic[t][i]);
        probe.numeric = static_cast<double>(diff / (2.0L * static_cast<long double>(h)));
        probe.rel_error = relative_error(probe.analytic, probe.numeric);
        if (probe.rel_error > report.max_rel_error || report.probes.empty()) {
            report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
            if (probe.rel_error >= report.max_rel_error) report.worst = report.probes.size();
        }
        report.probes.push_back(probe);
    }
    return report;
}

} // namespace cgdrcn
