// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/graph.hpp"
#include "cgdrcn/model.hpp"

namespace cgdrcn {

enum class BatchReduction : std::uint8_t { Mean, Sum };

struct LossConfig {
    double lambda_c = 1.0;
    bool squared_norm = false; // false: plain Frobenius norm per scale
    BatchReduction batch_reduction = BatchReduction::Mean;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Weight applied to each sample's loss when a batch of `batch_size` is combined.
inline double batch_weight(const LossConfig& cfg, std::size_t batch_size) {
    return cfg.batch_reduction == BatchReduction::Mean ? 1.0 / static_cast<double>(batch_size) : 1.0;
}

/// Σ_i ‖CM_i ⊙ Y_i − CM_i ⊙ Ŷ_i‖ over the given scales. An invalid confidence Var stands for
/// the constant map 1.
template <std::floating_point T>
Var loss_d(Graph<T>& g, std::span<const Var> predictions, std::span<const Var> targets,
           std::span<const Var> confidences, bool squared_norm) {
    if (predictions.size() != targets.size() || predictions.size() != confidences.size())
        throw ShapeError("loss_d: predictions, targets and confidences must have one entry per scale");
    Var total = g.input(Tensor<T>({1}));
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (g.shape(predictions[i]) != g.shape(targets[i]))
            throw ShapeError("loss_d: prediction " + to_string(g.shape(predictions[i])) + " vs target " +
                             to_string(g.shape(targets[i])));
        Var diff;
        if (confidences[i].valid()) {
            if (g.shape(confidences[i]) != g.shape(targets[i])) throw ShapeError("loss_d: confidence shape mismatch");
            diff = g.sub(g.mul(confidences[i], targets[i]), g.mul(confidences[i], predictions[i]));
        } else {
            diff = g.sub(targets[i], predictions[i]);
        }
        total = g.add(total, squared_norm ? g.sum_squares(diff) : g.frobenius_norm(diff));
    }
    return total;
}

/// Σ_i Σ_pixels log CM_i. Invalid Vars are constant-1 maps and contribute 0.
template <std::floating_point T>
Var loss_c(Graph<T>& g, std::span<const Var> confidences) {
    Var total = g.input(Tensor<T>({1}));
    for (const Var& cm : confidences)
        if (cm.valid()) total = g.add(total, g.sum_all(g.log(cm)));
    return total;
}

/// L_f = L_d − λ_c L_c.
template <std::floating_point T>
Var loss_f(Graph<T>& g, Var l_d, Var l_c, double lambda_c) {
    return g.sub(l_d, g.scale(l_c, static_cast<T>(lambda_c)));
}

struct LossTerms {
    Var l_f, l_d, l_c;
};

/// The full objective for one sample. Scales 3..6 are supervised when the residual branches
/// exist, only scale 6 otherwise. CM_6 is the constant 1.
template <std::floating_point T>
LossTerms model_loss(Graph<T>& g, const ForwardOutputs<T>& out, const TargetPyramid& targets,
                     const LossConfig& cfg) {
    std::vector<Var> preds, tgts, cms;
    auto add_level = [&](int level, Var cm) {
        const std::uint32_t divisor = 1u << static_cast<unsigned>(level - 1);
        preds.push_back(out.prediction(level));
        tgts.push_back(g.input(targets.at_divisor(divisor).template to_tensor<T>()));
        cms.push_back(cm);
    };
    if (out.has_residual())
        for (int level : {3, 4, 5})
            add_level(level, out.confidence[level_slot(level)]);
    add_level(6, Var{});

    LossTerms terms;
    terms.l_d = loss_d<T>(g, preds, tgts, cms, cfg.squared_norm);
    terms.l_c = loss_c<T>(g, cms);
    terms.l_f = loss_f<T>(g, terms.l_d, terms.l_c, cfg.lambda_c);
    return terms;
}

} // namespace cgdrcn
