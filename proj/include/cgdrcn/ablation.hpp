// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "cgdrcn/evaluation.hpp"
#include "cgdrcn/training.hpp"

namespace cgdrcn {

struct AblationVariant {
    std::string label;
    TrainConfig config;
};

/// The four rows of the ablation table, sharing seed and step budget.
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base) {
    auto make = [&](std::string label, bool residual, bool uceb, double lambda_c) {
        AblationVariant v{std::move(label), base};
        v.config.model.enable_residual = residual;
        v.config.model.enable_uceb = uceb;
        v.config.loss.lambda_c = lambda_c;
        return v;
    };
    return {make("Base network", false, false, 0.0), make("Base network + R", true, false, 0.0),
            make("Base network + R + UCEB (λ_c=0)", true, true, 0.0),
            make("Base network + R + UCEB (λ_c=1)", true, true, 1.0)};
}

struct AblationRow {
    std::string label;
    TrainConfig config;
    TrainResult result;
    EvalReport report;
};

/// Trains every variant and evaluates its best-validation state on the held-out images:
/// the Test split when the corpus has one, otherwise the validation images of the run.
inline std::vector<AblationRow> ablation_suite(const std::vector<TrainingSample>& corpus, const TrainConfig& base,
                                               const std::function<void(const std::string&)>& progress = {}) {
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus[i].record.split == Split::Test) test.push_back(i);

    std::vector<AblationRow> rows;
    for (auto& v : ablation_variants(base)) {
        if (progress) progress(v.label);
        AblationRow row{v.label, v.config, train(corpus, v.config), {}};
        const auto& held_out = test.empty() ? row.result.val_indices : test;
        std::vector<EvalEntry> entries(held_out.size());
        parallel_for(held_out.size(), v.config.threads, [&](std::size_t k) {
            const auto& s = corpus[held_out[k]];
            entries[k] = {s.record.id, static_cast<double>(s.record.count()),
                          infer_count(row.result.best_state, s.image).count, categorize(s.record)};
        });
        row.report = build_report(std::move(entries));
        row.report.model_digest = model_digest(row.result.best_state);
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Method | MAE | MSE, one line per variant, Overall bucket.
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = "Method                                      MAE       MSE\n";
    for (const auto& r : rows) {
        const auto& m = r.report.bucket(Category::Overall).metrics;
        std::string label = r.label;
        // "λ" is two bytes wide in UTF-8 but one column
        const std::size_t shown = label.size() - (label.find("λ") != std::string::npos ? 1 : 0);
        label += std::string(shown < 40 ? 40 - shown : 1, ' ');
        char buf[64];
        std::snprintf(buf, sizeof buf, "%9s %9s\n", format_metric(m, false).c_str(), format_metric(m, true).c_str());
        out += label + buf;
    }
    return out;
}

} // namespace cgdrcn
