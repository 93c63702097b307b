// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/image_io.hpp"
#include "cgdrcn/model.hpp"
#include "cgdrcn/parallel.hpp"

namespace cgdrcn {

struct MaeMse {
    double mae = 0.0;
    double mse = 0.0; // root-mean-square
};

/// nullopt for empty input: the bucket is undefined and renders as "—".
inline std::optional<MaeMse> mae_mse(std::span<const double> gt, std::span<const double> pred) {
    if (gt.size() != pred.size())
        throw ShapeError("mae_mse: " + std::to_string(gt.size()) + " ground truths vs " + std::to_string(pred.size()) +
                         " predictions");
    if (gt.empty()) return std::nullopt;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double e = std::abs(gt[i] - pred[i]);
        abs_sum += e;
        sq_sum += e * e;
    }
    const auto n = static_cast<double>(gt.size());
    return MaeMse{abs_sum / n, std::sqrt(sq_sum / n)};
}

struct BucketMetrics {
    std::size_t n = 0;
    std::optional<MaeMse> metrics;
};

struct EvalEntry {
    std::string id;
    double gt = 0.0;
    double pred = 0.0;
    CategorySet categories;
};

struct EvalError {
    std::string id;
    std::string message;
};

struct EvalReport {
    std::array<BucketMetrics, 6> buckets{}; // kCategories order
    std::vector<EvalEntry> entries;         // sorted by id
    std::vector<EvalError> errors;          // sorted by id
    std::string model_digest;
    std::string corpus_digest;
    std::string timestamp;

    bool complete() const { return errors.empty(); }
    const BucketMetrics& bucket(Category c) const { return buckets[static_cast<std::size_t>(c)]; }
};

/// Aggregates per-image results into the six buckets. Entry order does not matter.
inline EvalReport build_report(std::vector<EvalEntry> entries, std::vector<EvalError> errors = {}) {
    std::sort(entries.begin(), entries.end(), [](const EvalEntry& a, const EvalEntry& b) { return a.id < b.id; });
    std::sort(errors.begin(), errors.end(), [](const EvalError& a, const EvalError& b) { return a.id < b.id; });
    EvalReport r;
    for (Category c : kCategories) {
        std::vector<double> gt, pred;
        for (const auto& e : entries)
            if (e.categories.contains(c)) {
                gt.push_back(e.gt);
                pred.push_back(e.pred);
            }
        auto& b = r.buckets[static_cast<std::size_t>(c)];
        b.n = gt.size();
        b.metrics = mae_mse(gt, pred);
    }
    r.entries = std::move(entries);
    r.errors = std::move(errors);
    return r;
}

/// SOURCE_DATE_EPOCH when set, so repeated runs can be byte-compared; wall clock otherwise.
inline std::string report_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::atoll(env));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string corpus_digest(const std::vector<ImageRecord>& records) {
    return sha256_hex(serialize_dataset(records));
}

using CountPredictor = std::function<double(const ImageRecord&, const Image&)>;

/// Loads `<images_dir>/<id>.ppm` per record and predicts its count. Missing or unreadable
/// images are collected as errors and evaluation continues.
inline EvalReport evaluate(const CountPredictor& predict, const std::vector<ImageRecord>& records,
                           const std::filesystem::path& images_dir, std::size_t threads = 1,
                           const CategoryPolicy& policy = {}) {
    std::vector<std::optional<EvalEntry>> results(records.size());
    std::vector<std::optional<EvalError>> failures(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const auto& r = records[i];
        const auto path = images_dir / (r.id + ".ppm");
        try {
            const Image img = load_ppm(path);
            if (img.dim(1) != r.height || img.dim(2) != r.width)
                throw ShapeError(path.string() + " is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                                 ", annotation says " + std::to_string(r.width) + "x" + std::to_string(r.height));
            results[i] = EvalEntry{r.id, static_cast<double>(r.count()), predict(r, img), categorize(r, policy)};
        } catch (const std::exception& e) {
            failures[i] = EvalError{r.id, e.what()};
        }
    });
    std::vector<EvalEntry> entries;
    std::vector<EvalError> errors;
    for (auto& e : results)
        if (e) entries.push_back(std::move(*e));
    for (auto& e : failures)
        if (e) errors.push_back(std::move(*e));
    auto report = build_report(std::move(entries), std::move(errors));
    report.corpus_digest = corpus_digest(records);
    report.timestamp = report_timestamp();
    return report;
}

inline EvalReport evaluate(const ModelState<float>& state, const std::vector<ImageRecord>& records,
                           const std::filesystem::path& images_dir, std::size_t threads = 1,
                           const CategoryPolicy& policy = {}) {
    auto report = evaluate([&](const ImageRecord&, const Image& img) { return infer_count(state, img).count; },
                           records, images_dir, threads, policy);
    report.model_digest = model_digest(state);
    return report;
}

// --- emission ----------------------------------------------------------------------------

inline constexpr std::string_view kUndefined = "—";

inline std::string format_metric(const std::optional<MaeMse>& m, bool mse) {
    if (!m) return std::string(kUndefined);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", mse ? m->mse : m->mae);
    return buf;
}

/// Fixed-width table, one column group per category.
inline std::string emit_text(const EvalReport& r) {
    auto pad = [](std::string s, std::size_t w) {
        // "—" is three bytes but one column
        const std::size_t shown = s == kUndefined ? 1 : s.size();
        return std::string(w > shown ? w - shown : 0, ' ') + s;
    };
    std::string out = "          ";
    for (Category c : kCategories) out += pad(std::string(to_string(c)), 16);
    out += "\n          ";
    for (std::size_t i = 0; i < kCategories.size(); ++i) out += pad("MAE", 8) + pad("MSE", 8);
    out += "\nmetrics   ";
    for (Category c : kCategories) {
        const auto& b = r.bucket(c);
        out += pad(format_metric(b.metrics, false), 8) + pad(format_metric(b.metrics, true), 8);
    }
    out += "\nimages    ";
    for (Category c : kCategories) out += pad(std::to_string(r.bucket(c).n), 16);
    out += "\n";
    if (!r.complete()) out += "INCOMPLETE: " + std::to_string(r.errors.size()) + " image(s) could not be evaluated\n";
    return out;
}

/// category,n,mae,mse with full precision.
inline std::string emit_csv(const EvalReport& r) {
    std::string out = "category,n,mae,mse\n";
    for (Category c : kCategories) {
        const auto& b = r.bucket(c);
        char buf[96];
        if (b.metrics)
            std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g\n", b.n, b.metrics->mae, b.metrics->mse);
        else
            std::snprintf(buf, sizeof buf, ",%zu,%s,%s\n", b.n, kUndefined.data(), kUndefined.data());
        out += std::string(to_string(c)) + buf;
    }
    return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json buckets = nlohmann::json::object();
    for (Category c : kCategories) {
        const auto& b = r.bucket(c);
        nlohmann::json j{{"n", b.n}};
        j["mae"] = b.metrics ? nlohmann::json(b.metrics->mae) : nlohmann::json(nullptr);
        j["mse"] = b.metrics ? nlohmann::json(b.metrics->mse) : nlohmann::json(nullptr);
        buckets[std::string(to_string(c))] = j;
    }
    nlohmann::json images = nlohmann::json::array();
    for (const auto& e : r.entries) images.push_back({{"id", e.id}, {"gt", e.gt}, {"pred", e.pred}});
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& e : r.errors) errors.push_back({{"id", e.id}, {"error", e.message}});
    return {{"metadata",
             {{"model_digest", r.model_digest},
              {"corpus_digest", r.corpus_digest},
              {"timestamp", r.timestamp},
              {"complete", r.complete()}}},
            {"buckets", buckets},
            {"images", images},
            {"errors", errors}};
}

inline std::string emit_structured(const EvalReport& r) { return to_json(r).dump(2) + "\n"; }

} // namespace cgdrcn
