// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/rng.hpp"

namespace cgdrcn {

enum class Occlusion : std::uint8_t { Unoccluded = 0, PartiallyOccluded = 1, FullyOccluded = 2 };
enum class Blur : std::uint8_t { NoBlur = 0, Blur = 1 };
enum class Weather : std::uint8_t { None, Rain, Snow, FogHaze };
enum class Split : std::uint8_t { Train, Val, Test };

struct HeadAnnotation {
    double x = 0.0;
    double y = 0.0;
    Occlusion occlusion = Occlusion::Unoccluded;
    Blur blur = Blur::NoBlur;
    int size_level = 0; // 0 = smallest, open-ended

    friend bool operator==(const HeadAnnotation&, const HeadAnnotation&) = default;
};

struct ImageRecord {
    std::string id;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<HeadAnnotation> heads;
    std::string scene_label;
    Weather weather = Weather::None;
    bool is_distractor = false;
    Split split = Split::Train;

    std::size_t count() const noexcept { return heads.size(); }

    std::vector<Point> head_points() const {
        std::vector<Point> pts;
        pts.reserve(heads.size());
        for (const auto& h : heads) pts.push_back({h.x, h.y});
        return pts;
    }

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline std::string_view to_string(Weather w) {
    switch (w) {
    case Weather::Rain: return "rain";
    case Weather::Snow: return "snow";
    case Weather::FogHaze: return "fog_haze";
    default: return "none";
    }
}

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "train";
    }
}

inline std::optional<Weather> parse_weather(std::string_view s) {
    if (s == "none") return Weather::None;
    if (s == "rain") return Weather::Rain;
    if (s == "snow") return Weather::Snow;
    if (s == "fog_haze") return Weather::FogHaze;
    return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

// --- validation ------------------------------------------------------------------------

struct Diagnostic {
    std::string record_id;
    std::string field;
    std::string message;
};

class DatasetValidationError : public ValidationError {
public:
    explicit DatasetValidationError(std::vector<Diagnostic> diagnostics)
        : ValidationError(summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

    const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string summarize(const std::vector<Diagnostic>& d) {
        std::string s = std::to_string(d.size()) + " validation error(s)";
        if (!d.empty()) s += "; first: record '" + d.front().record_id + "' " + d.front().field + ": " + d.front().message;
        return s;
    }
    std::vector<Diagnostic> diagnostics_;
};

inline std::vector<Diagnostic> validate(const ImageRecord& r) {
    std::vector<Diagnostic> out;
    if (r.id.empty()) out.push_back({r.id, "id", "must be non-empty"});
    if (r.width == 0 || r.height == 0) out.push_back({r.id, "width/height", "must be positive"});
    if (r.is_distractor && !r.heads.empty())
        out.push_back({r.id, "is_distractor", "distractor images must not contain heads"});
    for (std::size_t i = 0; i < r.heads.size(); ++i) {
        const auto& h = r.heads[i];
        const std::string field = "heads[" + std::to_string(i) + "]";
        if (!(h.x >= 0.0 && h.x < static_cast<double>(r.width) && h.y >= 0.0 && h.y < static_cast<double>(r.height)))
            out.push_back({r.id, field, "head out of bounds"});
        if (static_cast<int>(h.occlusion) > 2) out.push_back({r.id, field, "invalid occlusion level"});
        if (static_cast<int>(h.blur) > 1) out.push_back({r.id, field, "invalid blur flag"});
        if (h.size_level < 0) out.push_back({r.id, field, "size level must be non-negative"});
    }
    return out;
}

// --- file format -----------------------------------------------------------------------

struct ParseOptions {
    bool lenient = false; // unknown keys warn instead of failing
};

struct Dataset {
    std::vector<ImageRecord> images;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col > 1 ? col - 1 : col};
}

class RecordReader {
public:
    RecordReader(std::string id, std::vector<Diagnostic>& diags) : id_(std::move(id)), diags_(diags) {}

    template <typename F>
    void check(bool ok, const std::string& field, const std::string& msg, F&& on_ok) {
        if (ok)
            on_ok();
        else
            diags_.push_back({id_, field, msg});
    }

    void error(const std::string& field, const std::string& msg) { diags_.push_back({id_, field, msg}); }

private:
    std::string id_;
    std::vector<Diagnostic>& diags_;
};

inline bool is_count(const nlohmann::json& j) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

} // namespace detail

inline Dataset parse_dataset_text(const std::string& text, const ParseOptions& options = {}) {
    Dataset ds;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) return ds;

    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte);
        throw ParseError(std::string("malformed dataset: ") + e.what(), line, col);
    }

    std::vector<Diagnostic> diags;
    auto unknown = [&](const std::string& where, const std::string& key) {
        if (options.lenient)
            ds.warnings.push_back(where + ": unknown key '" + key + "'");
        else
            diags.push_back({where, key, "unknown key"});
    };

    if (!root.is_object()) throw DatasetValidationError({{"", "<root>", "top level must be an object"}});
    for (const auto& [key, _] : root.items())
        if (key != "version" && key != "images") unknown("<root>", key);
    if (!root.contains("version") || root["version"] != 1)
        diags.push_back({"", "version", "must be 1"});
    if (!root.contains("images") || !root["images"].is_array()) {
        diags.push_back({"", "images", "must be an array"});
        throw DatasetValidationError(std::move(diags));
    }

    static const std::array<std::string_view, 8> kKeys{"id",      "width",         "height", "scene_label",
                                                       "weather", "is_distractor", "split",  "heads"};
    std::size_t index = 0;
    for (const auto& img : root["images"]) {
        ImageRecord rec;
        const std::string fallback_id = "#" + std::to_string(index++);
        if (!img.is_object()) {
            diags.push_back({fallback_id, "<image>", "must be an object"});
            continue;
        }
        rec.id = img.contains("id") && img["id"].is_string() ? img["id"].get<std::string>() : fallback_id;
        detail::RecordReader rd(rec.id, diags);
        for (const auto& [key, _] : img.items())
            if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) unknown(rec.id, key);

        auto field = [&](const char* name) -> const nlohmann::json* {
            if (!img.contains(name)) {
                rd.error(name, "missing");
                return nullptr;
            }
            return &img[name];
        };
        if (!img.contains("id") || !img["id"].is_string()) rd.error("id", "must be a string");
        if (auto* j = field("width")) rd.check(detail::is_count(*j), "width", "must be a non-negative integer", [&] { rec.width = j->get<std::size_t>(); });
        if (auto* j = field("height")) rd.check(detail::is_count(*j), "height", "must be a non-negative integer", [&] { rec.height = j->get<std::size_t>(); });
        if (auto* j = field("scene_label")) rd.check(j->is_string(), "scene_label", "must be a string", [&] { rec.scene_label = j->get<std::string>(); });
        if (auto* j = field("weather")) {
            auto w = j->is_string() ? parse_weather(j->get<std::string>()) : std::nullopt;
            rd.check(w.has_value(), "weather", "must be one of none|rain|snow|fog_haze", [&] { rec.weather = *w; });
        }
        if (auto* j = field("is_distractor")) rd.check(j->is_boolean(), "is_distractor", "must be a boolean", [&] { rec.is_distractor = j->get<bool>(); });
        if (auto* j = field("split")) {
            auto s = j->is_string() ? parse_split(j->get<std::string>()) : std::nullopt;
            rd.check(s.has_value(), "split", "must be one of train|val|test", [&] { rec.split = *s; });
        }
        if (auto* j = field("heads")) {
            if (!j->is_array()) {
                rd.error("heads", "must be an array");
            } else {
                std::size_t hi = 0;
                for (const auto& h : *j) {
                    const std::string name = "heads[" + std::to_string(hi++) + "]";
                    const bool shape_ok = h.is_array() && h.size() == 5 && h[0].is_number() && h[1].is_number() &&
                                          h[2].is_number_integer() && h[3].is_number_integer() &&
                                          h[4].is_number_integer();
                    if (!shape_ok) {
                        rd.error(name, "must be [x, y, occlusion, blur, size_level]");
                        continue;
                    }
                    const auto occ = h[2].get<std::int64_t>(), blur = h[3].get<std::int64_t>();
                    const auto size = h[4].get<std::int64_t>();
                    if (occ < 0 || occ > 2) {
                        rd.error(name, "occlusion must be 0, 1 or 2");
                        continue;
                    }
                    if (blur < 0 || blur > 1) {
                        rd.error(name, "blur must be 0 or 1");
                        continue;
                    }
                    rec.heads.push_back({h[0].get<double>(), h[1].get<double>(), static_cast<Occlusion>(occ),
                                         static_cast<Blur>(blur), static_cast<int>(size)});
                }
            }
        }
        for (auto& d : validate(rec)) diags.push_back(std::move(d));
        ds.images.push_back(std::move(rec));
    }
    if (!diags.empty()) throw DatasetValidationError(std::move(diags));
    return ds;
}

inline Dataset parse_dataset(const std::filesystem::path& path, const ParseOptions& options = {}) {
    return parse_dataset_text(detail::read_file(path), options);
}

inline nlohmann::json to_json(const ImageRecord& r) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : r.heads)
        heads.push_back({h.x, h.y, static_cast<int>(h.occlusion), static_cast<int>(h.blur), h.size_level});
    return {{"id", r.id},
            {"width", r.width},
            {"height", r.height},
            {"scene_label", r.scene_label},
            {"weather", std::string(to_string(r.weather))},
            {"is_distractor", r.is_distractor},
            {"split", std::string(to_string(r.split))},
            {"heads", std::move(heads)}};
}

inline std::string serialize_dataset(const std::vector<ImageRecord>& records) {
    nlohmann::json root;
    root["version"] = 1;
    root["images"] = nlohmann::json::array();
    for (const auto& r : records) root["images"].push_back(to_json(r));
    return root.dump(1) + "\n";
}

inline void write_dataset(const std::vector<ImageRecord>& records, const std::filesystem::path& path) {
    detail::write_file(path, serialize_dataset(records));
}

// --- evaluation buckets ----------------------------------------------------------------

enum class Category : std::uint8_t { Distractors, Low, Medium, High, Weather, Overall };

inline constexpr std::array<Category, 6> kCategories{Category::Distractors, Category::Low,     Category::Medium,
                                                     Category::High,        Category::Weather, Category::Overall};

inline std::string_view to_string(Category c) {
    switch (c) {
    case Category::Distractors: return "Distractors";
    case Category::Low: return "Low";
    case Category::Medium: return "Medium";
    case Category::High: return "High";
    case Category::Weather: return "Weather";
    default: return "Overall";
    }
}

struct CategorySet {
    std::uint8_t bits = 0;

    void insert(Category c) { bits |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(c)); }
    bool contains(Category c) const { return bits & (1u << static_cast<unsigned>(c)); }
    std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits)); }

    friend bool operator==(CategorySet, CategorySet) = default;
};

struct CategoryPolicy {
    bool low_includes_distractors = false;
};

/// Buckets by ground-truth count: Low 0-50, Medium 51-500, High > 500 (inclusive bounds).
/// Distractors are excluded from Low unless the policy says otherwise; Weather overlays the
/// density bucket; Overall always applies.
inline CategorySet categorize(const ImageRecord& r, const CategoryPolicy& policy = {}) {
    CategorySet s;
    s.insert(Category::Overall);
    const std::size_t n = r.count();
    if (r.is_distractor) {
        s.insert(Category::Distractors);
        if (policy.low_includes_distractors) s.insert(Category::Low);
    } else if (n <= 50) {
        s.insert(Category::Low);
    } else if (n <= 500) {
        s.insert(Category::Medium);
    } else {
        s.insert(Category::High);
    }
    if (r.weather != Weather::None) s.insert(Category::Weather);
    return s;
}

/// Marks round(val_fraction * n) of n training images as validation, deterministically.
inline std::vector<Split> split_train_val(std::size_t n, double val_fraction, std::uint64_t seed) {
    if (n < 2) throw UsageError("split_train_val: need at least 2 records");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw UsageError("split_train_val: fraction must be in (0, 1)");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, hash_name("split")));
    rng.shuffle(order);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    std::vector<Split> out(n, Split::Train);
    for (std::size_t i = 0; i < n_val; ++i) out[order[i]] = Split::Val;
    return out;
}

} // namespace cgdrcn
