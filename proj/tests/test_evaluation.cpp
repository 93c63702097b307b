#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "cgdrcn/evaluation.hpp"
#include "cgdrcn/rng.hpp"
#include "cgdrcn/synthcrowd.hpp"

using namespace cgdrcn;

namespace {

ImageRecord record(std::string id, std::size_t heads, bool distractor = false, Weather w = Weather::None) {
    ImageRecord r;
    r.id = std::move(id);
    r.width = r.height = 32;
    r.heads.resize(heads);
    r.is_distractor = distractor;
    r.weather = w;
    return r;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
    return out;
}

struct Fixture {
    std::filesystem::path dir;
    std::vector<ImageRecord> records;

    Fixture() : dir(std::filesystem::temp_directory_path() / "cgdrcn_eval_test") {
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        records = {record("a", 0, true),   record("b", 12),  record("c", 50), record("d", 51, false, Weather::Rain),
                   record("e", 500),        record("f", 501), record("g", 140, false, Weather::Snow)};
        for (const auto& r : records) save_ppm(Image({3, 32, 32}), dir / (r.id + ".ppm"));
    }
    ~Fixture() { std::filesystem::remove_all(dir); }
};

} // namespace

TEST(MaeMse, HandFixture) {
    const std::vector<double> gt{10, 20}, pred{12, 16};
    const auto m = mae_mse(gt, pred);
    ASSERT_TRUE(m);
    EXPECT_NEAR(m->mae, 3.0, 1e-9);
    EXPECT_NEAR(m->mse, std::sqrt(10.0), 1e-9);
}

TEST(MaeMse, IdentityAndSingleImage) {
    const std::vector<double> gt{3, 7, 9};
    const auto z = mae_mse(gt, gt);
    EXPECT_EQ(z->mae, 0.0);
    EXPECT_EQ(z->mse, 0.0);
    const std::vector<double> one{4}, other{-2.5};
    const auto s = mae_mse(one, other);
    EXPECT_DOUBLE_EQ(s->mae, 6.5);
    EXPECT_DOUBLE_EQ(s->mse, 6.5);
}

TEST(MaeMse, EmptyIsUndefinedAndLengthMismatchThrows) {
    EXPECT_FALSE(mae_mse({}, {}).has_value());
    const std::vector<double> a{1, 2}, b{1};
    EXPECT_THROW(mae_mse(a, b), ShapeError);
}

TEST(MaeMse, MaeNeverExceedsMseOnRandomInstances) {
    Rng rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const auto n = static_cast<std::size_t>(rng.integer(1, 40));
        std::vector<double> gt(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            gt[i] = std::floor(rng.uniform(0, 2000));
            pred[i] = rng.uniform(-50, 2500);
        }
        const auto m = mae_mse(gt, pred);
        double abs_sum = 0, sq_sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            abs_sum += std::abs(gt[i] - pred[i]);
            sq_sum += (gt[i] - pred[i]) * (gt[i] - pred[i]);
        }
        ASSERT_LE(m->mae, m->mse * (1 + 1e-12));
        ASSERT_NEAR(m->mae, abs_sum / n, 1e-9 * (1 + m->mae));
        ASSERT_NEAR(m->mse, std::sqrt(sq_sum / n), 1e-9 * (1 + m->mse));
    }
}

TEST(Buckets, Boundaries) {
    EXPECT_TRUE(categorize(record("x", 50)).contains(Category::Low));
    EXPECT_TRUE(categorize(record("x", 51)).contains(Category::Medium));
    EXPECT_TRUE(categorize(record("x", 500)).contains(Category::Medium));
    EXPECT_TRUE(categorize(record("x", 501)).contains(Category::High));
    const auto d = categorize(record("x", 0, true));
    EXPECT_TRUE(d.contains(Category::Distractors));
    EXPECT_FALSE(d.contains(Category::Low));
}

TEST(Evaluate, ConstantPredictorMatchesFlatLoop) {
    Fixture fx;
    const auto report = evaluate([](const ImageRecord&, const Image&) { return 100.0; }, fx.records, fx.dir);
    ASSERT_TRUE(report.complete());
    for (Category c : kCategories) {
        double abs_sum = 0, sq_sum = 0;
        std::size_t n = 0;
        for (const auto& r : fx.records) {
            const bool in = c == Category::Overall                                   ? true
                            : c == Category::Weather                                 ? r.weather != Weather::None
                            : c == Category::Distractors                             ? r.is_distractor
                            : r.is_distractor                                        ? false
                            : c == Category::Low                                     ? r.count() <= 50
                            : c == Category::Medium                                  ? r.count() > 50 && r.count() <= 500
                                                                                     : r.count() > 500;
            if (!in) continue;
            const double e = 100.0 - static_cast<double>(r.count());
            abs_sum += std::abs(e);
            sq_sum += e * e;
            ++n;
        }
        const auto& b = report.bucket(c);
        ASSERT_EQ(b.n, n) << to_string(c);
        ASSERT_TRUE(b.metrics);
        EXPECT_NEAR(b.metrics->mae, abs_sum / n, 1e-9);
        EXPECT_NEAR(b.metrics->mse, std::sqrt(sq_sum / n), 1e-9);
    }
    const auto& o = report.bucket(Category::Overall);
    EXPECT_EQ(report.bucket(Category::Low).n + report.bucket(Category::Medium).n + report.bucket(Category::High).n +
                  report.bucket(Category::Distractors).n,
              o.n);
    EXPECT_EQ(report.bucket(Category::Weather).n, 2u);
}

TEST(Evaluate, ZeroPredictorOnDistractors) {
    Fixture fx;
    std::vector<ImageRecord> only{fx.records[0]};
    const auto report = evaluate([](const ImageRecord&, const Image&) { return 0.0; }, only, fx.dir);
    EXPECT_EQ(report.bucket(Category::Distractors).metrics->mae, 0.0);
    EXPECT_FALSE(report.bucket(Category::Low).metrics);
    EXPECT_NE(emit_text(report).find("—"), std::string::npos);
}

TEST(Evaluate, OrderInvariant) {
    Fixture fx;
    auto predictor = [](const ImageRecord& r, const Image&) { return 0.9 * static_cast<double>(r.count()) + 3; };
    const auto a = evaluate(predictor, fx.records, fx.dir);
    auto shuffled = fx.records;
    Rng rng(5);
    rng.shuffle(shuffled);
    std::reverse(shuffled.begin(), shuffled.end());
    const auto b = evaluate(predictor, shuffled, fx.dir, 3);
    EXPECT_EQ(emit_csv(a), emit_csv(b));
    EXPECT_EQ(emit_text(a), emit_text(b));
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].id, b.entries[i].id);
}

TEST(Evaluate, MissingImageIsCollectedNotFatal) {
    Fixture fx;
    std::filesystem::remove(fx.dir / "c.ppm");
    const auto report = evaluate([](const ImageRecord&, const Image&) { return 1.0; }, fx.records, fx.dir);
    EXPECT_FALSE(report.complete());
    ASSERT_EQ(report.errors.size(), 1u);
    EXPECT_EQ(report.errors[0].id, "c");
    EXPECT_EQ(report.bucket(Category::Overall).n, fx.records.size() - 1);
    EXPECT_NE(emit_text(report).find("INCOMPLETE"), std::string::npos);
    EXPECT_FALSE(to_json(report)["metadata"]["complete"].get<bool>());
}

TEST(Emit, CsvRoundTrips) {
    Fixture fx;
    const auto report =
        evaluate([](const ImageRecord& r, const Image&) { return std::sqrt(2.0) * r.count(); }, fx.records, fx.dir);
    const auto lines = split(emit_csv(report), '\n');
    ASSERT_EQ(lines.size(), 7u);
    EXPECT_EQ(lines[0], "category,n,mae,mse");
    for (std::size_t i = 0; i < 6; ++i) {
        const auto f = split(lines[i + 1], ',');
        ASSERT_EQ(f.size(), 4u);
        const auto& b = report.buckets[i];
        EXPECT_EQ(f[0], to_string(kCategories[i]));
        EXPECT_EQ(std::stoul(f[1]), b.n);
        ASSERT_TRUE(b.metrics);
        EXPECT_EQ(std::stod(f[2]), b.metrics->mae);
        EXPECT_EQ(std::stod(f[3]), b.metrics->mse);
    }
}

TEST(Emit, CsvEmptyBucketIsUndefinedMarker) {
    const auto report = build_report({{"z", 10, 11, categorize(record("z", 10))}});
    const auto lines = split(emit_csv(report), '\n');
    EXPECT_EQ(lines[1], "Distractors,0,—,—");
}

TEST(Emit, TextTableHasSixGroupsInOrder) {
    const auto report = build_report({{"z", 10, 11, categorize(record("z", 10))}});
    const auto text = emit_text(report);
    std::size_t last = 0;
    for (Category c : kCategories) {
        const auto pos = text.find(std::string(to_string(c)));
        ASSERT_NE(pos, std::string::npos);
        EXPECT_GT(pos, last);
        last = pos;
    }
}

TEST(Emit, StructuredCarriesMetadata) {
    auto report = build_report({{"z", 10, 11, categorize(record("z", 10))}});
    report.model_digest = "m";
    report.corpus_digest = "c";
    report.timestamp = "t";
    const auto j = nlohmann::json::parse(emit_structured(report));
    EXPECT_EQ(j["metadata"]["model_digest"], "m");
    EXPECT_EQ(j["metadata"]["corpus_digest"], "c");
    EXPECT_EQ(j["metadata"]["timestamp"], "t");
    EXPECT_EQ(j["buckets"].size(), 6u);
}

TEST(Emit, TimestampHonoursSourceDateEpoch) {
    setenv("SOURCE_DATE_EPOCH", "86400", 1);
    EXPECT_EQ(report_timestamp(), "1970-01-02T00:00:00Z");
    unsetenv("SOURCE_DATE_EPOCH");
}
