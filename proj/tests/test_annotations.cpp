// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "cgdrcn/annotations.hpp"

using namespace cgdrcn;

namespace {

ImageRecord make_record(std::string id, std::size_t heads, Weather w = Weather::None, bool distractor = false) {
    ImageRecord r;
    r.id = std::move(id);
    r.width = 64;
    r.height = 48;
    r.scene_label = "street";
    r.weather = w;
    r.is_distractor = distractor;
    for (std::size_t i = 0; i < heads; ++i)
        r.heads.push_back({static_cast<double>(i % 64) + 0.25, static_cast<double>(i % 48) * 0.5,
                           static_cast<Occlusion>(i % 3), static_cast<Blur>(i % 2), static_cast<int>(i % 4)});
    return r;
}

const char* kFixture = R"({
  "version": 1,
  "images": [
    {"id": "a", "width": 32, "height": 32, "scene_label": "mall", "weather": "none",
     "is_distractor": false, "split": "train", "heads": [[1.5, 2.25, 0, 0, 1], [30.0, 31.9, 2, 1, 3]]},
    {"id": "b", "width": 64, "height": 32, "scene_label": "stadium", "weather": "fog_haze",
     "is_distractor": false, "split": "test", "heads": [[0, 0, 1, 1, 0]]},
    {"id": "c", "width": 32, "height": 64, "scene_label": "park", "weather": "none",
     "is_distractor": true, "split": "val", "heads": []}
  ]
})";

std::vector<std::string> fields_of(const DatasetValidationError& e) {
    std::vector<std::string> out;
    for (const auto& d : e.diagnostics()) out.push_back(d.field + ": " + d.message);
    return out;
}

} // namespace

TEST(ParseDataset, EmptyTextIsEmptyDataset) {
    EXPECT_TRUE(parse_dataset_text("").images.empty());
    EXPECT_TRUE(parse_dataset_text("  \n").images.empty());
    EXPECT_TRUE(parse_dataset_text(R"({"version": 1, "images": []})").images.empty());
}

TEST(ParseDataset, FixtureFields) {
    const auto ds = parse_dataset_text(kFixture);
    ASSERT_EQ(ds.images.size(), 3u);
    const auto& a = ds.images[0];
    EXPECT_EQ(a.id, "a");
    EXPECT_EQ(a.count(), 2u);
    EXPECT_EQ(a.heads[1].occlusion, Occlusion::FullyOccluded);
    EXPECT_EQ(a.heads[1].blur, Blur::Blur);
    EXPECT_EQ(a.heads[1].size_level, 3);
    EXPECT_EQ(ds.images[1].weather, Weather::FogHaze);
    EXPECT_EQ(ds.images[1].split, Split::Test);
    EXPECT_TRUE(ds.images[2].is_distractor);
    EXPECT_EQ(ds.images[2].split, Split::Val);
}

TEST(ParseDataset, FixtureRoundTrips) {
    const auto first = parse_dataset_text(kFixture).images;
    const auto second = parse_dataset_text(serialize_dataset(first)).images;
    EXPECT_EQ(first, second);
}

TEST(ParseDataset, RandomRecordsRoundTripThroughFile) {
    std::vector<ImageRecord> records{make_record("x", 0), make_record("y", 17, Weather::Snow),
                                     make_record("z", 0, Weather::Rain, true)};
    records[1].heads[3].x = 1.0 / 3.0;
    records[1].split = Split::Val;
    const auto path = std::filesystem::temp_directory_path() / "cgdrcn_annotations_test.json";
    write_dataset(records, path);
    EXPECT_EQ(parse_dataset(path).images, records);
    std::filesystem::remove(path);
}

TEST(ParseDataset, HeadOnRightEdgeIsOutOfBounds) {
    const std::string text = R"({"version": 1, "images": [{"id": "e", "width": 10, "height": 10,
      "scene_label": "", "weather": "none", "is_distractor": false, "split": "train",
      "heads": [[10, 5, 0, 0, 0]]}]})";
    try {
        parse_dataset_text(text);
        FAIL() << "expected validation error";
    } catch (const DatasetValidationError& e) {
        ASSERT_EQ(e.diagnostics().size(), 1u);
        EXPECT_EQ(e.diagnostics()[0].record_id, "e");
        EXPECT_EQ(e.diagnostics()[0].field, "heads[0]");
        EXPECT_EQ(e.diagnostics()[0].message, "head out of bounds");
    }
}

TEST(ParseDataset, MalformedTextReportsPosition) {
    try {
        parse_dataset_text("{\n  \"version\": 1,\n  \"images\": [,]\n}");
        FAIL() << "expected parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_GT(e.column(), 1u);
    }
}

TEST(ParseDataset, FieldViolationsNamed) {
    const std::string text = R"({"version": 1, "images": [{"id": "f", "width": -3, "height": 10,
      "scene_label": "", "weather": "hail", "is_distractor": true, "split": "train",
      "heads": [[1, 1, 5, 0, 0], [2, 2, 0, 0, 0]]}]})";
    try {
        parse_dataset_text(text);
        FAIL();
    } catch (const DatasetValidationError& e) {
        const auto f = fields_of(e);
        auto has = [&](std::string_view prefix) {
            return std::any_of(f.begin(), f.end(), [&](const std::string& s) { return s.starts_with(prefix); });
        };
        EXPECT_TRUE(has("width"));
        EXPECT_TRUE(has("weather"));
        EXPECT_TRUE(has("heads[0]: occlusion"));
        EXPECT_TRUE(has("is_distractor"));
    }
}

TEST(ParseDataset, UnknownKeysStrictVersusLenient) {
    const std::string text = R"({"version": 1, "extra": 2, "images": [{"id": "g", "width": 4, "height": 4,
      "scene_label": "", "weather": "none", "is_distractor": false, "split": "train", "heads": [], "note": "x"}]})";
    EXPECT_THROW(parse_dataset_text(text), DatasetValidationError);
    const auto ds = parse_dataset_text(text, ParseOptions{true});
    EXPECT_EQ(ds.images.size(), 1u);
    EXPECT_EQ(ds.warnings.size(), 2u);
}

TEST(ParseDataset, MissingFileIsIoError) {
    EXPECT_THROW(parse_dataset("/nonexistent/cgdrcn/dataset.json"), IoError);
}

TEST(Validate, DistractorWithHeadsRejected) {
    auto r = make_record("d", 2, Weather::None, true);
    EXPECT_FALSE(validate(r).empty());
    r.heads.clear();
    EXPECT_TRUE(validate(r).empty());
}

TEST(Categorize, PaperBoundaries) {
    CategorySet low;
    low.insert(Category::Low);
    low.insert(Category::Overall);
    EXPECT_EQ(categorize(make_record("a", 50)), low);
    const auto high_rain = categorize(make_record("b", 501, Weather::Rain));
    EXPECT_TRUE(high_rain.contains(Category::High));
    EXPECT_TRUE(high_rain.contains(Category::Weather));
    EXPECT_TRUE(high_rain.contains(Category::Overall));
    EXPECT_EQ(high_rain.size(), 3u);
    const auto d = categorize(make_record("c", 0, Weather::None, true));
    EXPECT_TRUE(d.contains(Category::Distractors));
    EXPECT_TRUE(d.contains(Category::Overall));
    EXPECT_EQ(d.size(), 2u);
    EXPECT_TRUE(categorize(make_record("c", 0, Weather::None, true), CategoryPolicy{true}).contains(Category::Low));
}

TEST(Categorize, BucketsAreExclusiveAndTotal) {
    for (std::size_t n : {0u, 1u, 50u, 51u, 200u, 500u, 501u, 900u}) {
        for (auto w : {Weather::None, Weather::Snow}) {
            const auto s = categorize(make_record("r", n, w));
            const int density = s.contains(Category::Low) + s.contains(Category::Medium) + s.contains(Category::High);
            EXPECT_EQ(density, 1) << n;
            EXPECT_TRUE(s.contains(Category::Overall));
            EXPECT_EQ(s.contains(Category::Weather), w != Weather::None);
            const auto expected = n <= 50 ? Category::Low : n <= 500 ? Category::Medium : Category::High;
            EXPECT_TRUE(s.contains(expected)) << n;
        }
    }
}

TEST(SplitTrainVal, TenImagesGiveOneValidation) {
    const auto s = split_train_val(10, 0.10, 1);
    EXPECT_EQ(std::count(s.begin(), s.end(), Split::Val), 1);
    EXPECT_EQ(split_train_val(10, 0.10, 1), s);
}

TEST(SplitTrainVal, PartitionForRandomSizes) {
    for (std::size_t n = 2; n < 200; n += 7) {
        for (double f : {0.1, 0.25, 0.5}) {
            const auto s = split_train_val(n, f, n * 31);
            ASSERT_EQ(s.size(), n);
            std::set<std::size_t> train, val;
            for (std::size_t i = 0; i < n; ++i) (s[i] == Split::Val ? val : train).insert(i);
            EXPECT_EQ(train.size() + val.size(), n);
            for (auto i : val) EXPECT_FALSE(train.count(i));
            EXPECT_EQ(val.size(), static_cast<std::size_t>(std::llround(f * double(n))));
        }
    }
}

TEST(SplitTrainVal, UsageErrors) {
    EXPECT_THROW(split_train_val(1, 0.1, 0), UsageError);
    EXPECT_THROW(split_train_val(10, 0.0, 0), UsageError);
    EXPECT_THROW(split_train_val(10, 1.0, 0), UsageError);
}
