#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "cgdrcn/cli.hpp"

using namespace cgdrcn;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return detail::read_file(p); }

class CliTest : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("cgdrcn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    void make_corpus(const std::string& name = "corpus") {
        const auto r = run({"gen", "--out", p(name), "--low", "4", "--medium", "2", "--distractors", "1", "--width", "96",
                            "--height", "96", "--seed", "5"});
        ASSERT_EQ(r.code, 0) << r.err;
    }

    std::vector<std::string> train_args(const std::string& out) const {
        return {"train", "--dataset", p("corpus/dataset.json"), "--images", p("corpus/images"), "--steps", "3",
                "--crop-size", "64",       "--lr",     "1e-3",            "--checkpoint-every", "2",
                "--batch-size", "2",       "--out",    out,               "--threads", "1"};
    }
};

} // namespace

TEST_F(CliTest, GenAllZeroGivesEmptyDataset) {
    const auto r = run({"gen", "--out", p("empty")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(parse_dataset(dir / "empty" / "dataset.json").images.empty());
}

TEST_F(CliTest, GenIsReproducible) {
    make_corpus("a");
    make_corpus("b");
    EXPECT_EQ(slurp(dir / "a/dataset.json"), slurp(dir / "b/dataset.json"));
    for (const auto& e : fs::directory_iterator(dir / "a/images"))
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b/images" / e.path().filename()));
    EXPECT_EQ(parse_dataset(dir / "a/dataset.json").images.size(), 7u);
}

TEST_F(CliTest, GenRejectsBadExtentBeforeWriting) {
    const auto r = run({"gen", "--out", p("bad"), "--low", "1", "--width", "100"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--width"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "bad"));
}

TEST_F(CliTest, RasterizeConservesCount) {
    make_corpus();
    const auto records = parse_dataset(dir / "corpus/dataset.json").images;
    const auto r = run({"rasterize", "--dataset", p("corpus/dataset.json"), "--image", records[1].id, "--out", p("d.dmap"),
                        "--sigma", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto map = load_density(dir / "d.dmap");
    EXPECT_NEAR(count(map), static_cast<double>(records[1].count()), 1e-4 * records[1].count() + 1e-6);
    run({"rasterize", "--dataset", p("corpus/dataset.json"), "--image", records[1].id, "--out", p("e.dmap"), "--sigma",
         "3"});
    EXPECT_EQ(slurp(dir / "d.dmap"), slurp(dir / "e.dmap"));
}

TEST_F(CliTest, RasterizeUnknownImageIsUsageError) {
    make_corpus();
    const auto r = run({"rasterize", "--dataset", p("corpus/dataset.json"), "--image", "nope", "--out", p("d.dmap")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST_F(CliTest, TrainTwiceIsByteIdenticalAndEvalReads) {
    make_corpus();
    ASSERT_EQ(run(train_args(p("a.ckpt"))).code, 0);
    const auto second = run(train_args(p("b.ckpt")));
    ASSERT_EQ(second.code, 0) << second.err;
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_EQ(slurp(dir / "a.ckpt.metrics.csv"), slurp(dir / "b.ckpt.metrics.csv"));
    EXPECT_EQ(slurp(dir / "a.ckpt.metrics.csv").rfind("step,l_f,l_d,l_c,val_mae,grad_norm\n", 0), 0u);

    setenv("SOURCE_DATE_EPOCH", "0", 1);
    const std::vector<std::string> ev{"eval",     "--ckpt", p("a.ckpt"),          "--dataset", p("corpus/dataset.json"),
                                      "--images", p("corpus/images"), "--format", "json-like"};
    const auto e1 = run(ev), e2 = run(ev);
    unsetenv("SOURCE_DATE_EPOCH");
    ASSERT_EQ(e1.code, 0) << e1.err;
    EXPECT_EQ(e1.out, e2.out);
    const auto j = nlohmann::json::parse(e1.out);
    EXPECT_EQ(j["buckets"]["Overall"]["n"], 7);
    EXPECT_EQ(j["metadata"]["model_digest"], model_digest(load_checkpoint(dir / "a.ckpt").state));

    const auto csv = run({"eval", "--ckpt", p("a.ckpt"), "--dataset", p("corpus/dataset.json"), "--images",
                          p("corpus/images"), "--format", "csv"});
    EXPECT_EQ(csv.out.rfind("category,n,mae,mse\n", 0), 0u);
}

TEST_F(CliTest, TrainThreadsDoNotChangeResult) {
    make_corpus();
    auto a = train_args(p("a.ckpt"));
    auto b = train_args(p("b.ckpt"));
    b.back() = "3";
    ASSERT_EQ(run(a).code, 0);
    ASSERT_EQ(run(b).code, 0);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST_F(CliTest, TrainLambdaDefaultsFollowArchitecture) {
    make_corpus();
    auto args = train_args(p("a.ckpt"));
    args.push_back("--no-uceb");
    ASSERT_EQ(run(args).code, 0);
    const auto ck = load_checkpoint(dir / "a.ckpt");
    EXPECT_FALSE(ck.state.config.enable_uceb);
    EXPECT_TRUE(ck.state.config.enable_residual);
    const auto log = slurp(dir / "a.ckpt.metrics.csv");
    EXPECT_NE(log.find(",0,"), std::string::npos); // l_c column is exactly zero
}

TEST_F(CliTest, InvalidCombinationNamesTheFlag) {
    make_corpus();
    auto args = train_args(p("a.ckpt"));
    args.insert(args.end(), {"--no-residual", "--lambda-c", "0.5"});
    const auto r = run(args);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--no-residual"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "a.ckpt"));
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
    const auto r = run({"gen", "--out", p("x"), "--bogus"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--bogus"), std::string::npos);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"eval", "--ckpt", "x", "--dataset", "y", "--images", "z", "--format", "xml"}).code, 1);
}

TEST_F(CliTest, EvalMissingCheckpointNamesPath) {
    make_corpus();
    const auto missing = p("missing.ckpt");
    const auto r =
        run({"eval", "--ckpt", missing, "--dataset", p("corpus/dataset.json"), "--images", p("corpus/images")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST_F(CliTest, EvalCorruptCheckpointIsRuntimeError) {
    make_corpus();
    detail::write_file(dir / "bad.ckpt", "CGCK garbage garbage");
    const auto r =
        run({"eval", "--ckpt", p("bad.ckpt"), "--dataset", p("corpus/dataset.json"), "--images", p("corpus/images")});
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, EvalMissingImageFlagsIncomplete) {
    make_corpus();
    save_checkpoint({init_model<float>(ModelConfig::tiny(), 0), 0, ""}, dir / "m.ckpt");
    const auto records = parse_dataset(dir / "corpus/dataset.json").images;
    fs::remove(dir / "corpus/images" / (records[0].id + ".ppm"));
    const auto r =
        run({"eval", "--ckpt", p("m.ckpt"), "--dataset", p("corpus/dataset.json"), "--images", p("corpus/images")});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("INCOMPLETE"), std::string::npos);
    EXPECT_NE(r.err.find(records[0].id), std::string::npos);
}

TEST_F(CliTest, AblatePrintsFourRows) {
    make_corpus();
    const auto r = run({"ablate", "--dataset", p("corpus/dataset.json"), "--images", p("corpus/images"), "--steps", "1",
                        "--crop-size", "64", "--batch-size", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
    EXPECT_NE(r.out.find("Base network + R + UCEB (λ_c=0)"), std::string::npos);
}

TEST_F(CliTest, HelpListsEveryFlagWithDefaults) {
    const std::map<std::string, std::vector<std::string>> flags{
        {"gen", {"--out", "--low", "--medium", "--high", "--distractors", "--weather", "--seed", "--width", "--height",
                 "--test-fraction"}},
        {"rasterize", {"--dataset", "--image", "--sigma", "--out", "--pgm"}},
        {"train", {"--dataset", "--images", "--preset", "--lambda-c", "--steps", "--seed", "--out", "--no-residual",
                   "--no-uceb", "--squared-norm", "--literal-upsample", "--lr", "--threads"}},
        {"eval", {"--ckpt", "--dataset", "--images", "--format", "--threads"}},
        {"ablate", {"--dataset", "--images", "--steps", "--seed", "--threads"}},
        {"gradcheck", {"--preset", "--seed", "--bits", "--probes", "--threshold"}}};
    for (const auto& [cmd, names] : flags) {
        const auto r = run({cmd, "--help"});
        EXPECT_EQ(r.code, 0);
        for (const auto& n : names) EXPECT_NE(r.out.find(n), std::string::npos) << cmd << " " << n;
    }
    const auto t = run({"train", "--help"}).out;
    EXPECT_NE(t.find("--lr FLOAT [1e-05]"), std::string::npos);
    EXPECT_NE(t.find("--crop-size UINT [224]"), std::string::npos);
    EXPECT_NE(run({"gradcheck", "--help"}).out.find("--bits INT:{32,64} [64]"), std::string::npos);
}

TEST_F(CliTest, GradcheckTinyPasses) {
    const auto r = run({"gradcheck", "--preset", "tiny", "--bits", "64"});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    const auto pos = r.out.find("max relative error ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(std::stod(r.out.substr(pos + 19)), 1e-5);
}

TEST_F(CliTest, GradcheckOverThresholdExitsNonzero) {
    const auto r = run({"gradcheck", "--probes", "5", "--threshold", "1e-15"});
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ZeroThreadsRejected) {
    EXPECT_EQ(run({"eval", "--ckpt", "a", "--dataset", "b", "--images", "c", "--threads", "0"}).code, 1);
}
