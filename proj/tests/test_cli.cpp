#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include <json.hpp>

#include "gopstream/commands.hpp"

using namespace gopstream;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(GOPSTREAM_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (p == nullptr) return {-1, ""};
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), p) != nullptr) r.out += buf.data();
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

nlohmann::json parse_json(const Run& r) {
    // Progress lines may precede the JSON object.
    const auto at = r.out.find('{');
    return nlohmann::json::parse(r.out.substr(at == std::string::npos ? 0 : at));
}

std::vector<nlohmann::json> parse_lines(const std::string& s) {
    std::vector<nlohmann::json> rows;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto nl = s.find('\n', pos);
        const auto line = s.substr(pos, nl - pos);
        if (!line.empty() && line.front() == '{') rows.push_back(nlohmann::json::parse(line));
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return rows;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("gopstream_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    /// Noise texture translated one pixel right per frame with wraparound.
    std::string write_video(const std::string& name, std::uint32_t w, std::uint32_t h, std::size_t frames) const {
        std::mt19937 rng(11);
        FrameRGB base(w, h);
        for (auto& v : base.pixels) v = static_cast<std::uint8_t>(rng() % 256);
        RawVideo v{w, h, 4, {}};
        for (std::size_t f = 0; f < frames; ++f) {
            FrameRGB fr(w, h);
            for (std::uint32_t y = 0; y < h; ++y)
                for (std::uint32_t x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) fr.at(x, y, c) = base.at(static_cast<std::uint32_t>((x + w - f % w) % w), y, c);
            v.frames.push_back(std::move(fr));
        }
        write_file(path(name), write_rvf(v));
        return path(name);
    }

    fs::path dir_;
};

// Small encoder and data settings for the training commands.
const std::string kTiny =
    "--set train.hidden=16 --set warmup.head_hidden=8 --set frame.layers=1 --set motion.layers=1 --set synth.per_class=2";

}  // namespace

TEST_F(Cli, EncodeDecodeVerifyRoundTrip) {
    const auto rvf = write_video("v.rvf", 64, 48, 11);
    const auto enc = run("encode " + rvf + " " + path("v.gsc"));
    ASSERT_EQ(enc.code, 0) << enc.out;
    EXPECT_EQ(parse_json(enc)["frames"], 11);
    ASSERT_EQ(run("decode " + path("v.gsc") + " --out " + path("back.rvf")).code, 0);
    EXPECT_EQ(read_file(path("back.rvf")), read_file(rvf));

    const auto v = run("verify " + path("v.gsc") + " --ref " + rvf);
    EXPECT_EQ(v.code, 0) << v.out;
    EXPECT_TRUE(parse_json(v)["ok"].get<bool>());
    EXPECT_EQ(run("verify " + rvf).code, 0);
}

TEST_F(Cli, VerifyLocatesFlippedResidualByte) {
    const auto clip = generate(MotionCategory::Curved, 3, {});
    write_file(path("c.rvf"), write_rvf(clip.video));
    auto gsc = serialize_gsc(encode_gop_stream(clip.video));

    // Find a residual literal through the parser's own layout and flip its
    // low byte; the reported offset must be that literal.
    GscLayout layout;
    (void)deserialize_gsc(gsc, &layout);
    std::optional<std::size_t> target;
    for (const auto& rec : layout.gops[0].pframes[2].channels[1]) {
        if (rec.literal_count > 0) {
            target = rec.offset + 4;
            break;
        }
    }
    ASSERT_TRUE(target.has_value());
    gsc[*target] ^= 0x01;
    write_file(path("bad.gsc"), gsc);

    const auto r = run("verify " + path("bad.gsc") + " --ref " + path("c.rvf"));
    EXPECT_EQ(r.code, 1);
    const auto j = parse_json(r);
    EXPECT_FALSE(j["ok"].get<bool>());
    EXPECT_EQ(j["offset"].get<std::size_t>(), *target) << j.dump();
}

TEST_F(Cli, VerifyLocatesVectorLeavingTheFrame) {
    const auto clip = generate(MotionCategory::Linear, 4, {});
    auto gsc = serialize_gsc(encode_gop_stream(clip.video));
    GscLayout layout;
    (void)deserialize_gsc(gsc, &layout);
    // Block (0, 0) pointing left by one pixel leaves the frame.
    const auto at = layout.mv_offset(0, 0, 0);
    gsc[at] = static_cast<std::uint8_t>(-1);
    write_file(path("bad.gsc"), gsc);
    const auto r = run("verify " + path("bad.gsc"));
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(parse_json(r)["offset"].get<std::size_t>(), at);
}

TEST_F(Cli, TruncatedDecodeReportsOffset) {
    const auto rvf = write_video("v.rvf", 32, 32, 3);
    ASSERT_EQ(run("encode " + rvf + " " + path("v.gsc")).code, 0);
    auto bytes = read_file(path("v.gsc"));
    bytes.resize(bytes.size() - 7);
    write_file(path("t.gsc"), bytes);
    const auto r = run("decode " + path("t.gsc") + " " + path("t.rvf"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("TruncatedStream"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("byte offset"), std::string::npos) << r.out;
}

TEST_F(Cli, ExtractMvMatchesStream) {
    const auto rvf = write_video("v.rvf", 32, 32, 10);
    ASSERT_EQ(run("encode " + rvf + " " + path("v.gsc")).code, 0);
    ASSERT_EQ(run("extract-mv " + path("v.gsc") + " --out " + path("v.gmvm")).code, 0);
    const auto stream = deserialize_gsc(read_file(path("v.gsc")));
    std::uint32_t bs = 0;
    const auto dump = read_gmvm(read_file(path("v.gmvm")), &bs);
    EXPECT_EQ(bs, 4u);
    ASSERT_EQ(dump.size(), 8u);
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_EQ(dump[i].gop, 0u);
        EXPECT_EQ(dump[i].t, i + 1);
        EXPECT_EQ(dump[i].mv, stream.gops[0].pframes[i].mv);
        // Content moves right by one pixel, so the reference sits one to the left.
        EXPECT_EQ(dump[i].mv.at(3, 3).dx, -1);
    }
    EXPECT_EQ(dump[7].gop, 1u);
}

TEST_F(Cli, FeaturizeTokenTotals) {
    const auto v16 = write_video("v16.rvf", 384, 384, 16);
    auto r = run("featurize " + v16 + " --out " + path("a.gftr"));
    ASSERT_EQ(r.code, 0) << r.out;
    auto j = parse_json(r);
    EXPECT_EQ(j["gop_count"], 2);
    EXPECT_EQ(j["tokens_per_gop"], 81);
    EXPECT_EQ(j["total_tokens"], 162);
    const auto seq = read_gftr(read_file(path("a.gftr")));
    ASSERT_EQ(seq.segments.size(), 2u);
    EXPECT_EQ(seq.segments[0].tokens.rows(), 81u);

    ASSERT_EQ(run("featurize " + v16 + " --out " + path("b.gftr")).code, 0);
    EXPECT_EQ(read_file(path("a.gftr")), read_file(path("b.gftr")));

    j = parse_json(run("--pool-k 4 featurize " + v16));
    EXPECT_EQ(j["tokens_per_gop"], 49);
    EXPECT_EQ(j["total_tokens"], 98);

    const auto v64 = write_video("v64.rvf", 32, 32, 64);
    j = parse_json(run("featurize " + v64));
    EXPECT_EQ(j["gop_count"], 8);
    EXPECT_EQ(j["total_tokens"], 648);
    const auto over = run("--max-gops 4 featurize " + v64);
    EXPECT_EQ(over.code, 1);
    EXPECT_NE(over.out.find("Precondition"), std::string::npos);
}

TEST_F(Cli, ConfigFileAndOverrides) {
    write_file(path("run.cfg"), cmd_detail::as_bytes("# comment\nseed = 5\nfusion.pool_k = 2  # inline\n"
                                                      "fusion.mode = add\n"));
    auto r = run("--config " + path("run.cfg") + " --fusion concat show-config");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("seed = 5\n"), std::string::npos);
    EXPECT_NE(r.out.find("fusion.pool_k = 2\n"), std::string::npos);
    EXPECT_NE(r.out.find("fusion.mode = concat\n"), std::string::npos);

    // The dump parses back to the same config.
    write_file(path("dump.cfg"), cmd_detail::as_bytes(r.out));
    EXPECT_EQ(run("--config " + path("dump.cfg") + " show-config").out, r.out);

    write_file(path("bad.cfg"), cmd_detail::as_bytes("seed = 1\nno.such.key = 3\n"));
    r = run("--config " + path("bad.cfg") + " show-config");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;

    r = run("--set train.hidden=30 show-config");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("HeadsMismatch"), std::string::npos) << r.out;
}

TEST_F(Cli, GenSynthIsDeterministic) {
    ASSERT_EQ(run("gen-synth --per-class 3 --seed 7 --out " + path("a")).code, 0);
    ASSERT_EQ(run("gen-synth --per-class 3 --seed 7 --out " + path("b")).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(path("a"))) {
        ++files;
        EXPECT_EQ(read_file(e.path().string()), read_file((fs::path(path("b")) / e.path().filename()).string()))
            << e.path().filename();
    }
    EXPECT_EQ(files, 13u);
}

TEST_F(Cli, TrainWarmupWritesThirtyEpochsAndRepeats) {
    ASSERT_EQ(run("gen-synth --per-class 2 --out " + path("ds")).code, 0);
    for (const char* out : {"w1", "w2"}) {
        const auto r = run(kTiny + " train-warmup --data " + path("ds") + " --out " + path(out));
        ASSERT_EQ(r.code, 0) << r.out;
    }
    const auto m = nlohmann::json::parse(cmd_detail::as_string(read_file(path("w1/metrics.json"))));
    EXPECT_EQ(m["epochs"].size(), 30u);
    EXPECT_EQ(m["epochs"][29]["epoch"], 30);
    for (const char* f : {"warmup.ckpt", "metrics.json"}) {
        EXPECT_EQ(read_file(path(std::string("w1/") + f)), read_file(path(std::string("w2/") + f))) << f;
    }
    // Configs differ only in the output path.
    const auto without_out = [&](const char* d) {
        auto s = cmd_detail::as_string(read_file(path(std::string(d) + "/config.txt")));
        const auto at = s.find("\nout = ");
        return s.substr(0, at);
    };
    EXPECT_EQ(without_out("w1"), without_out("w2"));
    // The written config reproduces the run.
    EXPECT_EQ(run("--config " + path("w1/config.txt") + " show-config").out,
              cmd_detail::as_string(read_file(path("w1/config.txt"))));

    const auto e = run(kTiny + " eval --data " + path("ds") + " --checkpoint " + path("w1/warmup.ckpt"));
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_TRUE(parse_json(e)["trained"].get<bool>());
}

TEST_F(Cli, EvalUntrainedIsNearChance) {
    const auto e = run("--set train.hidden=16 --set motion.layers=1 eval --per-class 25");
    ASSERT_EQ(e.code, 0) << e.out;
    const auto j = parse_json(e);
    EXPECT_EQ(j["total"], 20);
    EXPECT_NEAR(j["val_acc"].get<double>(), 0.25, 0.15);
    EXPECT_FALSE(j["trained"].get<bool>());
}

TEST_F(Cli, AblatePoolingSweepRows) {
    const std::string args = kTiny + " --set probe.epochs=2 ablate --grid \"warmup=off;pool_k=1,2,3,4\" --out " +
                             path("rows.jsonl");
    const auto r = run(args);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = parse_lines(cmd_detail::as_string(read_file(path("rows.jsonl"))));
    ASSERT_EQ(rows.size(), 4u);
    const std::size_t expect[] = {729, 196, 81, 49};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(rows[i]["kind"], "ablation");
        EXPECT_EQ(rows[i]["tokens_per_gop"], expect[i]);
        EXPECT_EQ(rows[i]["measured_tokens"], expect[i]);
        EXPECT_EQ(rows[i]["config"]["fusion"]["k"], i + 1);
        for (const char* col : {"Lin.", "Cur.", "Rot.", "Con.", "Avg."}) EXPECT_TRUE(rows[i].contains(col)) << col;
    }

    // Same command, same rows apart from wall time.
    ASSERT_EQ(run(args).code, 0);
    auto again = parse_lines(cmd_detail::as_string(read_file(path("rows.jsonl"))));
    for (std::size_t i = 0; i < 4; ++i) {
        auto a = rows[i], b = again[i];
        a.erase("wall_ms");
        b.erase("wall_ms");
        EXPECT_EQ(a, b);
    }
}

TEST_F(Cli, AblateWarmupCellNeedsCheckpoint) {
    const auto r = run(kTiny + " ablate --grid \"warmup=on\"");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("--checkpoint"), std::string::npos) << r.out;
    EXPECT_EQ(run(kTiny + " ablate --grid \"colour=red\"").code, 1);
}

TEST_F(Cli, BenchRows) {
    const auto r = run("bench --out " + path("bench.jsonl"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = parse_lines(cmd_detail::as_string(read_file(path("bench.jsonl"))));
    std::vector<std::size_t> tokens, totals;
    for (const auto& row : rows) {
        ASSERT_TRUE(row.contains("kind"));
        if (row["kind"] == "tokens") {
            EXPECT_EQ(row["tokens_per_gop"], row["measured_tokens"]);
            tokens.push_back(row["tokens_per_gop"]);
        } else if (row["kind"] == "featurize") {
            totals.push_back(row["total_tokens"]);
        } else if (row["kind"] == "stream" && row["clip"] == "static") {
            EXPECT_TRUE(row["all_zero_mv"].get<bool>());
        } else if (row["kind"] == "stream" && row["clip"] == "linear") {
            EXPECT_LE(row["ratio"].get<double>(), 0.30);
        }
    }
    EXPECT_EQ(tokens, (std::vector<std::size_t>{729, 196, 81, 49}));
    EXPECT_EQ(totals, (std::vector<std::size_t>{162, 324, 648}));
}
