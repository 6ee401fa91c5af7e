#include <gtest/gtest.h>

#include <climits>
#include <random>

#include "gopstream/gop_codec.hpp"
#include "test_util.hpp"

using namespace gopstream;

namespace {

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::Precondition;
}

long block_sad(const FrameRGB& cur, const FrameRGB& ref, int x, int y, int rx, int ry, int bs) {
    long s = 0;
    for (int j = 0; j < bs; ++j)
        for (int i = 0; i < bs; ++i)
            for (int c = 0; c < 3; ++c)
                s += std::abs(int(cur.at(x + i, y + j, c)) - int(ref.at(rx + i, ry + j, c)));
    return s;
}

struct OracleResult {
    long min_sad = LONG_MAX;
    int dx = 0, dy = 0;
};

// Independent brute force: scan every offset, keep the lexicographically
// smallest key (sad, |dx|+|dy|, dy, dx).
OracleResult oracle_block(const FrameRGB& cur, const FrameRGB& ref, int bx, int by, int bs, int radius) {
    OracleResult best;
    std::tuple<long, int, int, int> key{LONG_MAX, 0, 0, 0};
    const int x = bx * bs, y = by * bs;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const int rx = x + dx, ry = y + dy;
            if (rx < 0 || ry < 0 || rx + bs > int(ref.width) || ry + bs > int(ref.height)) continue;
            const long s = block_sad(cur, ref, x, y, rx, ry, bs);
            const std::tuple<long, int, int, int> k{s, std::abs(dx) + std::abs(dy), dy, dx};
            if (k < key) {
                key = k;
                best = {s, dx, dy};
            }
        }
    }
    return best;
}

}  // namespace

TEST(Motion, IdenticalFramesGiveZeroVectors) {
    std::mt19937_64 rng(1);
    const auto f = testutil::random_frame(32, 16, rng);
    const auto g = estimate_motion(f, f, 4, 8);
    EXPECT_EQ(g.grid_w, 8u);
    EXPECT_EQ(g.grid_h, 4u);
    EXPECT_TRUE(g.all_zero());
}

TEST(Motion, MatchesBruteForceOracleOnRandomPairs) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto ref = testutil::random_frame(32, 32, rng);
        // Half the trials are related by a shift, half are unrelated noise.
        const auto cur = trial % 2 ? testutil::shifted(ref, 1 + trial % 3, -(trial % 2), ref)
                                   : testutil::random_frame(32, 32, rng);
        const auto g = estimate_motion(cur, ref, 4, 4);
        for (int by = 0; by < 8; ++by) {
            for (int bx = 0; bx < 8; ++bx) {
                const auto o = oracle_block(cur, ref, bx, by, 4, 4);
                const auto v = g.at(bx, by);
                EXPECT_EQ(block_sad(cur, ref, bx * 4, by * 4, bx * 4 + v.dx, by * 4 + v.dy, 4), o.min_sad);
                EXPECT_EQ(v.dx, o.dx);
                EXPECT_EQ(v.dy, o.dy);
            }
        }
    }
}

TEST(Motion, ShiftRightByTwoGivesMinusTwo) {
    std::mt19937_64 rng(3);
    const auto ref = testutil::random_frame(32, 32, rng);
    const auto cur = testutil::shifted(ref, 2, 0, ref);
    const auto g = estimate_motion(cur, ref, 4, 8);
    for (std::uint32_t by = 0; by < 8; ++by)
        for (std::uint32_t bx = 1; bx < 8; ++bx) {
            EXPECT_EQ(g.at(bx, by).dx, -2);
            EXPECT_EQ(g.at(bx, by).dy, 0);
        }
    // Block at (8,8) matched the reference block at (6,8).
    EXPECT_EQ(g.at(2, 2), (MotionVector{-2, 0}));
}

TEST(Motion, TieBreakPrefersShortestThenSmallestDyThenDx) {
    // A flat reference makes every candidate equal; the zero vector must win.
    FrameRGB flat(16, 16, 77);
    EXPECT_TRUE(estimate_motion(flat, flat, 4, 3).all_zero());
    const auto order = detail::search_order(1);
    ASSERT_EQ(order.size(), 9u);
    EXPECT_EQ(order[0], std::make_pair(0, 0));
    EXPECT_EQ(order[1], std::make_pair(0, -1));
    EXPECT_EQ(order[2], std::make_pair(-1, 0));
    EXPECT_EQ(order[3], std::make_pair(1, 0));
    EXPECT_EQ(order[4], std::make_pair(0, 1));
    EXPECT_EQ(order[5], std::make_pair(-1, -1));
}

TEST(Motion, VectorsStayInBoundsAndWithinRadius) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 5; ++t) {
        const auto a = testutil::random_frame(24, 16, rng);
        const auto b = testutil::random_frame(24, 16, rng);
        const auto g = estimate_motion(a, b, 4, 6);
        for (std::uint32_t by = 0; by < g.grid_h; ++by)
            for (std::uint32_t bx = 0; bx < g.grid_w; ++bx) {
                const auto v = g.at(bx, by);
                EXPECT_LE(std::abs(v.dx), 6);
                EXPECT_LE(std::abs(v.dy), 6);
                EXPECT_GE(int(bx * 4) + v.dx, 0);
                EXPECT_LE(int(bx * 4) + v.dx + 4, 24);
                EXPECT_GE(int(by * 4) + v.dy, 0);
                EXPECT_LE(int(by * 4) + v.dy + 4, 16);
            }
    }
}

TEST(Motion, RejectsMismatchedOrIndivisibleFrames) {
    FrameRGB a(8, 8), b(12, 8), c(10, 8);
    EXPECT_EQ(code_of([&] { (void)estimate_motion(a, b, 4, 2); }), Errc::DimMismatch);
    EXPECT_EQ(code_of([&] { (void)estimate_motion(c, c, 4, 2); }), Errc::NonDivisibleDims);
}

TEST(Predict, ZeroGridCopiesReference) {
    std::mt19937_64 rng(5);
    const auto ref = testutil::random_frame(16, 8, rng);
    EXPECT_EQ(predict_frame(ref, MotionVectorGrid(4, 2), 4), ref);
}

TEST(Predict, ShiftGridReproducesInteriorOfShiftedFrame) {
    std::mt19937_64 rng(6);
    const auto ref = testutil::random_frame(32, 32, rng);
    const auto cur = testutil::shifted(ref, 3, 1, testutil::random_frame(32, 32, rng));
    const auto g = estimate_motion(cur, ref, 4, 8);
    const auto pred = predict_frame(ref, g, 4);
    // Blocks whose source is fully inside the shifted region.
    for (std::uint32_t y = 4; y < 32; ++y)
        for (std::uint32_t x = 4; x < 32; ++x)
            for (int c = 0; c < 3; ++c) ASSERT_EQ(pred.at(x, y, c), cur.at(x, y, c));
}

TEST(Predict, RejectsVectorLeavingFrame) {
    FrameRGB ref(8, 8);
    MotionVectorGrid g(2, 2);
    g.at(1, 0) = {1, 0};
    EXPECT_EQ(code_of([&] { (void)predict_frame(ref, g, 4); }), Errc::OutOfBoundsVector);
}

TEST(Residual, IsExactSignedDifference) {
    FrameRGB a(4, 4, 0), p(4, 4, 0);
    a.at(1, 2, 0) = 200;
    p.at(1, 2, 0) = 55;
    p.at(3, 3, 2) = 255;
    const auto r = compute_residual(a, p);
    EXPECT_EQ(r.at(1, 2, 0), 145);
    EXPECT_EQ(r.at(3, 3, 2), -255);
    EXPECT_TRUE(compute_residual(a, a).all_zero());
}

TEST(DecodePFrame, ZeroRecordIsIdentity) {
    std::mt19937_64 rng(7);
    const auto ref = testutil::random_frame(8, 8, rng);
    PFrameRec rec{MotionVectorGrid(2, 2), ResidualPlane(8, 8)};
    EXPECT_EQ(decode_pframe(ref, rec, 4), ref);
}

TEST(DecodePFrame, InvertsEncodeOnRandomFrames) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 10; ++i) {
        const auto ref = testutil::random_frame(16, 12, rng);
        const auto cur = testutil::random_frame(16, 12, rng);
        EXPECT_EQ(decode_pframe(ref, encode_pframe(cur, ref, 4, 3), 4), cur);
    }
}

TEST(DecodePFrame, OverflowIsReportedWithPixel) {
    FrameRGB ref(4, 4, 255);
    PFrameRec rec{MotionVectorGrid(1, 1), ResidualPlane(4, 4)};
    rec.residual.at(2, 1, 1) = 1;
    DecodeFault f;
    EXPECT_EQ(code_of([&] { (void)decode_pframe(ref, rec, 4, &f); }), Errc::ValueOverflow);
    EXPECT_EQ(f.x, 2u);
    EXPECT_EQ(f.y, 1u);
    EXPECT_EQ(f.channel, 1);
}

TEST(Stream, PartitionsIntoGops) {
    std::mt19937_64 rng(9);
    auto check = [&](std::size_t frames, std::vector<std::size_t> pcounts) {
        const auto v = testutil::random_video(8, 8, frames, rng);
        const auto s = encode_gop_stream(v, {8, 4, 2});
        ASSERT_EQ(s.gops.size(), pcounts.size());
        for (std::size_t g = 0; g < pcounts.size(); ++g) {
            EXPECT_EQ(s.gops[g].pframes.size(), pcounts[g]);
            EXPECT_EQ(s.gops[g].iframe, v.frames[g * 8]);
        }
        EXPECT_EQ(s.frame_count(), frames);
    };
    check(16, {7, 7});
    check(1, {0});
    check(9, {7, 0});
}

TEST(Stream, LosslessOnRandomVideos) {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 20; ++i) {
        const std::uint32_t w = 4 * (1 + rng() % 8), h = 4 * (1 + rng() % 8);
        const auto v = testutil::random_video(w, h, 1 + rng() % 12, rng);
        const auto s = encode_gop_stream(v, {1 + std::uint32_t(rng() % 8), 4, std::uint32_t(rng() % 5)});
        EXPECT_EQ(decode_gop_stream(s), v);
    }
}

TEST(Stream, IdenticalFramesGiveZeroMotionAndResidual) {
    std::mt19937_64 rng(11);
    RawVideo v{16, 16, 4, {}};
    const auto f = testutil::random_frame(16, 16, rng);
    for (int i = 0; i < 10; ++i) v.frames.push_back(f);
    const auto s = encode_gop_stream(v);
    for (const auto& g : s.gops)
        for (const auto& p : g.pframes) {
            EXPECT_TRUE(p.mv.all_zero());
            EXPECT_TRUE(p.residual.all_zero());
        }
}

TEST(Stream, IntraOnlyStreamDecodesToIFrames) {
    std::mt19937_64 rng(12);
    const auto v = testutil::random_video(8, 8, 5, rng);
    const auto s = encode_gop_stream(v, {1, 4, 8});
    EXPECT_EQ(s.gops.size(), 5u);
    EXPECT_EQ(decode_gop_stream(s), v);
}

TEST(Stream, TamperedResidualOverflowReportsLocation) {
    RawVideo v{8, 8, 4, {FrameRGB(8, 8, 250), FrameRGB(8, 8, 250), FrameRGB(8, 8, 250)}};
    auto s = encode_gop_stream(v);
    s.gops[0].pframes[1].residual.at(5, 6, 2) = 10;
    StreamFault f;
    EXPECT_EQ(code_of([&] { (void)decode_gop_stream(s, &f); }), Errc::ValueOverflow);
    EXPECT_EQ(f.gop, 0u);
    EXPECT_EQ(f.pframe, 1u);
    EXPECT_EQ(f.pixel.x, 5u);
    EXPECT_EQ(f.pixel.y, 6u);
    EXPECT_EQ(f.pixel.channel, 2);
}

TEST(Stream, ResidualsBoundedAndVectorsWithinRadius) {
    std::mt19937_64 rng(13);
    const auto v = testutil::random_video(20, 12, 9, rng);
    const auto s = encode_gop_stream(v, {4, 4, 3});
    for (const auto& g : s.gops)
        for (const auto& p : g.pframes) {
            for (auto r : p.residual.values) {
                EXPECT_GE(r, -255);
                EXPECT_LE(r, 255);
            }
            for (auto m : p.mv.entries) {
                EXPECT_LE(std::abs(m.dx), 3);
                EXPECT_LE(std::abs(m.dy), 3);
            }
        }
}

TEST(Gsc, RoundTripsStructurallyAndByteExactly) {
    std::mt19937_64 rng(14);
    for (int i = 0; i < 10; ++i) {
        const auto v = testutil::random_video(16, 8, 1 + rng() % 10, rng);
        const auto s = encode_gop_stream(v, {3, 4, 4});
        const auto bytes = serialize_gsc(s);
        const auto back = deserialize_gsc(bytes);
        EXPECT_EQ(back, s);
        EXPECT_EQ(serialize_gsc(back), bytes);
    }
}

TEST(Gsc, HeaderLayoutMatchesFormat) {
    RawVideo v{8, 4, 4, {FrameRGB(8, 4, 1), FrameRGB(8, 4, 1)}};
    const auto bytes = serialize_gsc(encode_gop_stream(v));
    ASSERT_GE(bytes.size(), 24u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GSC1");
    EXPECT_EQ(bytes[4], 8);
    EXPECT_EQ(bytes[8], 4);
    EXPECT_EQ(bytes[12], 4);
    EXPECT_EQ(bytes[16], 1);
    EXPECT_EQ(bytes[20], 4);
    EXPECT_EQ(bytes[21], 8);
    // header 24 + pcount 2 + I-frame 96 + 2 MVs x 2 bytes + 3 planes x one (32, 0) record.
    EXPECT_EQ(bytes.size(), 24u + 2 + 96 + 4 + 3 * 4);
}

TEST(Gsc, ZeroRleHandlesLongRunsAndLiteralBlocks) {
    // A 300x300 plane of zeros exceeds one u16 run and needs split records.
    GopStream s;
    s.width = 300;
    s.height = 300;
    s.fps = 1;
    s.gops.push_back({FrameRGB(300, 300, 100), {}});
    PFrameRec rec{MotionVectorGrid(75, 75), ResidualPlane(300, 300)};
    rec.residual.values[70000] = -3;
    rec.residual.values[70001] = 5;
    rec.residual.values[89999] = 1;
    s.gops[0].pframes.push_back(rec);
    const auto bytes = serialize_gsc(s);
    EXPECT_EQ(deserialize_gsc(bytes), s);
}

TEST(Gsc, RejectsBadMagicTruncationAndOversizedVectors) {
    RawVideo v{8, 8, 4, {FrameRGB(8, 8, 1), FrameRGB(8, 8, 2)}};
    auto bytes = serialize_gsc(encode_gop_stream(v));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_EQ(code_of([&] { (void)deserialize_gsc(bad); }), Errc::BadMagic);

    auto cut = bytes;
    cut.resize(cut.size() - 3);
    EXPECT_EQ(code_of([&] { (void)deserialize_gsc(cut); }), Errc::TruncatedStream);

    // Radius 8 in the header, then a 9 in the first MV.
    auto far = bytes;
    const std::size_t mv_at = 24 + 2 + 8 * 8 * 3;
    far[mv_at] = 9;
    try {
        (void)deserialize_gsc(far);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::VectorExceedsRadius);
        EXPECT_EQ(e.offset().value(), mv_at);
    }
}

TEST(Gsc, LayoutLocatesResidualLiterals) {
    std::mt19937_64 rng(15);
    const auto v = testutil::random_video(16, 16, 4, rng);
    const auto s = encode_gop_stream(v);
    const auto bytes = serialize_gsc(s);
    GscLayout layout;
    (void)deserialize_gsc(bytes, &layout);
    const auto& res = s.gops[0].pframes[2].residual;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < res.plane_size(); ++i) {
            const auto val = res.values[c * res.plane_size() + i];
            if (val == 0) continue;
            const std::size_t off = layout.residual_offset(0, 2, c, i);
            std::int16_t stored;
            std::memcpy(&stored, bytes.data() + off, 2);
            ASSERT_EQ(stored, val);
        }
}

TEST(Gsc, SerializationIsDeterministic) {
    std::mt19937_64 a(16), b(16);
    const auto va = testutil::random_video(12, 12, 6, a);
    const auto vb = testutil::random_video(12, 12, 6, b);
    EXPECT_EQ(serialize_gsc(encode_gop_stream(va)), serialize_gsc(encode_gop_stream(vb)));
}
