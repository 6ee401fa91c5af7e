#include <gtest/gtest.h>

#include <random>

#include "gopstream/video_io.hpp"
#include "test_util.hpp"

using namespace gopstream;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> handmade_rvf(std::uint32_t w, std::uint32_t h, std::uint32_t fps, std::uint32_t n) {
    std::vector<std::uint8_t> b = {'R', 'V', 'F', '1'};
    put_u32(b, w);
    put_u32(b, h);
    put_u32(b, fps);
    put_u32(b, n);
    for (std::size_t i = 0; i < std::size_t{w} * h * 3 * n; ++i) b.push_back(static_cast<std::uint8_t>(i * 7 + 3));
    return b;
}

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::Precondition;
}

}  // namespace

TEST(Rvf, ParsesHandBuiltStream) {
    const auto bytes = handmade_rvf(64, 64, 4, 16);
    ASSERT_EQ(bytes.size(), 20u + 16u * 64 * 64 * 3);
    const RawVideo v = read_rvf(bytes);
    EXPECT_EQ(v.width, 64u);
    EXPECT_EQ(v.height, 64u);
    EXPECT_EQ(v.fps, 4u);
    ASSERT_EQ(v.frames.size(), 16u);
    // Pixel (x=1, y=2, c=1) of frame 3 sits at payload index 3*64*64*3 + (2*64+1)*3 + 1.
    const std::size_t idx = 3u * 64 * 64 * 3 + (2u * 64 + 1) * 3 + 1;
    EXPECT_EQ(v.frames[3].at(1, 2, 1), static_cast<std::uint8_t>(idx * 7 + 3));
}

TEST(Rvf, WriteIsByteInverseOfRead) {
    const auto bytes = handmade_rvf(8, 4, 30, 3);
    EXPECT_EQ(write_rvf(read_rvf(bytes)), bytes);
}

TEST(Rvf, RoundTripsRandomVideos) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10; ++i) {
        const auto v = testutil::random_video(4 + 4 * (i % 3), 8, 1 + i % 4, rng);
        const auto bytes = write_rvf(v);
        EXPECT_EQ(bytes.size(), rvf_size(v));
        EXPECT_EQ(read_rvf(bytes), v);
    }
}

TEST(Rvf, RejectsBadMagic) {
    auto bytes = handmade_rvf(4, 4, 1, 1);
    bytes[0] = 'X';
    bytes[1] = 'X';
    bytes[2] = 'X';
    bytes[3] = 'X';
    EXPECT_EQ(code_of([&] { (void)read_rvf(bytes); }), Errc::BadMagic);
}

TEST(Rvf, ReportsTruncationWithOffset) {
    auto bytes = handmade_rvf(4, 4, 1, 2);
    bytes.resize(bytes.size() - 5);
    try {
        (void)read_rvf(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::TruncatedStream);
        ASSERT_TRUE(e.offset().has_value());
        EXPECT_EQ(*e.offset(), 20u + 4 * 4 * 3);
    }
    std::vector<std::uint8_t> header_only = {'R', 'V', 'F', '1', 1, 0};
    EXPECT_EQ(code_of([&] { (void)read_rvf(header_only); }), Errc::TruncatedStream);
}

TEST(Rvf, RejectsZeroDimensionsAndEmptyVideo) {
    EXPECT_EQ(code_of([&] { (void)read_rvf(handmade_rvf(0, 4, 1, 1)); }), Errc::ZeroDimension);
    EXPECT_EQ(code_of([&] { (void)read_rvf(handmade_rvf(4, 0, 1, 1)); }), Errc::ZeroDimension);
    EXPECT_EQ(code_of([&] { (void)read_rvf(handmade_rvf(4, 4, 1, 0)); }), Errc::ZeroDimension);
}

TEST(Rvf, RejectsTrailingBytes) {
    auto bytes = handmade_rvf(4, 4, 1, 1);
    bytes.push_back(0);
    EXPECT_EQ(code_of([&] { (void)read_rvf(bytes); }), Errc::CorruptStream);
}

TEST(Frame, ConstructorRejectsZeroSize) {
    EXPECT_EQ(code_of([] { FrameRGB f(0, 3); }), Errc::ZeroDimension);
}

TEST(Resize, IdentityReturnsInput) {
    std::mt19937_64 rng(2);
    const auto f = testutil::random_frame(12, 8, rng);
    EXPECT_EQ(resize_frame(f, 12, 8), f);
}

TEST(Resize, TwoByTwoToFourByFourMatchesHandEvaluation) {
    // Columns 0 and 1 hold 0 and 255. Output column i samples source
    // x = (i + 0.5) / 2 - 0.5 = {-0.25, 0.25, 0.75, 1.25}, clamped to [0, 1]:
    // weights {0, 0.25, 0.75, 1} -> {0, 63.75, 191.25, 255} -> {0, 64, 191, 255}.
    FrameRGB f(2, 2);
    for (std::uint32_t y = 0; y < 2; ++y)
        for (int c = 0; c < 3; ++c) f.at(1, y, c) = 255;
    const auto out = resize_frame(f, 4, 4);
    const std::uint8_t expect[4] = {0, 64, 191, 255};
    for (std::uint32_t y = 0; y < 4; ++y)
        for (std::uint32_t x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(x, y, c), expect[x]) << x << "," << y;
}

TEST(Resize, MidpointRoundsHalfToEven) {
    // 2 -> 3 columns: the middle output samples x = 0.5 exactly, value 127.5.
    FrameRGB f(2, 1);
    for (int c = 0; c < 3; ++c) f.at(1, 0, c) = 255;
    const auto out = resize_frame(f, 3, 1);
    EXPECT_EQ(out.at(0, 0, 0), 0);
    EXPECT_EQ(out.at(1, 0, 0), 128);
    EXPECT_EQ(out.at(2, 0, 0), 255);
}

TEST(Resize, ConstantFrameStaysConstant) {
    FrameRGB f(5, 7, 93);
    const auto out = resize_frame(f, 13, 3);
    for (auto p : out.pixels) EXPECT_EQ(p, 93);
}

TEST(Resize, OutputWithinSourceRange) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) {
        const auto f = testutil::random_frame(9, 6, rng);
        const auto out = resize_frame(f, 17, 4);
        ASSERT_TRUE(out.valid());
        const auto [lo, hi] = std::minmax_element(f.pixels.begin(), f.pixels.end());
        for (auto p : out.pixels) {
            EXPECT_GE(p, *lo);
            EXPECT_LE(p, *hi);
        }
    }
}

TEST(Resize, RejectsZeroTarget) {
    FrameRGB f(2, 2);
    EXPECT_EQ(code_of([&] { (void)resize_frame(f, 0, 2); }), Errc::ZeroDimension);
}

TEST(Rvf, OneFrameTwoByTwoIsThirtyTwoBytes) {
    RawVideo v;
    v.width = 2;
    v.height = 2;
    v.fps = 4;
    v.frames.emplace_back(2, 2, 9);
    EXPECT_EQ(write_rvf(v).size(), 4u + 16u + 12u);
}

TEST(Rvf, WriteRejectsEmptyFrameList) {
    RawVideo v;
    v.width = 2;
    v.height = 2;
    EXPECT_EQ(code_of([&] { (void)write_rvf(v); }), Errc::Precondition);
}
