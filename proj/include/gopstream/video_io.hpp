#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gopstream/bytes.hpp"
#include "gopstream/error.hpp"

namespace gopstream {

/// Row-major interleaved 8-bit RGB frame.
struct FrameRGB {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;

    FrameRGB() = default;
    FrameRGB(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(std::size_t{w} * h * 3, fill) {
        require(w > 0 && h > 0, Errc::ZeroDimension, "frame dimensions must be positive");
    }

    std::size_t index(std::uint32_t x, std::uint32_t y, int c) const {
        return (std::size_t{y} * width + x) * 3 + static_cast<std::size_t>(c);
    }
    std::uint8_t at(std::uint32_t x, std::uint32_t y, int c) const { return pixels[index(x, y, c)]; }
    std::uint8_t& at(std::uint32_t x, std::uint32_t y, int c) { return pixels[index(x, y, c)]; }

    bool valid() const {
        return width > 0 && height > 0 && pixels.size() == std::size_t{width} * height * 3;
    }

    friend bool operator==(const FrameRGB&, const FrameRGB&) = default;
};

struct RawVideo {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t fps = 0;
    std::vector<FrameRGB> frames;

    bool valid() const {
        if (width == 0 || height == 0 || frames.empty()) {
            return false;
        }
        for (const auto& f : frames) {
            if (f.width != width || f.height != height || !f.valid()) {
                return false;
            }
        }
        return true;
    }

    friend bool operator==(const RawVideo&, const RawVideo&) = default;
};

inline constexpr std::string_view kRvfMagic = "RVF1";
inline constexpr std::size_t kRvfHeaderBytes = 4 + 4 * 4;

inline std::size_t rvf_size(const RawVideo& v) {
    return kRvfHeaderBytes + v.frames.size() * std::size_t{v.width} * v.height * 3;
}

inline std::vector<std::uint8_t> write_rvf(const RawVideo& video) {
    require(video.valid(), Errc::Precondition, "write_rvf: video violates its invariants");
    ByteWriter w;
    w.magic(kRvfMagic);
    w.put<std::uint32_t>(video.width);
    w.put<std::uint32_t>(video.height);
    w.put<std::uint32_t>(video.fps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(video.frames.size()));
    for (const auto& f : video.frames) {
        w.raw(f.pixels);
    }
    return w.take();
}

inline RawVideo read_rvf(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kRvfMagic);
    RawVideo v;
    const std::size_t dims_at = r.pos();
    v.width = r.get<std::uint32_t>("width");
    v.height = r.get<std::uint32_t>("height");
    v.fps = r.get<std::uint32_t>("fps");
    const auto count = r.get<std::uint32_t>("frame_count");
    if (v.width == 0 || v.height == 0) {
        throw Error(Errc::ZeroDimension, "RVF header declares a zero dimension", dims_at);
    }
    if (count == 0) {
        throw Error(Errc::ZeroDimension, "RVF header declares zero frames", dims_at + 12);
    }
    const std::size_t frame_bytes = std::size_t{v.width} * v.height * 3;
    v.frames.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        FrameRGB f;
        f.width = v.width;
        f.height = v.height;
        auto px = r.raw(frame_bytes, "frame pixels");
        f.pixels.assign(px.begin(), px.end());
        v.frames.push_back(std::move(f));
    }
    if (!r.at_end()) {
        throw Error(Errc::CorruptStream, "trailing bytes after last frame", r.pos());
    }
    return v;
}

/// Bilinear resize with pixel-center alignment. Each output sample reads
/// source coordinate (i + 0.5) * in/out - 0.5 clamped to the image, and the
/// blended value is rounded half-to-even.
inline FrameRGB resize_frame(const FrameRGB& frame, std::uint32_t out_w, std::uint32_t out_h) {
    require(out_w > 0 && out_h > 0, Errc::ZeroDimension, "resize target must be positive");
    require(frame.valid(), Errc::Precondition, "resize_frame: invalid source frame");
    if (out_w == frame.width && out_h == frame.height) {
        return frame;
    }

    struct Tap {
        std::uint32_t lo, hi;
        double w;
    };
    auto taps = [](std::uint32_t in, std::uint32_t out) {
        std::vector<Tap> t(out);
        for (std::uint32_t i = 0; i < out; ++i) {
            // (i + 0.5) * in / out - 0.5 in integer form, so exact midpoints stay exact.
            const double num = static_cast<double>((2 * std::int64_t{i} + 1) * in) - out;
            const double s = std::clamp(num / (2.0 * out), 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::uint32_t>(std::floor(s));
            const auto hi = std::min(lo + 1, in - 1);
            t[i] = {lo, hi, s - lo};
        }
        return t;
    };
    const auto tx = taps(frame.width, out_w);
    const auto ty = taps(frame.height, out_h);

    FrameRGB out(out_w, out_h);
    for (std::uint32_t y = 0; y < out_h; ++y) {
        const auto& vy = ty[y];
        for (std::uint32_t x = 0; x < out_w; ++x) {
            const auto& vx = tx[x];
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - vx.w) * frame.at(vx.lo, vy.lo, c) + vx.w * frame.at(vx.hi, vy.lo, c);
                const double bot = (1.0 - vx.w) * frame.at(vx.lo, vy.hi, c) + vx.w * frame.at(vx.hi, vy.hi, c);
                const double v = std::nearbyint((1.0 - vy.w) * top + vy.w * bot);
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
    return out;
}

}  // namespace gopstream
