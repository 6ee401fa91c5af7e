#pragma once

#include <cstdint>
#include <random>

#include "gopstream/video_io.hpp"

namespace testutil {

inline gopstream::FrameRGB random_frame(std::uint32_t w, std::uint32_t h, std::mt19937_64& rng) {
    gopstream::FrameRGB f(w, h);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& p : f.pixels) p = static_cast<std::uint8_t>(d(rng));
    return f;
}

/// Copies `src` shifted by (sx, sy); uncovered pixels keep `fill_from`.
inline gopstream::FrameRGB shifted(const gopstream::FrameRGB& src, int sx, int sy,
                                   const gopstream::FrameRGB& fill_from) {
    gopstream::FrameRGB out = fill_from;
    for (int y = 0; y < static_cast<int>(src.height); ++y) {
        for (int x = 0; x < static_cast<int>(src.width); ++x) {
            const int ox = x - sx, oy = y - sy;
            if (ox < 0 || oy < 0 || ox >= static_cast<int>(src.width) || oy >= static_cast<int>(src.height)) continue;
            for (int c = 0; c < 3; ++c) {
                out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), c) =
                    src.at(static_cast<std::uint32_t>(ox), static_cast<std::uint32_t>(oy), c);
            }
        }
    }
    return out;
}

/// Mostly smooth video with a few moving squares, so block matching finds
/// real motion and residuals are a mix of zeros and literals.
inline gopstream::RawVideo random_video(std::uint32_t w, std::uint32_t h, std::size_t frames, std::mt19937_64& rng) {
    gopstream::RawVideo v;
    v.width = w;
    v.height = h;
    v.fps = 4;
    gopstream::FrameRGB base = random_frame(w, h, rng);
    std::uniform_int_distribution<int> step(-3, 3);
    std::bernoulli_distribution fresh(0.15);
    for (std::size_t i = 0; i < frames; ++i) {
        if (i == 0 || fresh(rng)) {
            base = random_frame(w, h, rng);
        } else {
            base = shifted(base, step(rng), step(rng), random_frame(w, h, rng));
        }
        v.frames.push_back(base);
    }
    return v;
}

}  // namespace testutil
