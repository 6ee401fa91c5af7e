#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gopstream/error.hpp"
#include "gopstream/gop_codec.hpp"

namespace gopstream {

/// One macroblock displacement in absolute pixel coordinates: the block whose
/// top-left corner is (x_src, y_src) in the current frame matched the
/// reference block at (x_dst, y_dst).
struct MotionEntry {
    std::int32_t x_src = 0, y_src = 0, x_dst = 0, y_dst = 0;
    friend bool operator==(const MotionEntry&, const MotionEntry&) = default;
};

using MotionList = std::vector<MotionEntry>;

/// Dense (mh, mw, 2) displacement field. Channel 0 is dx, channel 1 is dy.
/// `t` is the 1-based time slot inside the GOP.
struct MotionMatrix {
    std::uint32_t mw = 0;
    std::uint32_t mh = 0;
    std::uint32_t t = 1;
    std::vector<double> data;

    MotionMatrix() = default;
    MotionMatrix(std::uint32_t w, std::uint32_t h, std::uint32_t time = 1)
        : mw(w), mh(h), t(time), data(std::size_t{w} * h * 2, 0.0) {}

    double at(std::uint32_t row, std::uint32_t col, int c) const {
        return data[(std::size_t{row} * mw + col) * 2 + static_cast<std::size_t>(c)];
    }
    double& at(std::uint32_t row, std::uint32_t col, int c) {
        return data[(std::size_t{row} * mw + col) * 2 + static_cast<std::size_t>(c)];
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data) {
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    friend bool operator==(const MotionMatrix&, const MotionMatrix&) = default;
};

/// How the positional slot of a sampled motion frame is chosen.
enum class TimeIndexMode {
    sampled,   // position in the sampled sequence (1..M)
    original,  // 1-based index of the P-frame inside its GOP
};

inline MotionMatrix blank_motion(std::uint32_t mw, std::uint32_t mh) {
    require(mw > 0 && mh > 0, Errc::ZeroDimension, "blank_motion: dimensions must be positive");
    return MotionMatrix(mw, mh, 1);
}

inline MotionMatrix list_to_matrix(const MotionList& list, std::uint32_t frame_w, std::uint32_t frame_h,
                                   std::uint32_t block_size) {
    require(block_size > 0 && frame_w % block_size == 0 && frame_h % block_size == 0, Errc::NonDivisibleDims,
            "list_to_matrix: block size must divide frame dimensions");
    MotionMatrix m(frame_w / block_size, frame_h / block_size);
    const auto w = static_cast<std::int64_t>(frame_w);
    const auto h = static_cast<std::int64_t>(frame_h);
    const auto bs = static_cast<std::int64_t>(block_size);
    for (const auto& e : list) {
        const bool in_bounds = e.x_src >= 0 && e.y_src >= 0 && e.x_src < w && e.y_src < h && e.x_dst >= 0 &&
                               e.y_dst >= 0 && e.x_dst < w && e.y_dst < h;
        if (!in_bounds) {
            throw Error(Errc::OutOfBounds, "motion entry (" + std::to_string(e.x_src) + "," + std::to_string(e.y_src) +
                                               ")->(" + std::to_string(e.x_dst) + "," + std::to_string(e.y_dst) +
                                               ") lies outside the frame");
        }
        if (e.x_src % bs != 0 || e.y_src % bs != 0) {
            throw Error(Errc::MisalignedSource, "source (" + std::to_string(e.x_src) + "," +
                                                    std::to_string(e.y_src) + ") is not on the macroblock grid");
        }
        const auto row = static_cast<std::uint32_t>(e.y_src / bs);
        const auto col = static_cast<std::uint32_t>(e.x_src / bs);
        m.at(row, col, 0) = static_cast<double>(e.x_dst - e.x_src);
        m.at(row, col, 1) = static_cast<double>(e.y_dst - e.y_src);
    }
    return m;
}

/// Zero vectors are omitted; list_to_matrix restores them by zero fill.
inline MotionList grid_to_list(const MotionVectorGrid& grid, std::uint32_t block_size) {
    MotionList out;
    for (std::uint32_t by = 0; by < grid.grid_h; ++by) {
        for (std::uint32_t bx = 0; bx < grid.grid_w; ++bx) {
            const auto v = grid.at(bx, by);
            if (v.dx == 0 && v.dy == 0) {
                continue;
            }
            const auto x = static_cast<std::int32_t>(bx * block_size);
            const auto y = static_cast<std::int32_t>(by * block_size);
            out.push_back({x, y, x + v.dx, y + v.dy});
        }
    }
    return out;
}

inline MotionMatrix densify_grid(const MotionVectorGrid& grid, std::uint32_t block_size) {
    return list_to_matrix(grid_to_list(grid, block_size), grid.grid_w * block_size, grid.grid_h * block_size,
                          block_size);
}

/// Bilinear resize (pixel-center alignment, no rounding). Displacements are
/// rescaled so they stay expressed in destination-grid units.
inline MotionMatrix resize_motion(const MotionMatrix& m, std::uint32_t out_w, std::uint32_t out_h) {
    require(out_w > 0 && out_h > 0, Errc::ZeroDimension, "resize_motion: target must be positive");
    require(m.mw > 0 && m.mh > 0, Errc::ZeroDimension, "resize_motion: empty source");
    if (out_w == m.mw && out_h == m.mh) {
        return m;
    }
    const double sx = static_cast<double>(out_w) / m.mw;
    const double sy = static_cast<double>(out_h) / m.mh;

    struct Tap {
        std::uint32_t lo, hi;
        double w;
    };
    auto taps = [](std::uint32_t in, std::uint32_t out) {
        std::vector<Tap> t(out);
        for (std::uint32_t i = 0; i < out; ++i) {
            const double num = static_cast<double>((2 * std::int64_t{i} + 1) * in) - out;
            const double s = std::clamp(num / (2.0 * out), 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::uint32_t>(std::floor(s));
            t[i] = {lo, std::min(lo + 1, in - 1), s - lo};
        }
        return t;
    };
    const auto tx = taps(m.mw, out_w);
    const auto ty = taps(m.mh, out_h);

    MotionMatrix out(out_w, out_h, m.t);
    for (std::uint32_t r = 0; r < out_h; ++r) {
        const auto& vy = ty[r];
        for (std::uint32_t c = 0; c < out_w; ++c) {
            const auto& vx = tx[c];
            for (int ch = 0; ch < 2; ++ch) {
                const double top = (1.0 - vx.w) * m.at(vy.lo, vx.lo, ch) + vx.w * m.at(vy.lo, vx.hi, ch);
                const double bot = (1.0 - vx.w) * m.at(vy.hi, vx.lo, ch) + vx.w * m.at(vy.hi, vx.hi, ch);
                out.at(r, c, ch) = ((1.0 - vy.w) * top + vy.w * bot) * (ch == 0 ? sx : sy);
            }
        }
    }
    return out;
}

inline MotionMatrix normalize_motion(const MotionMatrix& m, double radius) {
    require(radius > 0.0, Errc::Precondition, "normalize_motion: radius must be positive");
    MotionMatrix out = m;
    for (double& v : out.data) {
        v = std::clamp(v / radius, -1.0, 1.0);
    }
    return out;
}

/// Resize to the encoder input grid, then normalize by the search radius
/// expressed in destination-grid units so values stay within [-1, 1].
inline MotionMatrix condition_motion(const MotionMatrix& m, std::uint32_t out_w, std::uint32_t out_h,
                                     double search_radius) {
    const double scale = std::max(static_cast<double>(out_w) / m.mw, static_cast<double>(out_h) / m.mh);
    return normalize_motion(resize_motion(m, out_w, out_h), search_radius * scale);
}

/// Uniform selection i_j = floor(j * count / max_m), or every index when
/// count <= max_m.
inline std::vector<std::size_t> uniform_sample_indices(std::size_t count, std::size_t max_m) {
    require(max_m >= 1, Errc::Precondition, "sample count must be >= 1");
    std::vector<std::size_t> idx;
    if (count <= max_m) {
        for (std::size_t i = 0; i < count; ++i) {
            idx.push_back(i);
        }
        return idx;
    }
    for (std::size_t j = 0; j < max_m; ++j) {
        idx.push_back(j * count / max_m);
    }
    return idx;
}

inline std::vector<MotionMatrix> sample_motion_frames(const Gop& gop, std::size_t max_m, std::uint32_t block_size,
                                                      TimeIndexMode mode = TimeIndexMode::sampled) {
    const auto idx = uniform_sample_indices(gop.pframes.size(), max_m);
    std::vector<MotionMatrix> out;
    out.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        MotionMatrix m = densify_grid(gop.pframes[idx[j]].mv, block_size);
        m.t = static_cast<std::uint32_t>(mode == TimeIndexMode::sampled ? j + 1 : idx[j] + 1);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace gopstream
