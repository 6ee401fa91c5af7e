#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gopstream/bytes.hpp"
#include "gopstream/error.hpp"
#include "gopstream/video_io.hpp"

namespace gopstream {

struct MotionVector {
    std::int8_t dx = 0;
    std::int8_t dy = 0;
    friend bool operator==(const MotionVector&, const MotionVector&) = default;
};

/// One vector per macroblock, row-major over the block grid.
struct MotionVectorGrid {
    std::uint32_t grid_w = 0;
    std::uint32_t grid_h = 0;
    std::vector<MotionVector> entries;

    MotionVectorGrid() = default;
    MotionVectorGrid(std::uint32_t gw, std::uint32_t gh) : grid_w(gw), grid_h(gh), entries(std::size_t{gw} * gh) {}

    const MotionVector& at(std::uint32_t bx, std::uint32_t by) const { return entries[std::size_t{by} * grid_w + bx]; }
    MotionVector& at(std::uint32_t bx, std::uint32_t by) { return entries[std::size_t{by} * grid_w + bx]; }

    bool all_zero() const {
        return std::all_of(entries.begin(), entries.end(), [](const MotionVector& v) { return v.dx == 0 && v.dy == 0; });
    }

    friend bool operator==(const MotionVectorGrid&, const MotionVectorGrid&) = default;
};

/// Per-channel prediction error, stored planar: values[c * w * h + y * w + x].
struct ResidualPlane {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::int16_t> values;

    ResidualPlane() = default;
    ResidualPlane(std::uint32_t w, std::uint32_t h) : width(w), height(h), values(std::size_t{w} * h * 3, 0) {}

    std::size_t plane_size() const { return std::size_t{width} * height; }
    std::size_t index(std::uint32_t x, std::uint32_t y, int c) const {
        return static_cast<std::size_t>(c) * plane_size() + std::size_t{y} * width + x;
    }
    std::int16_t at(std::uint32_t x, std::uint32_t y, int c) const { return values[index(x, y, c)]; }
    std::int16_t& at(std::uint32_t x, std::uint32_t y, int c) { return values[index(x, y, c)]; }

    bool all_zero() const {
        return std::all_of(values.begin(), values.end(), [](std::int16_t v) { return v == 0; });
    }

    friend bool operator==(const ResidualPlane&, const ResidualPlane&) = default;
};

struct PFrameRec {
    MotionVectorGrid mv;
    ResidualPlane residual;
    friend bool operator==(const PFrameRec&, const PFrameRec&) = default;
};

struct Gop {
    FrameRGB iframe;
    std::vector<PFrameRec> pframes;
    friend bool operator==(const Gop&, const Gop&) = default;
};

struct GopStream {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t fps = 0;
    std::uint8_t block_size = 4;
    std::uint8_t search_radius = 8;
    std::vector<Gop> gops;

    std::size_t frame_count() const {
        std::size_t n = 0;
        for (const auto& g : gops) {
            n += 1 + g.pframes.size();
        }
        return n;
    }

    friend bool operator==(const GopStream&, const GopStream&) = default;
};

struct CodecParams {
    std::uint32_t keyframe_interval = 8;
    std::uint32_t block_size = 4;
    std::uint32_t search_radius = 8;
};

namespace detail {

inline void check_block_geometry(std::uint32_t w, std::uint32_t h, std::uint32_t block_size) {
    require(block_size > 0 && block_size <= 255, Errc::Precondition, "block size must be in [1, 255]");
    if (w % block_size != 0 || h % block_size != 0) {
        throw Error(Errc::NonDivisibleDims, "frame " + std::to_string(w) + "x" + std::to_string(h) +
                                                " is not divisible by block size " + std::to_string(block_size));
    }
}

/// Candidate offsets in tie-break priority order: smallest |dx|+|dy|, then dy, then dx.
inline std::vector<std::pair<int, int>> search_order(int radius) {
    std::vector<std::pair<int, int>> offs;
    offs.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            offs.emplace_back(dx, dy);
        }
    }
    std::stable_sort(offs.begin(), offs.end(), [](const auto& a, const auto& b) {
        const int la = std::abs(a.first) + std::abs(a.second);
        const int lb = std::abs(b.first) + std::abs(b.second);
        if (la != lb) return la < lb;
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    return offs;
}

}  // namespace detail

/// Exhaustive SAD block matching. Only offsets whose whole reference block lies
/// inside the frame are candidates. Among equal SADs the first candidate in
/// search_order() wins.
inline MotionVectorGrid estimate_motion(const FrameRGB& cur, const FrameRGB& ref, std::uint32_t block_size,
                                        std::uint32_t radius) {
    if (cur.width != ref.width || cur.height != ref.height) {
        throw Error(Errc::DimMismatch, "current and reference frames differ in size");
    }
    detail::check_block_geometry(cur.width, cur.height, block_size);
    require(radius <= 127, Errc::Precondition, "search radius must fit in int8");

    const int bs = static_cast<int>(block_size);
    const int w = static_cast<int>(cur.width);
    const int h = static_cast<int>(cur.height);
    const auto order = detail::search_order(static_cast<int>(radius));
    const std::size_t row_bytes = static_cast<std::size_t>(w) * 3;

    MotionVectorGrid grid(cur.width / block_size, cur.height / block_size);
    for (int by = 0; by < static_cast<int>(grid.grid_h); ++by) {
        for (int bx = 0; bx < static_cast<int>(grid.grid_w); ++bx) {
            const int x = bx * bs;
            const int y = by * bs;
            long best = std::numeric_limits<long>::max();
            MotionVector best_mv;
            for (const auto& [dx, dy] : order) {
                const int rx = x + dx;
                const int ry = y + dy;
                if (rx < 0 || ry < 0 || rx + bs > w || ry + bs > h) {
                    continue;
                }
                long sad = 0;
                for (int j = 0; j < bs && sad < best; ++j) {
                    const std::uint8_t* c = cur.pixels.data() + static_cast<std::size_t>(y + j) * row_bytes +
                                            static_cast<std::size_t>(x) * 3;
                    const std::uint8_t* r = ref.pixels.data() + static_cast<std::size_t>(ry + j) * row_bytes +
                                            static_cast<std::size_t>(rx) * 3;
                    for (int i = 0; i < bs * 3; ++i) {
                        sad += std::abs(static_cast<int>(c[i]) - static_cast<int>(r[i]));
                    }
                }
                if (sad < best) {
                    best = sad;
                    best_mv = {static_cast<std::int8_t>(dx), static_cast<std::int8_t>(dy)};
                    if (best == 0) {
                        break;
                    }
                }
            }
            grid.at(static_cast<std::uint32_t>(bx), static_cast<std::uint32_t>(by)) = best_mv;
        }
    }
    return grid;
}

/// Motion-compensated prediction: every destination block is copied from the
/// reference block displaced by its vector.
inline FrameRGB predict_frame(const FrameRGB& ref, const MotionVectorGrid& mv, std::uint32_t block_size) {
    detail::check_block_geometry(ref.width, ref.height, block_size);
    if (mv.grid_w * block_size != ref.width || mv.grid_h * block_size != ref.height ||
        mv.entries.size() != std::size_t{mv.grid_w} * mv.grid_h) {
        throw Error(Errc::DimMismatch, "motion grid does not tile the reference frame");
    }
    const int bs = static_cast<int>(block_size);
    const int w = static_cast<int>(ref.width);
    const int h = static_cast<int>(ref.height);
    FrameRGB out(ref.width, ref.height);
    for (std::uint32_t by = 0; by < mv.grid_h; ++by) {
        for (std::uint32_t bx = 0; bx < mv.grid_w; ++bx) {
            const auto v = mv.at(bx, by);
            const int x = static_cast<int>(bx) * bs;
            const int y = static_cast<int>(by) * bs;
            const int sx = x + v.dx;
            const int sy = y + v.dy;
            if (sx < 0 || sy < 0 || sx + bs > w || sy + bs > h) {
                throw Error(Errc::OutOfBoundsVector, "vector (" + std::to_string(v.dx) + "," + std::to_string(v.dy) +
                                                         ") at block (" + std::to_string(bx) + "," +
                                                         std::to_string(by) + ") leaves the frame");
            }
            for (int j = 0; j < bs; ++j) {
                const auto* src = ref.pixels.data() + ref.index(static_cast<std::uint32_t>(sx),
                                                                static_cast<std::uint32_t>(sy + j), 0);
                auto* dst = out.pixels.data() + out.index(static_cast<std::uint32_t>(x),
                                                          static_cast<std::uint32_t>(y + j), 0);
                std::copy(src, src + bs * 3, dst);
            }
        }
    }
    return out;
}

inline ResidualPlane compute_residual(const FrameRGB& actual, const FrameRGB& predicted) {
    if (actual.width != predicted.width || actual.height != predicted.height) {
        throw Error(Errc::DimMismatch, "actual and predicted frames differ in size");
    }
    ResidualPlane res(actual.width, actual.height);
    for (std::uint32_t y = 0; y < actual.height; ++y) {
        for (std::uint32_t x = 0; x < actual.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                res.at(x, y, c) = static_cast<std::int16_t>(static_cast<int>(actual.at(x, y, c)) -
                                                            static_cast<int>(predicted.at(x, y, c)));
            }
        }
    }
    return res;
}

/// Pixel location of a decode failure, used by callers that map it back to
/// a byte offset in the serialized stream.
struct DecodeFault {
    std::uint32_t x = 0, y = 0;
    int channel = 0;
};

inline FrameRGB decode_pframe(const FrameRGB& ref, const PFrameRec& rec, std::uint32_t block_size,
                              DecodeFault* fault = nullptr) {
    if (rec.residual.width != ref.width || rec.residual.height != ref.height ||
        rec.residual.values.size() != rec.residual.plane_size() * 3) {
        throw Error(Errc::DimMismatch, "residual plane does not match reference frame");
    }
    FrameRGB out = predict_frame(ref, rec.mv, block_size);
    for (std::uint32_t y = 0; y < out.height; ++y) {
        for (std::uint32_t x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const int v = static_cast<int>(out.at(x, y, c)) + rec.residual.at(x, y, c);
                if (v < 0 || v > 255) {
                    if (fault != nullptr) {
                        *fault = {x, y, c};
                    }
                    throw Error(Errc::ValueOverflow, "prediction + residual = " + std::to_string(v) + " at pixel (" +
                                                         std::to_string(x) + "," + std::to_string(y) + ") channel " +
                                                         std::to_string(c));
                }
                out.at(x, y, c) = static_cast<std::uint8_t>(v);
            }
        }
    }
    return out;
}

inline PFrameRec encode_pframe(const FrameRGB& cur, const FrameRGB& ref, std::uint32_t block_size,
                               std::uint32_t radius) {
    PFrameRec rec;
    rec.mv = estimate_motion(cur, ref, block_size, radius);
    rec.residual = compute_residual(cur, predict_frame(ref, rec.mv, block_size));
    return rec;
}

/// Splits the video into runs of at most keyframe_interval frames. The first
/// frame of a run is stored verbatim; the rest are predicted from the frame
/// before them.
inline GopStream encode_gop_stream(const RawVideo& video, const CodecParams& params = {}) {
    require(video.valid(), Errc::Precondition, "encode_gop_stream: invalid video");
    require(params.keyframe_interval >= 1, Errc::Precondition, "keyframe interval must be >= 1");
    require(params.search_radius <= 127, Errc::Precondition, "search radius must be <= 127");
    require(params.keyframe_interval <= 65536, Errc::Precondition, "keyframe interval must fit the u16 count field");
    detail::check_block_geometry(video.width, video.height, params.block_size);

    GopStream s;
    s.width = video.width;
    s.height = video.height;
    s.fps = video.fps;
    s.block_size = static_cast<std::uint8_t>(params.block_size);
    s.search_radius = static_cast<std::uint8_t>(params.search_radius);
    for (std::size_t i = 0; i < video.frames.size(); i += params.keyframe_interval) {
        Gop g;
        g.iframe = video.frames[i];
        const std::size_t end = std::min(video.frames.size(), i + params.keyframe_interval);
        for (std::size_t j = i + 1; j < end; ++j) {
            // Lossless coding: the decoded reference equals the source frame.
            g.pframes.push_back(encode_pframe(video.frames[j], video.frames[j - 1], params.block_size,
                                              params.search_radius));
        }
        s.gops.push_back(std::move(g));
    }
    return s;
}

/// Location of a decode failure within the stream's frame sequence.
struct StreamFault {
    std::size_t gop = 0;
    std::size_t pframe = 0;
    DecodeFault pixel;
};

inline std::vector<FrameRGB> decode_gop(const Gop& gop, std::uint32_t block_size, DecodeFault* fault = nullptr,
                                        std::size_t* failed_pframe = nullptr) {
    std::vector<FrameRGB> frames;
    frames.reserve(1 + gop.pframes.size());
    frames.push_back(gop.iframe);
    for (std::size_t p = 0; p < gop.pframes.size(); ++p) {
        if (failed_pframe != nullptr) {
            *failed_pframe = p;
        }
        frames.push_back(decode_pframe(frames.back(), gop.pframes[p], block_size, fault));
    }
    return frames;
}

inline RawVideo decode_gop_stream(const GopStream& stream, StreamFault* fault = nullptr) {
    require(!stream.gops.empty(), Errc::Precondition, "decode_gop_stream: stream has no GOPs");
    RawVideo v;
    v.width = stream.width;
    v.height = stream.height;
    v.fps = stream.fps;
    v.frames.reserve(stream.frame_count());
    for (std::size_t g = 0; g < stream.gops.size(); ++g) {
        const auto& gop = stream.gops[g];
        if (gop.iframe.width != stream.width || gop.iframe.height != stream.height || !gop.iframe.valid()) {
            throw Error(Errc::DimMismatch, "GOP " + std::to_string(g) + " I-frame has wrong dimensions");
        }
        StreamFault local{g, 0, {}};
        try {
            auto frames = decode_gop(gop, stream.block_size, &local.pixel, &local.pframe);
            for (auto& f : frames) {
                v.frames.push_back(std::move(f));
            }
        } catch (const Error&) {
            if (fault != nullptr) {
                *fault = local;
            }
            throw;
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// GSC container

inline constexpr std::string_view kGscMagic = "GSC1";

namespace detail {

/// Zero-run-length coding: (zero_run u16, literal_count u16, literals i16...)
/// records until every value has been emitted. Literals are maximal runs of
/// nonzero values.
inline void put_zero_rle(ByteWriter& w, std::span<const std::int16_t> values) {
    constexpr std::size_t kMax = std::numeric_limits<std::uint16_t>::max();
    std::size_t i = 0;
    const std::size_t n = values.size();
    while (i < n) {
        std::size_t zeros = 0;
        while (i + zeros < n && values[i + zeros] == 0 && zeros < kMax) {
            ++zeros;
        }
        std::size_t lits = 0;
        if (zeros < kMax) {
            const std::size_t start = i + zeros;
            while (start + lits < n && values[start + lits] != 0 && lits < kMax) {
                ++lits;
            }
        }
        w.put<std::uint16_t>(static_cast<std::uint16_t>(zeros));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(lits));
        for (std::size_t k = 0; k < lits; ++k) {
            w.put<std::int16_t>(values[i + zeros + k]);
        }
        i += zeros + lits;
    }
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_gsc(const GopStream& s) {
    require(s.width > 0 && s.height > 0, Errc::Precondition, "serialize_gsc: zero dimension");
    detail::check_block_geometry(s.width, s.height, s.block_size);
    require(s.search_radius <= 127, Errc::Precondition, "serialize_gsc: radius must be <= 127");
    ByteWriter w;
    w.magic(kGscMagic);
    w.put<std::uint32_t>(s.width);
    w.put<std::uint32_t>(s.height);
    w.put<std::uint32_t>(s.fps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.gops.size()));
    w.put<std::uint8_t>(s.block_size);
    w.put<std::uint8_t>(s.search_radius);
    w.put<std::uint16_t>(0);
    const std::uint32_t gw = s.width / s.block_size;
    const std::uint32_t gh = s.height / s.block_size;
    for (const auto& g : s.gops) {
        require(g.pframes.size() <= 65535, Errc::Precondition, "serialize_gsc: too many P-frames in one GOP");
        require(g.iframe.width == s.width && g.iframe.height == s.height && g.iframe.valid(), Errc::Precondition,
                "serialize_gsc: I-frame dimensions differ from stream");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(g.pframes.size()));
        w.raw(g.iframe.pixels);
        for (const auto& p : g.pframes) {
            require(p.mv.grid_w == gw && p.mv.grid_h == gh && p.mv.entries.size() == std::size_t{gw} * gh,
                    Errc::Precondition, "serialize_gsc: motion grid dimensions differ from stream");
            require(p.residual.width == s.width && p.residual.height == s.height &&
                        p.residual.values.size() == p.residual.plane_size() * 3,
                    Errc::Precondition, "serialize_gsc: residual dimensions differ from stream");
            for (const auto& v : p.mv.entries) {
                w.put<std::int8_t>(v.dx);
                w.put<std::int8_t>(v.dy);
            }
            const std::size_t plane = p.residual.plane_size();
            for (int c = 0; c < 3; ++c) {
                detail::put_zero_rle(w, std::span<const std::int16_t>(p.residual.values).subspan(c * plane, plane));
            }
        }
    }
    return w.take();
}

/// Byte positions of every structural element of a parsed GSC stream. Lets
/// tools translate a faulty pixel back to the bytes that produced it.
struct GscLayout {
    struct RleRecord {
        std::size_t first_value = 0;  // index of the first zero in the run
        std::uint16_t zero_run = 0;
        std::uint16_t literal_count = 0;
        std::size_t offset = 0;  // offset of the record header
    };
    struct PFrame {
        std::size_t mv_offset = 0;
        std::array<std::vector<RleRecord>, 3> channels;
    };
    struct GopEntry {
        std::size_t offset = 0;
        std::size_t iframe_offset = 0;
        std::vector<PFrame> pframes;
    };
    std::vector<GopEntry> gops;

    /// Offset of the byte(s) holding residual value `index` of `channel`.
    std::size_t residual_offset(std::size_t gop, std::size_t pframe, int channel, std::size_t index) const {
        const auto& recs = gops.at(gop).pframes.at(pframe).channels.at(static_cast<std::size_t>(channel));
        for (const auto& r : recs) {
            const std::size_t lit_start = r.first_value + r.zero_run;
            if (index < lit_start && index >= r.first_value) {
                return r.offset;
            }
            if (index >= lit_start && index < lit_start + r.literal_count) {
                return r.offset + 4 + 2 * (index - lit_start);
            }
        }
        return recs.empty() ? 0 : recs.back().offset;
    }

    std::size_t mv_offset(std::size_t gop, std::size_t pframe, std::size_t block_index) const {
        return gops.at(gop).pframes.at(pframe).mv_offset + 2 * block_index;
    }
};

inline GopStream deserialize_gsc(std::span<const std::uint8_t> bytes, GscLayout* layout = nullptr) {
    ByteReader r(bytes);
    r.expect_magic(kGscMagic);
    GopStream s;
    const std::size_t dims_at = r.pos();
    s.width = r.get<std::uint32_t>("width");
    s.height = r.get<std::uint32_t>("height");
    s.fps = r.get<std::uint32_t>("fps");
    const auto gop_count = r.get<std::uint32_t>("gop_count");
    const std::size_t bs_at = r.pos();
    s.block_size = r.get<std::uint8_t>("block_size");
    s.search_radius = r.get<std::uint8_t>("search_radius");
    (void)r.get<std::uint16_t>("reserved");
    if (s.width == 0 || s.height == 0) {
        throw Error(Errc::ZeroDimension, "GSC header declares a zero dimension", dims_at);
    }
    if (s.block_size == 0 || s.width % s.block_size != 0 || s.height % s.block_size != 0) {
        throw Error(Errc::NonDivisibleDims, "block size does not divide frame dimensions", bs_at);
    }
    if (s.search_radius > 127) {
        throw Error(Errc::CorruptStream, "search radius exceeds int8 range", bs_at + 1);
    }
    const std::uint32_t gw = s.width / s.block_size;
    const std::uint32_t gh = s.height / s.block_size;
    const std::size_t frame_bytes = std::size_t{s.width} * s.height * 3;
    const std::size_t plane = std::size_t{s.width} * s.height;
    const int radius = s.search_radius;

    s.gops.reserve(std::min<std::size_t>(gop_count, r.remaining() / (frame_bytes + 2) + 1));
    for (std::uint32_t gi = 0; gi < gop_count; ++gi) {
        GscLayout::GopEntry entry;
        entry.offset = r.pos();
        Gop g;
        const auto pcount = r.get<std::uint16_t>("pframe_count");
        entry.iframe_offset = r.pos();
        g.iframe.width = s.width;
        g.iframe.height = s.height;
        auto px = r.raw(frame_bytes, "I-frame pixels");
        g.iframe.pixels.assign(px.begin(), px.end());
        for (std::uint16_t pi = 0; pi < pcount; ++pi) {
            GscLayout::PFrame pl;
            PFrameRec rec;
            rec.mv = MotionVectorGrid(gw, gh);
            pl.mv_offset = r.pos();
            for (auto& v : rec.mv.entries) {
                const std::size_t at = r.pos();
                v.dx = r.get<std::int8_t>("mv dx");
                v.dy = r.get<std::int8_t>("mv dy");
                if (std::abs(v.dx) > radius || std::abs(v.dy) > radius) {
                    throw Error(Errc::VectorExceedsRadius,
                                "vector (" + std::to_string(v.dx) + "," + std::to_string(v.dy) +
                                    ") exceeds search radius " + std::to_string(radius),
                                at);
                }
            }
            rec.residual = ResidualPlane(s.width, s.height);
            for (int c = 0; c < 3; ++c) {
                std::size_t filled = 0;
                auto* out = rec.residual.values.data() + static_cast<std::size_t>(c) * plane;
                while (filled < plane) {
                    const std::size_t rec_at = r.pos();
                    const auto zeros = r.get<std::uint16_t>("zero_run");
                    const auto lits = r.get<std::uint16_t>("literal_count");
                    if (zeros == 0 && lits == 0) {
                        throw Error(Errc::CorruptStream, "empty residual record", rec_at);
                    }
                    if (filled + zeros + lits > plane) {
                        throw Error(Errc::CorruptStream, "residual record overruns the plane", rec_at);
                    }
                    pl.channels[static_cast<std::size_t>(c)].push_back({filled, zeros, lits, rec_at});
                    filled += zeros;
                    for (std::uint16_t k = 0; k < lits; ++k) {
                        const std::size_t lit_at = r.pos();
                        const auto v = r.get<std::int16_t>("residual literal");
                        if (v < -255 || v > 255) {
                            throw Error(Errc::ValueOutOfRange, "residual " + std::to_string(v) + " outside [-255,255]",
                                        lit_at);
                        }
                        out[filled++] = v;
                    }
                }
            }
            g.pframes.push_back(std::move(rec));
            entry.pframes.push_back(std::move(pl));
        }
        s.gops.push_back(std::move(g));
        if (layout != nullptr) {
            layout->gops.push_back(std::move(entry));
        }
    }
    if (!r.at_end()) {
        throw Error(Errc::CorruptStream, "trailing bytes after last GOP", r.pos());
    }
    return s;
}

}  // namespace gopstream
