#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gopstream/bytes.hpp"
#include "gopstream/error.hpp"
#include "gopstream/nn.hpp"
#include "gopstream/parallel.hpp"
#include "gopstream/video_io.hpp"

namespace gopstream {

enum class MotionCategory { Linear, Curved, Rotation, Contact };

inline constexpr std::array<MotionCategory, 4> kCategories = {MotionCategory::Linear, MotionCategory::Curved,
                                                               MotionCategory::Rotation, MotionCategory::Contact};

inline std::string_view to_string(MotionCategory c) {
    switch (c) {
        case MotionCategory::Linear: return "linear";
        case MotionCategory::Curved: return "curved";
        case MotionCategory::Rotation: return "rotation";
        case MotionCategory::Contact: return "contact";
    }
    return "?";
}

/// Column header used in accuracy tables.
inline std::string_view short_name(MotionCategory c) {
    switch (c) {
        case MotionCategory::Linear: return "Lin.";
        case MotionCategory::Curved: return "Cur.";
        case MotionCategory::Rotation: return "Rot.";
        case MotionCategory::Contact: return "Con.";
    }
    return "?";
}

inline MotionCategory parse_category(std::string_view s) {
    for (auto c : kCategories) {
        if (s == to_string(c)) return c;
    }
    throw Error(Errc::UnknownMode, "unknown motion category '" + std::string(s) + "'");
}

struct Vec2 {
    double x = 0, y = 0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::hypot(x, y); }
};

/// Everything needed to re-render a clip. Positions are sprite centers in
/// pixel units with y pointing down.
struct TrajectoryParams {
    std::uint32_t sprite = 8;  // square side
    Vec2 a0;                   // primary sprite start
    bool has_b = false;        // second sprite present
    Vec2 b0;
    Vec2 velocity;            // linear / contact (per frame); curved uses x only
    double gravity = 0;       // curved: vertical acceleration, px/frame^2
    std::uint32_t apex = 0;   // curved: frame of vertical turnaround
    Vec2 center;              // rotation orbit center
    double radius = 0;
    double omega = 0;         // rad/frame, clockwise on screen
    double phase = 0;         // start angle, y-up convention
    std::uint32_t contact_frame = 0;
};

struct SynthOptions {
    std::uint32_t canvas = 64;
    std::uint32_t frames = 16;
    std::uint32_t fps = 4;
    bool shared_start = false;
    std::optional<double> speed;  // px/frame; sampled when unset
};

struct SynthClip {
    RawVideo video;
    MotionCategory label = MotionCategory::Linear;
    TrajectoryParams params;
    std::uint64_t seed = 0;
};

/// Analytic sprite centers at frame t.
inline Vec2 sprite_a_at(MotionCategory c, const TrajectoryParams& p, double t) {
    switch (c) {
        case MotionCategory::Linear: return p.a0 + p.velocity * t;
        case MotionCategory::Curved: {
            const double dy = p.gravity / 2 * (t * t - 2.0 * p.apex * t);
            return {p.a0.x + p.velocity.x * t, p.a0.y + dy};
        }
        case MotionCategory::Rotation: {
            const double phi = p.phase - p.omega * t;
            return {p.center.x + p.radius * std::cos(phi), p.center.y - p.radius * std::sin(phi)};
        }
        case MotionCategory::Contact: {
            const double tc = p.contact_frame;
            return t <= tc ? p.a0 + p.velocity * t : p.a0 + p.velocity * (2 * tc - t);
        }
    }
    return p.a0;
}

inline Vec2 sprite_b_at(MotionCategory c, const TrajectoryParams& p, double t) {
    if (c != MotionCategory::Contact) return p.b0;
    const double tc = p.contact_frame;
    return t <= tc ? p.b0 - p.velocity * t : p.b0 - p.velocity * (2 * tc - t);
}

namespace synth_detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::string_view tag) { return ad::param_stream(seed, tag); }

/// Top-left pixel of a sprite centered at c.
inline std::array<std::int64_t, 2> origin(Vec2 c, std::uint32_t size) {
    return {static_cast<std::int64_t>(std::lround(c.x - size / 2.0)),
            static_cast<std::int64_t>(std::lround(c.y - size / 2.0))};
}

inline bool fits(Vec2 c, std::uint32_t size, std::uint32_t canvas) {
    const auto o = origin(c, size);
    const auto hi = static_cast<std::int64_t>(canvas) - static_cast<std::int64_t>(size);
    return o[0] >= 0 && o[1] >= 0 && o[0] <= hi && o[1] <= hi;
}

inline bool path_fits(MotionCategory c, const TrajectoryParams& p, std::uint32_t canvas, std::uint32_t frames) {
    for (std::uint32_t t = 0; t < frames; ++t) {
        if (!fits(sprite_a_at(c, p, t), p.sprite, canvas)) return false;
        if (p.has_b && !fits(sprite_b_at(c, p, t), p.sprite, canvas)) return false;
    }
    return true;
}

/// Integer lattice velocities with speed in [lo, hi].
inline std::vector<Vec2> lattice(double lo, double hi) {
    std::vector<Vec2> out;
    for (int y = -4; y <= 4; ++y)
        for (int x = -4; x <= 4; ++x) {
            const double s = std::hypot(x, y);
            if (s >= lo && s <= hi) out.push_back({double(x), double(y)});
        }
    return out;
}

inline Vec2 compass(int k) {
    const double a = k * std::numbers::pi / 4;
    return {std::round(std::cos(a) * 1e9) / 1e9, std::round(std::sin(a) * 1e9) / 1e9};
}

/// Offset between touching square sprites moving along v.
inline Vec2 contact_gap(Vec2 v, std::uint32_t size) {
    const double m = std::max(std::abs(v.x), std::abs(v.y));
    return v * (size / m);
}

// Low-amplitude value noise: gray lattice every 8 px, bilinear in between.
inline FrameRGB background(std::uint32_t canvas, std::uint64_t seed) {
    auto rng = stream(seed, "background");
    std::uniform_int_distribution<int> level(90, 130);
    const std::uint32_t cell = 8, n = canvas / cell + 2;
    std::vector<int> lat(std::size_t{n} * n);
    for (auto& v : lat) v = level(rng);
    FrameRGB f(canvas, canvas);
    for (std::uint32_t y = 0; y < canvas; ++y) {
        for (std::uint32_t x = 0; x < canvas; ++x) {
            const double fx = double(x) / cell, fy = double(y) / cell;
            const auto ix = static_cast<std::uint32_t>(fx), iy = static_cast<std::uint32_t>(fy);
            const double wx = fx - ix, wy = fy - iy;
            auto at = [&](std::uint32_t a, std::uint32_t b) { return double(lat[std::size_t{b} * n + a]); };
            const double v = (1 - wy) * ((1 - wx) * at(ix, iy) + wx * at(ix + 1, iy)) +
                             wy * ((1 - wx) * at(ix, iy + 1) + wx * at(ix + 1, iy + 1));
            const auto g = static_cast<std::uint8_t>(std::lround(v));
            f.at(x, y, 0) = g;
            f.at(x, y, 1) = g;
            f.at(x, y, 2) = static_cast<std::uint8_t>(g + 8);
        }
    }
    return f;
}

// Sprite textures: sprite A is red-dominant (R >= 200, B <= 60), sprite B
// blue-dominant (B >= 200, R <= 60). Green carries per-pixel texture so block
// matching is unambiguous inside the sprite.
inline std::vector<std::array<std::uint8_t, 3>> texture(std::uint32_t size, std::uint64_t seed, bool second) {
    auto rng = stream(seed, second ? "sprite_b" : "sprite_a");
    std::uniform_int_distribution<int> hi(200, 255), lo(0, 60), green(0, 255);
    std::vector<std::array<std::uint8_t, 3>> px(std::size_t{size} * size);
    for (auto& p : px) {
        const auto h = static_cast<std::uint8_t>(hi(rng)), l = static_cast<std::uint8_t>(lo(rng));
        p = second ? std::array<std::uint8_t, 3>{l, static_cast<std::uint8_t>(green(rng)), h}
                   : std::array<std::uint8_t, 3>{h, static_cast<std::uint8_t>(green(rng)), l};
    }
    return px;
}

inline void stamp(FrameRGB& f, Vec2 c, std::uint32_t size, const std::vector<std::array<std::uint8_t, 3>>& tex) {
    const auto o = origin(c, size);
    for (std::uint32_t y = 0; y < size; ++y)
        for (std::uint32_t x = 0; x < size; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                f.at(static_cast<std::uint32_t>(o[0] + x), static_cast<std::uint32_t>(o[1] + y), ch) =
                    tex[std::size_t{y} * size + x][static_cast<std::size_t>(ch)];
            }
}

inline void check_options(const SynthOptions& o) {
    require(o.canvas >= 32 && o.canvas % 4 == 0, Errc::NonDivisibleDims,
            "canvas must be a multiple of 4 and at least 32");
    require(o.frames >= 8, Errc::Precondition, "clips need at least 8 frames");
    require(o.fps > 0, Errc::Precondition, "fps must be positive");
    if (o.speed) {
        const double s = *o.speed;
        if (!std::isfinite(s) || s <= 0) {
            throw Error(Errc::DegenerateTrajectory, "sprite speed must be positive");
        }
        require(s >= 1 && s <= 4, Errc::Precondition, "sprite speed must lie in [1, 4] px/frame");
    }
}

}  // namespace synth_detail

/// Renders a clip from explicit parameters. Every frame is checked against
/// the canvas; a zero-motion trajectory is rejected.
inline SynthClip render_clip(MotionCategory c, const TrajectoryParams& p, std::uint64_t seed,
                             const SynthOptions& opt = {}) {
    using namespace synth_detail;
    check_options(opt);
    const bool still = (c == MotionCategory::Rotation) ? (p.omega == 0 || p.radius == 0)
                       : (c == MotionCategory::Curved) ? (p.velocity.x == 0 && p.gravity == 0)
                                                       : p.velocity.norm() == 0;
    if (still) throw Error(Errc::DegenerateTrajectory, std::string(to_string(c)) + " trajectory has zero speed");
    if (!path_fits(c, p, opt.canvas, opt.frames)) {
        throw Error(Errc::SpriteOutOfCanvas, std::string(to_string(c)) + " sprite leaves the " +
                                                 std::to_string(opt.canvas) + "px canvas");
    }
    const auto bg = background(opt.canvas, seed);
    const auto tex_a = texture(p.sprite, seed, false);
    const auto tex_b = texture(p.sprite, seed, true);
    SynthClip clip{{opt.canvas, opt.canvas, opt.fps, {}}, c, p, seed};
    for (std::uint32_t t = 0; t < opt.frames; ++t) {
        FrameRGB f = bg;
        if (p.has_b) stamp(f, sprite_b_at(c, p, t), p.sprite, tex_b);
        stamp(f, sprite_a_at(c, p, t), p.sprite, tex_a);
        clip.video.frames.push_back(std::move(f));
    }
    return clip;
}

/// Samples trajectory parameters for one clip. The layout (sprite size and
/// start positions) depends on the seed only, so under shared_start the first
/// frame is the same for every category.
inline TrajectoryParams sample_params(MotionCategory c, std::uint64_t seed, const SynthOptions& opt) {
    using namespace synth_detail;
    check_options(opt);
    const double canvas = opt.canvas;
    const std::uint32_t last = opt.frames - 1;
    const std::uint32_t tc = last / 2;

    TrajectoryParams p;
    auto lay = stream(seed, "layout");
    p.sprite = (lay() % 3 == 0) ? 10 : 8;  // >= 8 so a 4x4 block always fits inside
    // Contact velocity fixes where both sprites start.
    Vec2 vc;
    if (opt.speed) {
        vc = compass(static_cast<int>(lay() % 8)) * *opt.speed;
    } else {
        const auto cands = lattice(1.0, 2.3);
        vc = cands[lay() % cands.size()];
    }
    const Vec2 gap = contact_gap(vc, p.sprite);
    const Vec2 span = vc * (2.0 * tc) + gap;
    std::uniform_real_distribution<double> jitter(-3.0, 3.0);
    const Vec2 mid{canvas / 2 + jitter(lay), canvas / 2 + jitter(lay)};
    p.a0 = mid - span * 0.5;
    p.a0 = {std::round(p.a0.x), std::round(p.a0.y)};
    p.b0 = p.a0 + span;
    p.has_b = opt.shared_start || c == MotionCategory::Contact;
    p.contact_frame = tc;

    auto rng = stream(seed, std::string("trajectory.") + std::string(to_string(c)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto fits_now = [&] { return path_fits(c, p, opt.canvas, opt.frames); };

    switch (c) {
        case MotionCategory::Contact:
            p.velocity = vc;
            break;
        case MotionCategory::Linear: {
            std::vector<Vec2> ok;
            const auto cands = opt.speed ? std::vector<Vec2>{} : lattice(1.0, 4.0);
            if (opt.speed) {
                for (int k = 0; k < 8; ++k) {
                    p.velocity = compass(k) * *opt.speed;
                    if (fits_now()) ok.push_back(p.velocity);
                }
            } else {
                for (auto v : cands) {
                    p.velocity = v;
                    if (fits_now()) ok.push_back(v);
                }
            }
            if (ok.empty()) throw Error(Errc::SpriteOutOfCanvas, "no linear direction keeps the sprite on canvas");
            p.velocity = ok[rng() % ok.size()];
            break;
        }
        case MotionCategory::Curved: {
            p.apex = tc;
            std::vector<std::pair<double, double>> ok;
            const std::vector<double> vxs = opt.speed ? std::vector<double>{*opt.speed, -*opt.speed}
                                                      : std::vector<double>{1, 2, -1, -2};
            const double g = 0.2 + 0.15 * unit(rng);
            for (double vx : vxs)
                for (double sg : {g, -g}) {
                    p.velocity = {vx, 0};
                    p.gravity = sg;
                    if (fits_now()) ok.emplace_back(vx, sg);
                }
            if (ok.empty()) throw Error(Errc::SpriteOutOfCanvas, "no parabola keeps the sprite on canvas");
            const auto pick = ok[rng() % ok.size()];
            p.velocity = {pick.first, 0};
            p.gravity = pick.second;
            break;
        }
        case MotionCategory::Rotation: {
            const double toward = std::atan2(canvas / 2 - p.a0.y, canvas / 2 - p.a0.x);
            bool found = false;
            for (int attempt = 0; attempt < 256 && !found; ++attempt) {
                p.radius = 8 + 4 * unit(rng);
                p.omega = opt.speed ? *opt.speed / p.radius : 0.24 + 0.09 * unit(rng);
                const double dir = toward + (unit(rng) - 0.5) * std::numbers::pi / 2;
                p.center = p.a0 + Vec2{std::cos(dir), std::sin(dir)} * p.radius;
                // Angle of a0 about the center, y-up.
                p.phase = std::atan2(-(p.a0.y - p.center.y), p.a0.x - p.center.x);
                found = fits_now();
            }
            if (!found) throw Error(Errc::SpriteOutOfCanvas, "no orbit keeps the sprite on canvas");
            break;
        }
    }
    return p;
}

inline SynthClip generate(MotionCategory c, std::uint64_t seed, const SynthOptions& opt = {}) {
    return render_clip(c, sample_params(c, seed, opt), seed, opt);
}

// ---------------------------------------------------------------------------
// Datasets

enum class Split { train, val };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct DatasetEntry {
    SynthClip clip;
    Split split = Split::train;
    std::string file;
};

struct SynthDataset {
    std::vector<DatasetEntry> entries;
    std::uint64_t seed = 0;
    SynthOptions options;

    std::vector<const DatasetEntry*> subset(Split s) const {
        std::vector<const DatasetEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }
};

/// Seed of the i-th clip slot. All four categories share it, which is what
/// makes shared_start first frames identical within a slot.
inline std::uint64_t clip_seed(std::uint64_t dataset_seed, std::size_t slot) {
    return ad::splitmix64(dataset_seed * 0x100000001B3ULL + slot);
}

/// Slots held out for validation: round(per_class / 5) of them, chosen by a
/// seeded shuffle. Every category uses the same slots, so the split is
/// balanced exactly.
inline std::vector<bool> val_slots(std::size_t per_class, std::uint64_t seed) {
    std::vector<std::size_t> order(per_class);
    for (std::size_t i = 0; i < per_class; ++i) order[i] = i;
    auto rng = synth_detail::stream(seed, "split");
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_val = std::max<std::size_t>(1, (per_class + 2) / 5);
    std::vector<bool> val(per_class, false);
    for (std::size_t i = 0; i < n_val; ++i) val[order[i]] = true;
    return val;
}

inline SynthDataset make_dataset(std::size_t per_class, std::uint64_t seed, const SynthOptions& opt = {}) {
    require(per_class >= 2, Errc::Precondition, "make_dataset needs at least 2 clips per class");
    SynthDataset ds;
    ds.seed = seed;
    ds.options = opt;
    ds.entries.resize(per_class * kCategories.size());
    const auto val = val_slots(per_class, seed);
    parallel_for(ds.entries.size(), [&](std::size_t i) {
        const std::size_t slot = i / kCategories.size();
        const auto cat = kCategories[i % kCategories.size()];
        auto& e = ds.entries[i];
        e.clip = generate(cat, clip_seed(seed, slot), opt);
        e.split = val[slot] ? Split::val : Split::train;
        char name[64];
        std::snprintf(name, sizeof name, "clip_%05zu_%s.rvf", slot, std::string(to_string(cat)).c_str());
        e.file = name;
    });
    return ds;
}

inline nlohmann::json params_json(MotionCategory c, const TrajectoryParams& p) {
    nlohmann::json j{{"sprite", p.sprite}, {"a0", {p.a0.x, p.a0.y}}, {"has_b", p.has_b}};
    if (p.has_b) j["b0"] = {p.b0.x, p.b0.y};
    switch (c) {
        case MotionCategory::Linear: j["velocity"] = {p.velocity.x, p.velocity.y}; break;
        case MotionCategory::Curved:
            j["vx"] = p.velocity.x;
            j["gravity"] = p.gravity;
            j["apex"] = p.apex;
            break;
        case MotionCategory::Rotation:
            j["center"] = {p.center.x, p.center.y};
            j["radius"] = p.radius;
            j["omega"] = p.omega;
            j["phase"] = p.phase;
            break;
        case MotionCategory::Contact:
            j["velocity"] = {p.velocity.x, p.velocity.y};
            j["contact_frame"] = p.contact_frame;
            break;
    }
    return j;
}

inline nlohmann::json manifest_json(const SynthDataset& ds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : ds.entries) {
        arr.push_back({{"file", e.file},
                       {"label", to_string(e.clip.label)},
                       {"seed", e.clip.seed},
                       {"split", to_string(e.split)},
                       {"params", params_json(e.clip.label, e.clip.params)}});
    }
    return arr;
}

/// Writes one RVF per clip plus manifest.json into `dir`.
inline void write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& e : ds.entries) write_file((dir / e.file).string(), write_rvf(e.clip.video));
    const auto text = manifest_json(ds).dump(1);
    write_file((dir / "manifest.json").string(),
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Reads a dataset written by write_dataset. Trajectory parameters are not
/// restored; the label, seed, split and frames are.
inline SynthDataset read_dataset(const std::filesystem::path& dir) {
    const auto bytes = read_file((dir / "manifest.json").string());
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::CorruptStream, "manifest.json: " + std::string(e.what()));
    }
    SynthDataset ds;
    for (const auto& row : man) {
        DatasetEntry e;
        e.file = row.at("file").get<std::string>();
        e.clip.label = parse_category(row.at("label").get<std::string>());
        e.clip.seed = row.at("seed").get<std::uint64_t>();
        e.split = row.at("split").get<std::string>() == "val" ? Split::val : Split::train;
        e.clip.video = read_rvf(read_file((dir / e.file).string()));
        ds.entries.push_back(std::move(e));
    }
    if (!ds.entries.empty()) {
        const auto& v = ds.entries.front().clip.video;
        ds.options.canvas = v.width;
        ds.options.frames = static_cast<std::uint32_t>(v.frames.size());
        ds.options.fps = v.fps;
    }
    return ds;
}

}  // namespace gopstream
