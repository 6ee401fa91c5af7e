#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gopstream/bytes.hpp"
#include "gopstream/gop_codec.hpp"
#include "gopstream/gop_encoder.hpp"
#include "gopstream/nn.hpp"
#include "gopstream/parallel.hpp"
#include "gopstream/probe.hpp"
#include "gopstream/run_config.hpp"
#include "gopstream/synth_motion.hpp"
#include "gopstream/video_io.hpp"
#include "gopstream/warmup.hpp"

namespace gopstream {

using Json = nlohmann::json;

namespace cmd_detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline bool has_magic(std::span<const std::uint8_t> bytes, std::string_view magic) {
    return bytes.size() >= magic.size() && std::equal(magic.begin(), magic.end(), bytes.begin());
}

inline std::string as_string(std::span<const std::uint8_t> b) { return {b.begin(), b.end()}; }
inline std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace cmd_detail

// ---------------------------------------------------------------------------
// encode / decode / verify

inline Json cmd_encode(const std::string& in, const std::string& out, const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto raw = read_file(in);
    const auto video = read_rvf(raw);
    const auto gsc = serialize_gsc(encode_gop_stream(video, cfg.codec));
    write_file(out, gsc);
    return {{"frames", video.frames.size()},
            {"rvf_bytes", raw.size()},
            {"gsc_bytes", gsc.size()},
            {"ratio", static_cast<double>(gsc.size()) / static_cast<double>(raw.size())},
            {"wall_ms", cmd_detail::ms_since(t0)}};
}

inline Json cmd_decode(const std::string& in, const std::string& out) {
    const auto stream = deserialize_gsc(read_file(in));
    const auto rvf = write_rvf(decode_gop_stream(stream));
    write_file(out, rvf);
    return {{"frames", stream.frame_count()}, {"gops", stream.gops.size()}, {"rvf_bytes", rvf.size()}};
}

struct VerifyReport {
    bool ok = true;
    std::string message;
    std::optional<std::size_t> offset;  // byte offset in the GSC when known
    Json stats;
};

namespace cmd_detail {

/// Checks every motion vector against the radius and the frame bounds.
inline void check_vectors(const GopStream& s, const GscLayout& layout) {
    const int bs = s.block_size;
    for (std::size_t g = 0; g < s.gops.size(); ++g) {
        for (std::size_t p = 0; p < s.gops[g].pframes.size(); ++p) {
            const auto& mv = s.gops[g].pframes[p].mv;
            for (std::uint32_t by = 0; by < mv.grid_h; ++by) {
                for (std::uint32_t bx = 0; bx < mv.grid_w; ++bx) {
                    const auto v = mv.at(bx, by);
                    const int sx = static_cast<int>(bx) * bs + v.dx, sy = static_cast<int>(by) * bs + v.dy;
                    const bool inside = sx >= 0 && sy >= 0 && sx + bs <= static_cast<int>(s.width) &&
                                        sy + bs <= static_cast<int>(s.height);
                    if (std::abs(v.dx) > s.search_radius || std::abs(v.dy) > s.search_radius || !inside) {
                        throw Error(Errc::OutOfBoundsVector,
                                    "GOP " + std::to_string(g) + " P-frame " + std::to_string(p + 1) + " block (" +
                                        std::to_string(bx) + "," + std::to_string(by) + ") vector (" +
                                        std::to_string(v.dx) + "," + std::to_string(v.dy) + ") is invalid",
                                    layout.mv_offset(g, p, std::size_t{by} * mv.grid_w + bx));
                    }
                }
            }
        }
    }
}

/// Byte offset of the data that produced pixel (x, y, c) of `frame`.
inline std::size_t pixel_offset(const GopStream& s, const GscLayout& layout, std::size_t frame,
                                std::uint32_t x, std::uint32_t y, int c) {
    std::size_t g = 0;
    while (frame > s.gops[g].pframes.size()) {
        frame -= s.gops[g].pframes.size() + 1;
        ++g;
    }
    const std::size_t pix = std::size_t{y} * s.width + x;
    if (frame == 0) return layout.gops[g].iframe_offset + pix * 3 + static_cast<std::size_t>(c);
    return layout.residual_offset(g, frame - 1, c, pix);
}

}  // namespace cmd_detail

/// Verifies a GSC stream: structure, vector invariants, decodability,
/// byte-identical re-serialization, and (with `reference`) a bit-exact
/// match against the source video. An RVF input is encoded first and then
/// checked against itself.
inline VerifyReport cmd_verify(const std::string& input, const std::string& reference, const RunConfig& cfg) {
    VerifyReport rep;
    auto bytes = read_file(input);
    std::optional<RawVideo> ref;
    if (cmd_detail::has_magic(bytes, kRvfMagic)) {
        ref = read_rvf(bytes);
        bytes = serialize_gsc(encode_gop_stream(*ref, cfg.codec));
    }
    if (!reference.empty()) ref = read_rvf(read_file(reference));

    GscLayout layout;
    try {
        const auto stream = deserialize_gsc(bytes, &layout);
        cmd_detail::check_vectors(stream, layout);
        StreamFault fault;
        RawVideo decoded;
        try {
            decoded = decode_gop_stream(stream, &fault);
        } catch (const Error& e) {
            if (e.code() != Errc::ValueOverflow) throw;
            const auto pix = std::size_t{fault.pixel.y} * stream.width + fault.pixel.x;
            throw Error(e.code(),
                        "prediction + residual leaves [0, 255] in GOP " + std::to_string(fault.gop) + " P-frame " +
                            std::to_string(fault.pframe + 1) + " pixel (" + std::to_string(fault.pixel.x) + "," +
                            std::to_string(fault.pixel.y) + ")",
                        layout.residual_offset(fault.gop, fault.pframe, fault.pixel.channel, pix));
        }
        if (serialize_gsc(stream) != bytes) {
            throw Error(Errc::CorruptStream, "re-serialized stream differs from input");
        }
        if (ref) {
            if (ref->width != decoded.width || ref->height != decoded.height ||
                ref->frames.size() != decoded.frames.size()) {
                throw Error(Errc::DimMismatch, "decoded video shape differs from the reference");
            }
            for (std::size_t f = 0; f < decoded.frames.size(); ++f) {
                const auto& a = decoded.frames[f];
                const auto& b = ref->frames[f];
                if (a == b) continue;
                for (std::uint32_t y = 0; y < a.height; ++y) {
                    for (std::uint32_t x = 0; x < a.width; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            if (a.at(x, y, c) != b.at(x, y, c)) {
                                throw Error(Errc::CorruptStream,
                                            "frame " + std::to_string(f) + " pixel (" + std::to_string(x) + "," +
                                                std::to_string(y) + ") channel " + std::to_string(c) +
                                                " decodes to " + std::to_string(a.at(x, y, c)) + ", reference has " +
                                                std::to_string(b.at(x, y, c)),
                                            cmd_detail::pixel_offset(stream, layout, f, x, y, c));
                            }
                        }
                    }
                }
            }
        }
        rep.stats = {{"frames", decoded.frames.size()},
                     {"gops", stream.gops.size()},
                     {"gsc_bytes", bytes.size()},
                     {"compared_to_reference", Json(ref.has_value())}};
    } catch (const Error& e) {
        rep.ok = false;
        rep.message = e.what();
        rep.offset = e.offset();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// extract-mv: "GMVM" | u32 block_size | u32 entries | per entry:
// u32 gop, u32 t (1-based P-frame index in its GOP), u32 grid_w, u32 grid_h,
// grid_w*grid_h (i8 dx, i8 dy) row-major.

inline constexpr std::string_view kGmvmMagic = "GMVM";

struct MotionDumpEntry {
    std::uint32_t gop = 0;
    std::uint32_t t = 0;
    MotionVectorGrid mv;
};

inline std::vector<std::uint8_t> write_gmvm(const GopStream& s) {
    ByteWriter w;
    w.magic(kGmvmMagic);
    w.put<std::uint32_t>(s.block_size);
    std::uint32_t n = 0;
    for (const auto& g : s.gops) n += static_cast<std::uint32_t>(g.pframes.size());
    w.put<std::uint32_t>(n);
    for (std::size_t g = 0; g < s.gops.size(); ++g) {
        for (std::size_t p = 0; p < s.gops[g].pframes.size(); ++p) {
            const auto& mv = s.gops[g].pframes[p].mv;
            w.put<std::uint32_t>(static_cast<std::uint32_t>(g));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(p + 1));
            w.put<std::uint32_t>(mv.grid_w);
            w.put<std::uint32_t>(mv.grid_h);
            for (const auto& v : mv.entries) {
                w.put<std::int8_t>(v.dx);
                w.put<std::int8_t>(v.dy);
            }
        }
    }
    return w.take();
}

inline std::vector<MotionDumpEntry> read_gmvm(std::span<const std::uint8_t> bytes, std::uint32_t* block_size = nullptr) {
    ByteReader r(bytes);
    r.expect_magic(kGmvmMagic);
    const auto bs = r.get<std::uint32_t>("block size");
    if (block_size != nullptr) *block_size = bs;
    const auto n = r.get<std::uint32_t>("entry count");
    std::vector<MotionDumpEntry> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        MotionDumpEntry e;
        e.gop = r.get<std::uint32_t>("gop");
        e.t = r.get<std::uint32_t>("t");
        const auto gw = r.get<std::uint32_t>("grid_w");
        const auto gh = r.get<std::uint32_t>("grid_h");
        if (std::size_t{gw} * gh * 2 > r.remaining()) {
            throw Error(Errc::TruncatedStream, "motion grid larger than the remaining bytes", r.pos());
        }
        e.mv = MotionVectorGrid(gw, gh);
        for (auto& v : e.mv.entries) {
            v.dx = r.get<std::int8_t>("dx");
            v.dy = r.get<std::int8_t>("dy");
        }
        out.push_back(std::move(e));
    }
    if (!r.at_end()) throw Error(Errc::CorruptStream, "trailing bytes after last motion grid", r.pos());
    return out;
}

inline Json cmd_extract_mv(const std::string& in, const std::string& out) {
    const auto stream = deserialize_gsc(read_file(in));
    const auto dump = write_gmvm(stream);
    write_file(out, dump);
    std::size_t grids = 0, nonzero = 0;
    for (const auto& g : stream.gops) {
        for (const auto& p : g.pframes) {
            ++grids;
            for (const auto& v : p.mv.entries) nonzero += (v.dx != 0 || v.dy != 0);
        }
    }
    return {{"grids", grids}, {"nonzero_vectors", nonzero}, {"block_size", stream.block_size}, {"bytes", dump.size()}};
}

// ---------------------------------------------------------------------------
// featurize

struct FeaturizeResult {
    AssembledSequence<float> sequence;
    Json stats;
};

/// GOP features for a video (RVF, encoded with the config's codec) or an
/// already encoded GSC stream.
inline FeaturizeResult featurize(std::span<const std::uint8_t> input, const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    GopStream stream = cmd_detail::has_magic(input, kRvfMagic) ? encode_gop_stream(read_rvf(input), cfg.codec)
                                                                : deserialize_gsc(input);
    auto ecfg = cfg.encoder_config();
    ecfg.block_size = stream.block_size;
    ecfg.search_radius = stream.search_radius;
    const GopEncoder<float> enc(ecfg);
    const auto features = enc.encode_stream(stream, cfg.max_gops);
    FeaturizeResult r;
    r.sequence = enc.assemble_sequence(features);
    const std::size_t measured = r.sequence.total_tokens();
    const std::size_t analytic = ecfg.tokens_per_gop() * features.size();
    if (measured != analytic) {
        throw Error(Errc::ShapeMismatch, "featurize produced " + std::to_string(measured) + " tokens, expected " +
                                             std::to_string(analytic));
    }
    r.stats = {{"gop_count", features.size()},
               {"tokens_per_gop", ecfg.tokens_per_gop()},
               {"total_tokens", measured},
               {"wall_ms", cmd_detail::ms_since(t0)}};
    return r;
}

inline Json cmd_featurize(const std::string& in, const RunConfig& cfg) {
    auto r = featurize(read_file(in), cfg);
    if (!cfg.out.empty()) write_file(cfg.out, write_gftr(r.sequence));
    return r.stats;
}

// ---------------------------------------------------------------------------
// synthetic data, warmup training, evaluation

inline Json cmd_gen_synth(const RunConfig& cfg) {
    require(!cfg.out.empty(), Errc::Precondition, "gen-synth needs an output directory (--out)");
    auto opt = cfg.synth;
    opt.fps = cfg.fps;
    const auto ds = make_dataset(cfg.per_class, cfg.seed, opt);
    write_dataset(ds, cfg.out);
    return {{"clips", ds.entries.size()},
            {"train", ds.subset(Split::train).size()},
            {"val", ds.subset(Split::val).size()},
            {"seed", cfg.seed}};
}

inline SynthDataset load_or_make_dataset(const RunConfig& cfg) {
    if (!cfg.data.empty()) return read_dataset(cfg.data);
    auto opt = cfg.synth;
    opt.fps = cfg.fps;
    return make_dataset(cfg.per_class, cfg.seed, opt);
}

inline WarmupModel<float> make_warmup_model(const RunConfig& cfg) {
    const auto e = cfg.train_encoder_config();
    return WarmupModel<float>(e.motion, kCategories.size(), cfg.seed, e.fusion.position, cfg.codec.search_radius,
                              cfg.head_hidden);
}

/// Writes warmup.ckpt, metrics.json and config.txt into cfg.out.
inline Json cmd_train_warmup(const RunConfig& cfg, const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    require(!cfg.out.empty(), Errc::Precondition, "train-warmup needs an output directory (--out)");
    const auto ds = load_or_make_dataset(cfg);
    const auto data = prepare_warmup_data(ds, cfg.codec, cfg.encoder.motion.max_m);
    auto model = make_warmup_model(cfg);
    const auto rep = train_warmup(model, data, cfg.warmup_train(), on_epoch);

    const std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    write_file((dir / "warmup.ckpt").string(), ad::save_checkpoint(model.params()));
    Json metrics = {{"initial_val_acc", rep.initial_val.average}, {"epochs", metrics_json(rep)}};
    write_file((dir / "metrics.json").string(), cmd_detail::as_bytes(metrics.dump(2) + "\n"));
    write_file((dir / "config.txt").string(), cmd_detail::as_bytes(dump_config(cfg)));
    return metrics;
}

/// Val-split accuracy of a warmup checkpoint, or of the untrained model
/// when cfg.checkpoint is empty.
inline Json cmd_eval(const RunConfig& cfg) {
    const auto ds = load_or_make_dataset(cfg);
    auto model = make_warmup_model(cfg);
    if (!cfg.checkpoint.empty()) ad::load_checkpoint(model.params(), read_file(cfg.checkpoint));
    const auto data = prepare_warmup_data(ds, cfg.codec, cfg.encoder.motion.max_m);
    const auto r = evaluate(model, data.val, cfg.warmup.batch);
    return {{"val_acc", r.average}, {"per_class_acc", to_json(r)}, {"correct", r.correct}, {"total", r.total},
            {"trained", !cfg.checkpoint.empty()}};
}

// ---------------------------------------------------------------------------
// ablation and benchmark

/// One JSON row per cell or measurement; every row embeds its config.
struct BenchReport {
    std::vector<Json> rows;

    std::string jsonl() const {
        std::string s;
        for (const auto& r : rows) s += r.dump() + "\n";
        return s;
    }
};

/// Cartesian product of a grid spec such as "fusion=none,crossattn;layers=1,2".
/// Axes: fusion, pos, agg, warmup (on/off), layers, pool_k. Missing axes take
/// their value from the config.
inline std::vector<ProbeCell> parse_grid(std::string_view spec, const RunConfig& cfg) {
    ProbeCell base;
    base.fusion = cfg.encoder.fusion.mode;
    base.position = cfg.encoder.fusion.position;
    base.aggregator = cfg.encoder.fusion.aggregator;
    base.motion_layers = cfg.encoder.motion.layers;
    base.pool_k = cfg.encoder.fusion.pool_k;
    std::vector<ProbeCell> cells{base};
    while (!spec.empty()) {
        const auto semi = spec.find(';');
        auto axis = config_detail::trim(spec.substr(0, semi));
        spec = semi == std::string_view::npos ? std::string_view{} : spec.substr(semi + 1);
        if (axis.empty()) continue;
        const auto eq = axis.find('=');
        require(eq != std::string_view::npos, Errc::Precondition, "grid axis '" + std::string(axis) + "' lacks '='");
        const auto key = config_detail::trim(axis.substr(0, eq));
        std::vector<std::string_view> values;
        for (auto rest = axis.substr(eq + 1); !rest.empty();) {
            const auto comma = rest.find(',');
            values.push_back(config_detail::trim(rest.substr(0, comma)));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
        require(!values.empty(), Errc::Precondition, "grid axis '" + std::string(key) + "' has no values");
        std::vector<ProbeCell> next;
        for (const auto& c : cells) {
            for (auto v : values) {
                ProbeCell n = c;
                if (key == "fusion") n.fusion = parse_fusion(v);
                else if (key == "pos") n.position = parse_position(v);
                else if (key == "agg") n.aggregator = parse_aggregator(v);
                else if (key == "warmup") n.warmup = config_detail::parse_bool("warmup", v);
                else if (key == "layers") n.motion_layers = config_detail::parse_number<std::uint32_t>(key, v);
                else if (key == "pool_k") n.pool_k = config_detail::parse_number<std::uint32_t>(key, v);
                else throw Error(Errc::Precondition, "unknown grid axis '" + std::string(key) + "'");
                next.push_back(n);
            }
        }
        cells = std::move(next);
    }
    for (const auto& c : cells) {
        require(c.motion_layers >= 1 && c.motion_layers <= 4, Errc::Precondition, "grid layers must lie in [1, 4]");
        require(c.pool_k >= 1 && c.pool_k <= 4, Errc::Precondition, "grid pool_k must lie in [1, 4]");
    }
    return cells;
}

/// Linear-probe rows for every grid cell. Cells run in parallel; rows come
/// back in grid order.
inline BenchReport cmd_ablate(const RunConfig& cfg) {
    const auto cells = parse_grid(cfg.grid, cfg);
    std::vector<std::uint8_t> ckpt;
    const bool need_warmup = std::any_of(cells.begin(), cells.end(), [](const ProbeCell& c) { return c.warmup; });
    if (need_warmup) {
        require(!cfg.checkpoint.empty(), Errc::Precondition,
                "ablate: cells with warmup=on need a warmup checkpoint (--checkpoint, from train-warmup)");
        ckpt = read_file(cfg.checkpoint);
    }
    const auto ds = load_or_make_dataset(cfg);
    const auto base = cfg.train_encoder_config();
    const auto train = cfg.probe_train();
    BenchReport rep;
    rep.rows.resize(cells.size());
    parallel_for(cells.size(), [&](std::size_t i) {
        const auto r = run_probe(base, cells[i], ds, cfg.codec, train, need_warmup ? &ckpt : nullptr);
        auto row = probe_row(base, r, train);
        row["kind"] = "ablation";
        row["data_seed"] = ds.seed;
        rep.rows[i] = std::move(row);
    });
    return rep;
}

namespace cmd_detail {

/// Clip for stream/featurize benchmarks: a 16-frame linear-motion synthetic
/// clip, repeated cyclically up to `frames` frames.
inline RawVideo bench_clip(std::uint32_t frames, std::uint64_t seed) {
    SynthOptions o;
    o.speed = 1.0;
    auto v = generate(MotionCategory::Linear, seed, o).video;
    const auto base = v.frames;
    v.frames.clear();
    for (std::uint32_t i = 0; i < frames; ++i) v.frames.push_back(base[i % base.size()]);
    return v;
}

inline RawVideo static_clip(std::uint32_t frames, std::uint64_t seed) {
    auto v = bench_clip(1, seed);
    v.frames.assign(frames, v.frames.front());
    return v;
}

}  // namespace cmd_detail

/// Token counts (analytic and measured), stream size ratios and featurize
/// wall times. Wall times are informational only.
inline BenchReport cmd_bench(const RunConfig& cfg) {
    BenchReport rep;
    const auto clip16 = cmd_detail::bench_clip(16, cfg.seed);
    const auto stream16 = encode_gop_stream(clip16, cfg.codec);

    for (std::uint32_t k = 1; k <= 4; ++k) {
        RunConfig c = cfg;
        c.encoder.fusion.pool_k = k;
        const auto e = c.encoder_config();
        const GopEncoder<float> enc(e);
        const auto t0 = std::chrono::steady_clock::now();
        const auto f = enc.encode(stream16.gops.front(), 0);
        rep.rows.push_back({{"kind", "tokens"},
                            {"pool_k", k},
                            {"tokens_per_gop", e.tokens_per_gop()},
                            {"measured_tokens", f.tokens.rows()},
                            {"wall_ms", cmd_detail::ms_since(t0)},
                            {"config", to_json(e)}});
    }
    for (std::uint32_t gops : {2u, 4u, 8u}) {
        const auto video = cmd_detail::bench_clip(gops * cfg.codec.keyframe_interval, cfg.seed);
        RunConfig c = cfg;
        c.max_gops = std::max<std::size_t>(cfg.max_gops, gops);
        const auto r = featurize(write_rvf(video), c);
        Json row = r.stats;
        row["kind"] = "featurize";
        row["frames"] = video.frames.size();
        row["config"] = to_json(c.encoder_config());
        rep.rows.push_back(std::move(row));
    }
    const std::vector<std::pair<std::string, RawVideo>> clips = {
        {"linear", clip16}, {"static", cmd_detail::static_clip(16, cfg.seed)}};
    for (const auto& [name, video] : clips) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto stream = encode_gop_stream(video, cfg.codec);
        const auto gsc = serialize_gsc(stream);
        const double ms = cmd_detail::ms_since(t0);
        const auto rvf = rvf_size(video);
        bool mv_zero = true;
        for (const auto& g : stream.gops)
            for (const auto& p : g.pframes) mv_zero = mv_zero && p.mv.all_zero();
        rep.rows.push_back({{"kind", "stream"},
                            {"clip", name},
                            {"frames", video.frames.size()},
                            {"rvf_bytes", rvf},
                            {"gsc_bytes", gsc.size()},
                            {"ratio", static_cast<double>(gsc.size()) / static_cast<double>(rvf)},
                            {"all_zero_mv", mv_zero},
                            {"encode_ms", ms},
                            {"codec",
                             {{"keyframe_interval", cfg.codec.keyframe_interval},
                              {"block_size", cfg.codec.block_size},
                              {"search_radius", cfg.codec.search_radius}}}});
    }
    return rep;
}

}  // namespace gopstream
