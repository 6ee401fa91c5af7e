#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gopstream/bytes.hpp"
#include "gopstream/error.hpp"
#include "gopstream/gop_codec.hpp"
#include "gopstream/gop_encoder.hpp"
#include "gopstream/synth_motion.hpp"
#include "gopstream/warmup.hpp"

namespace gopstream {

/// Everything a CLI run depends on. Two widths exist: `encoder` is the
/// full-size feature extractor used by featurize/bench, and `train_hidden`
/// replaces its hidden width for the training-heavy commands (train-warmup,
/// eval, ablate) so they fit a single CPU core.
struct RunConfig {
    std::uint64_t seed = 0;
    CodecParams codec;
    std::uint32_t fps = 4;
    EncoderConfig encoder;
    std::size_t max_gops = 8;

    std::uint32_t train_hidden = 64;
    std::uint32_t head_hidden = 64;
    TrainConfig warmup;
    TrainConfig probe = [] {
        TrainConfig t;
        t.augment = false;
        return t;
    }();
    std::string grid = "fusion=none,crossattn";

    std::size_t per_class = 100;
    SynthOptions synth = [] {
        SynthOptions s;
        s.shared_start = true;
        return s;
    }();

    std::string data;
    std::string checkpoint;
    std::string out;

    /// Encoder config with codec geometry and seed filled in.
    EncoderConfig encoder_config() const {
        EncoderConfig e = encoder;
        e.block_size = codec.block_size;
        e.search_radius = codec.search_radius;
        e.seed = seed;
        return e;
    }

    /// Encoder config at training width.
    EncoderConfig train_encoder_config() const {
        EncoderConfig e = encoder_config();
        e.frame.hidden = train_hidden;
        e.motion.hidden = train_hidden;
        return e;
    }

    TrainConfig warmup_train() const {
        TrainConfig t = warmup;
        t.seed = seed;
        t.max_m = encoder.motion.max_m;
        return t;
    }

    TrainConfig probe_train() const {
        TrainConfig t = probe;
        t.seed = seed;
        t.max_m = encoder.motion.max_m;
        return t;
    }

    void validate() const {
        require(codec.keyframe_interval >= 1 && codec.keyframe_interval <= 65536, Errc::Precondition,
                "codec.keyframe_interval must lie in [1, 65536]");
        require(codec.block_size >= 1 && codec.block_size <= 255, Errc::Precondition,
                "codec.block_size must lie in [1, 255]");
        require(codec.search_radius <= 127, Errc::Precondition, "codec.search_radius must be <= 127");
        require(fps >= 1, Errc::Precondition, "fps must be >= 1");
        require(max_gops >= 1, Errc::Precondition, "max_gops must be >= 1");
        require(per_class >= 1, Errc::Precondition, "synth.per_class must be >= 1");
        encoder_config().validate();
        train_encoder_config().validate();
        warmup_train().validate();
        probe_train().validate();
        synth_detail::check_options(synth);
    }
};

namespace config_detail {

template <class N>
N parse_number(std::string_view key, std::string_view v) {
    N out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw Error(Errc::Precondition, "config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
    }
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw Error(Errc::Precondition, "config key '" + std::string(key) + "': expected true/false, got '" +
                                        std::string(v) + "'");
}

inline double parse_real(std::string_view key, std::string_view v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(std::string(v), &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw Error(Errc::Precondition, "config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
}

inline std::string fmt_double(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

struct Field {
    std::string_view key;
    std::string_view help;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class N, class Ptr>
Field num(std::string_view key, std::string_view help, Ptr ptr) {
    return {key, help, [key, ptr](RunConfig& c, std::string_view v) { ptr(c) = parse_number<N>(key, v); },
            [ptr](const RunConfig& c) { return std::to_string(ptr(c)); }};
}

template <class Ptr>
Field real(std::string_view key, std::string_view help, Ptr ptr) {
    return {key, help, [key, ptr](RunConfig& c, std::string_view v) { ptr(c) = parse_real(key, v); },
            [ptr](const RunConfig& c) { return fmt_double(ptr(c)); }};
}

template <class Ptr>
Field flag(std::string_view key, std::string_view help, Ptr ptr) {
    return {key, help, [key, ptr](RunConfig& c, std::string_view v) { ptr(c) = parse_bool(key, v); },
            [ptr](const RunConfig& c) { return std::string(ptr(c) ? "true" : "false"); }};
}

template <class Ptr>
Field text(std::string_view key, std::string_view help, Ptr ptr) {
    return {key, help, [ptr](RunConfig& c, std::string_view v) { ptr(c) = std::string(v); },
            [ptr](const RunConfig& c) { return ptr(c); }};
}

// clang-format off
inline const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        num<std::uint64_t>("seed", "seed for weights, data and shuffling", [](auto& c) -> auto& { return c.seed; }),
        num<std::uint32_t>("codec.keyframe_interval", "frames per GOP", [](auto& c) -> auto& { return c.codec.keyframe_interval; }),
        num<std::uint32_t>("codec.block_size", "motion block side in pixels", [](auto& c) -> auto& { return c.codec.block_size; }),
        num<std::uint32_t>("codec.search_radius", "full-search radius in pixels", [](auto& c) -> auto& { return c.codec.search_radius; }),
        num<std::uint32_t>("fps", "frame rate written to generated videos", [](auto& c) -> auto& { return c.fps; }),
        num<std::uint32_t>("frame.resolution", "I-frame encode resolution", [](auto& c) -> auto& { return c.encoder.frame.resolution; }),
        num<std::uint32_t>("frame.patch", "frame patch size", [](auto& c) -> auto& { return c.encoder.frame.patch; }),
        num<std::uint32_t>("frame.hidden", "frame encoder width (featurize, bench)", [](auto& c) -> auto& { return c.encoder.frame.hidden; }),
        num<std::uint32_t>("frame.layers", "frame encoder depth", [](auto& c) -> auto& { return c.encoder.frame.layers; }),
        num<std::uint32_t>("frame.heads", "frame encoder attention heads", [](auto& c) -> auto& { return c.encoder.frame.heads; }),
        num<std::uint32_t>("motion.input", "motion matrix side after resizing", [](auto& c) -> auto& { return c.encoder.motion.input; }),
        num<std::uint32_t>("motion.patch", "motion patch size", [](auto& c) -> auto& { return c.encoder.motion.patch; }),
        num<std::uint32_t>("motion.hidden", "motion encoder width (featurize, bench)", [](auto& c) -> auto& { return c.encoder.motion.hidden; }),
        num<std::uint32_t>("motion.layers", "motion encoder depth", [](auto& c) -> auto& { return c.encoder.motion.layers; }),
        num<std::uint32_t>("motion.heads", "motion encoder attention heads", [](auto& c) -> auto& { return c.encoder.motion.heads; }),
        num<std::uint32_t>("motion.max_m", "motion frames sampled per GOP or clip", [](auto& c) -> auto& { return c.encoder.motion.max_m; }),
        {"motion.time_index", "sampled|original",
         [](RunConfig& c, std::string_view v) {
             if (v == "sampled") c.encoder.time_index = TimeIndexMode::sampled;
             else if (v == "original") c.encoder.time_index = TimeIndexMode::original;
             else throw Error(Errc::UnknownMode, "unknown time index mode '" + std::string(v) + "'");
         },
         [](const RunConfig& c) { return std::string(c.encoder.time_index == TimeIndexMode::sampled ? "sampled" : "original"); }},
        {"fusion.mode", "crossattn|add|concat|none",
         [](RunConfig& c, std::string_view v) { c.encoder.fusion.mode = parse_fusion(v); },
         [](const RunConfig& c) { return std::string(to_string(c.encoder.fusion.mode)); }},
        {"fusion.position", "pre|post|none",
         [](RunConfig& c, std::string_view v) { c.encoder.fusion.position = parse_position(v); },
         [](const RunConfig& c) { return std::string(to_string(c.encoder.fusion.position)); }},
        {"fusion.aggregator", "mean|full",
         [](RunConfig& c, std::string_view v) { c.encoder.fusion.aggregator = parse_aggregator(v); },
         [](const RunConfig& c) { return std::string(to_string(c.encoder.fusion.aggregator)); }},
        num<std::uint32_t>("fusion.pool_k", "frame token pooling kernel", [](auto& c) -> auto& { return c.encoder.fusion.pool_k; }),
        flag("fusion.unpooled_query", "fuse on the unpooled grid, pool afterwards", [](auto& c) -> auto& { return c.encoder.fusion.unpooled_query; }),
        num<std::uint32_t>("projector.out_dim", "projector output width, 0 keeps the encoder width", [](auto& c) -> auto& { return c.encoder.projector.out_dim; }),
        num<std::uint32_t>("projector.layers", "1 or 2", [](auto& c) -> auto& { return c.encoder.projector.layers; }),
        num<std::size_t>("max_gops", "GOP limit for featurize", [](auto& c) -> auto& { return c.max_gops; }),
        num<std::uint32_t>("train.hidden", "encoder width for train-warmup, eval and ablate", [](auto& c) -> auto& { return c.train_hidden; }),
        num<std::uint32_t>("warmup.head_hidden", "hidden units of the warmup head, 0 for linear", [](auto& c) -> auto& { return c.head_hidden; }),
        real("warmup.lr", "Adam learning rate", [](auto& c) -> auto& { return c.warmup.lr; }),
        num<std::size_t>("warmup.batch", "clips per step", [](auto& c) -> auto& { return c.warmup.batch; }),
        num<std::size_t>("warmup.epochs", "training epochs", [](auto& c) -> auto& { return c.warmup.epochs; }),
        num<std::size_t>("warmup.shards", "gradient shards per batch", [](auto& c) -> auto& { return c.warmup.shards; }),
        flag("warmup.augment", "random flips and rotations of motion fields", [](auto& c) -> auto& { return c.warmup.augment; }),
        real("probe.lr", "probe learning rate", [](auto& c) -> auto& { return c.probe.lr; }),
        num<std::size_t>("probe.batch", "probe clips per step", [](auto& c) -> auto& { return c.probe.batch; }),
        num<std::size_t>("probe.epochs", "probe epochs", [](auto& c) -> auto& { return c.probe.epochs; }),
        text("ablate.grid", "cells as key=v1,v2;key=v1 over fusion, pos, agg, warmup, layers, pool_k", [](auto& c) -> auto& { return c.grid; }),
        num<std::size_t>("synth.per_class", "clips per motion category", [](auto& c) -> auto& { return c.per_class; }),
        num<std::uint32_t>("synth.canvas", "clip side in pixels", [](auto& c) -> auto& { return c.synth.canvas; }),
        num<std::uint32_t>("synth.frames", "frames per clip", [](auto& c) -> auto& { return c.synth.frames; }),
        flag("synth.shared_start", "identical first frame across categories", [](auto& c) -> auto& { return c.synth.shared_start; }),
        {"synth.speed", "fixed px/frame, empty to sample",
         [](RunConfig& c, std::string_view v) {
             if (v.empty()) c.synth.speed.reset();
             else c.synth.speed = parse_real("synth.speed", v);
         },
         [](const RunConfig& c) { return c.synth.speed ? fmt_double(*c.synth.speed) : std::string(); }},
        text("data", "synthetic dataset directory", [](auto& c) -> auto& { return c.data; }),
        text("checkpoint", "warmup checkpoint path", [](auto& c) -> auto& { return c.checkpoint; }),
        text("out", "output path", [](auto& c) -> auto& { return c.out; }),
    };
    return f;
}
// clang-format on

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace config_detail

inline void set_config_value(RunConfig& c, std::string_view key, std::string_view value) {
    for (const auto& f : config_detail::fields()) {
        if (f.key == key) {
            f.set(c, value);
            return;
        }
    }
    throw Error(Errc::Precondition, "unknown config key '" + std::string(key) + "'");
}

/// Parses `key = value` lines; `#` starts a comment. Errors name the line.
inline void apply_config_text(RunConfig& c, std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(Errc::Precondition, "config line " + std::to_string(line_no) + ": expected key = value");
        }
        try {
            set_config_value(c, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(e.code(), "config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline RunConfig load_config(const std::string& path) {
    RunConfig c;
    const auto bytes = read_file(path);
    apply_config_text(c, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return c;
}

/// Every key with its current value, one per line; parses back to `c`.
inline std::string dump_config(const RunConfig& c) {
    std::string s;
    for (const auto& f : config_detail::fields()) {
        s += std::string(f.key) + " = " + f.get(c) + "\n";
    }
    return s;
}

inline std::string config_help() {
    const RunConfig defaults;
    std::string s = "Config file keys (key = value, # comments):\n";
    for (const auto& f : config_detail::fields()) {
        s += "  " + std::string(f.key) + " [" + f.get(defaults) + "]  " + std::string(f.help) + "\n";
    }
    return s;
}

}  // namespace gopstream
