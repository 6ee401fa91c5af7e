#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gopstream/autodiff.hpp"
#include "gopstream/gop_codec.hpp"
#include "gopstream/motion_field.hpp"
#include "gopstream/nn.hpp"
#include "gopstream/video_io.hpp"

namespace gopstream {

using ad::Parameter;
using ad::ParamStore;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class FusionMode { crossattn, add, concat, none };
enum class PositionMode { pre_fusion, post_fusion, no_pos };
enum class Aggregator { mean_pool, full_sequence };

inline std::string_view to_string(FusionMode m) {
    switch (m) {
        case FusionMode::crossattn: return "crossattn";
        case FusionMode::add: return "add";
        case FusionMode::concat: return "concat";
        case FusionMode::none: return "none";
    }
    return "?";
}
inline std::string_view to_string(PositionMode m) {
    switch (m) {
        case PositionMode::pre_fusion: return "pre";
        case PositionMode::post_fusion: return "post";
        case PositionMode::no_pos: return "none";
    }
    return "?";
}
inline std::string_view to_string(Aggregator a) {
    return a == Aggregator::mean_pool ? "mean" : "full";
}

inline FusionMode parse_fusion(std::string_view s) {
    if (s == "crossattn") return FusionMode::crossattn;
    if (s == "add") return FusionMode::add;
    if (s == "concat") return FusionMode::concat;
    if (s == "none") return FusionMode::none;
    throw Error(Errc::UnknownMode, "unknown fusion mode '" + std::string(s) + "'");
}
inline PositionMode parse_position(std::string_view s) {
    if (s == "pre" || s == "pre_fusion") return PositionMode::pre_fusion;
    if (s == "post" || s == "post_fusion") return PositionMode::post_fusion;
    if (s == "none" || s == "no_pos") return PositionMode::no_pos;
    throw Error(Errc::UnknownMode, "unknown position mode '" + std::string(s) + "'");
}
inline Aggregator parse_aggregator(std::string_view s) {
    if (s == "mean" || s == "mean_pool") return Aggregator::mean_pool;
    if (s == "full" || s == "full_sequence") return Aggregator::full_sequence;
    throw Error(Errc::UnknownMode, "unknown aggregator '" + std::string(s) + "'");
}

struct FrameEncoderConfig {
    std::uint32_t resolution = 378;
    std::uint32_t patch = 14;
    std::uint32_t hidden = 256;
    std::uint32_t layers = 2;
    std::uint32_t heads = 4;

    std::uint32_t grid() const { return patch ? resolution / patch : 0; }

    void validate() const {
        require(patch > 0 && resolution > 0 && patch * grid() == resolution, Errc::Precondition,
                "frame encoder: patch size must tile the encode resolution");
        require(heads > 0 && hidden % heads == 0, Errc::HeadsMismatch, "frame encoder: hidden not divisible by heads");
        require(layers >= 1, Errc::Precondition, "frame encoder: layers must be >= 1");
    }
};

struct MotionEncoderConfig {
    std::uint32_t input = 96;
    std::uint32_t patch = 7;
    std::uint32_t hidden = 256;
    std::uint32_t layers = 2;
    std::uint32_t heads = 4;
    std::uint32_t max_m = 8;

    /// Input side zero-padded up to a multiple of the patch size.
    std::uint32_t padded() const { return (input + patch - 1) / patch * patch; }
    std::uint32_t grid() const { return padded() / patch; }
    std::size_t tokens() const { return std::size_t{grid()} * grid(); }

    void validate() const {
        require(patch > 0 && input > 0, Errc::Precondition, "motion encoder: input and patch must be positive");
        require(heads > 0 && hidden % heads == 0, Errc::HeadsMismatch, "motion encoder: hidden not divisible by heads");
        require(layers >= 1, Errc::Precondition, "motion encoder: layers must be >= 1");
        require(max_m >= 1, Errc::Precondition, "motion encoder: max_m must be >= 1");
    }
};

struct FusionConfig {
    FusionMode mode = FusionMode::crossattn;
    PositionMode position = PositionMode::pre_fusion;
    Aggregator aggregator = Aggregator::mean_pool;
    std::uint32_t pool_k = 3;
    /// Use the unpooled frame grid as queries and pool after fusion.
    bool unpooled_query = false;
};

struct ProjectorConfig {
    std::uint32_t out_dim = 0;  // 0 keeps the encoder width
    std::uint32_t layers = 2;   // 2: linear-gelu-linear; 1: identity-initialised linear
};

struct EncoderConfig {
    FrameEncoderConfig frame;
    MotionEncoderConfig motion;
    FusionConfig fusion;
    ProjectorConfig projector;
    std::uint32_t block_size = 4;
    std::uint32_t search_radius = 8;
    TimeIndexMode time_index = TimeIndexMode::sampled;
    std::uint64_t seed = 0;

    std::uint32_t pooled_grid() const { return static_cast<std::uint32_t>(ad::pooled_extent(frame.grid(), fusion.pool_k)); }
    std::size_t tokens_per_gop() const { return std::size_t{pooled_grid()} * pooled_grid(); }
    std::size_t projector_out() const { return projector.out_dim ? projector.out_dim : frame.hidden; }

    void validate() const {
        frame.validate();
        motion.validate();
        require(frame.hidden == motion.hidden, Errc::ShapeMismatch, "frame and motion encoders must share hidden width");
        require(fusion.pool_k >= 1, Errc::Precondition, "pooling kernel must be >= 1");
        require(projector.layers == 1 || projector.layers == 2, Errc::Precondition, "projector layers must be 1 or 2");
        require(block_size > 0 && search_radius > 0, Errc::Precondition, "codec geometry must be positive");
    }
};

inline std::size_t tokens_per_gop(std::uint32_t grid, std::uint32_t k) {
    const std::size_t o = ad::pooled_extent(grid, k);
    return o * o;
}

inline nlohmann::json to_json(const EncoderConfig& c) {
    return {
        {"frame", {{"resolution", c.frame.resolution}, {"patch", c.frame.patch}, {"grid", c.frame.grid()},
                   {"hidden", c.frame.hidden}, {"layers", c.frame.layers}, {"heads", c.frame.heads}}},
        {"motion", {{"input", c.motion.input}, {"patch", c.motion.patch}, {"tokens", c.motion.tokens()},
                    {"hidden", c.motion.hidden}, {"layers", c.motion.layers}, {"heads", c.motion.heads},
                    {"max_m", c.motion.max_m}}},
        {"fusion", {{"mode", to_string(c.fusion.mode)}, {"position", to_string(c.fusion.position)},
                    {"aggregator", to_string(c.fusion.aggregator)}, {"k", c.fusion.pool_k},
                    {"unpooled_query", c.fusion.unpooled_query}}},
        {"projector", {{"out_dim", c.projector_out()}, {"layers", c.projector.layers}}},
        {"block_size", c.block_size},
        {"search_radius", c.search_radius},
        {"time_index", c.time_index == TimeIndexMode::sampled ? "sampled" : "original"},
        {"seed", c.seed},
    };
}

// ---------------------------------------------------------------------------
// Encoders

template <class T>
struct FrameEncoder {
    FrameEncoderConfig cfg;
    ad::Linear<T> embed;
    Parameter<T>* pos = nullptr;
    std::vector<ad::TransformerBlock<T>> blocks;
    ad::LayerNorm<T> ln;

    FrameEncoder(ParamStore<T>& ps, const FrameEncoderConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        const std::size_t d = cfg.hidden, g = cfg.grid();
        embed = ad::Linear<T>(ps, "frame.embed", std::size_t{cfg.patch} * cfg.patch * 3, d, seed);
        pos = &ps.add("frame.pos", ad::init_normal<T>({g * g, d}, T(0.02), seed, "frame.pos"));
        for (std::uint32_t l = 0; l < cfg.layers; ++l) {
            blocks.emplace_back(ps, "frame.block" + std::to_string(l), d, cfg.heads, seed);
        }
        ln = ad::LayerNorm<T>(ps, "frame.ln", d);
    }

    /// (G*G, patch*patch*3) with pixels scaled to [0, 1]; patch features are
    /// ordered (row, column, channel).
    Tensor<T> patchify(const FrameRGB& input) const {
        const FrameRGB f = resize_frame(input, cfg.resolution, cfg.resolution);
        const std::size_t g = cfg.grid(), p = cfg.patch;
        Tensor<T> out({g * g, p * p * 3});
        T* o = out.ptr();
        for (std::size_t gy = 0; gy < g; ++gy)
            for (std::size_t gx = 0; gx < g; ++gx)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        for (int c = 0; c < 3; ++c) {
                            *o++ = static_cast<T>(f.at(static_cast<std::uint32_t>(gx * p + x),
                                                       static_cast<std::uint32_t>(gy * p + y), c)) /
                                   T(255);
                        }
        return out;
    }

    /// Token grid (G*G, D).
    Var<T> encode(Tape<T>& t, const FrameRGB& frame) const {
        auto x = embed(t.constant(patchify(frame)));
        x = ad::add(x, t.param(*pos));
        for (const auto& b : blocks) x = b(x);
        return ln(x);
    }

    /// (G*G, D) -> (ceil(G/k)^2, D).
    Var<T> pool(Var<T> tokens, std::uint32_t k) const {
        const std::size_t g = cfg.grid(), d = cfg.hidden;
        auto grid = ad::reshape(tokens, {g, g, d});
        auto pooled = ad::adaptive_avg_pool2d(grid, k);
        const std::size_t o = pooled.value().dim(0);
        return ad::reshape(pooled, {o * o, d});
    }
};

template <class T>
struct MotionEncoder {
    MotionEncoderConfig cfg;
    ad::Linear<T> embed;
    Parameter<T>* pos_spatial = nullptr;
    Parameter<T>* pos_time = nullptr;
    std::vector<ad::TransformerBlock<T>> blocks;
    ad::LayerNorm<T> ln;

    MotionEncoder(ParamStore<T>& ps, const MotionEncoderConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        const std::size_t d = cfg.hidden;
        embed = ad::Linear<T>(ps, "motion.embed", std::size_t{cfg.patch} * cfg.patch * 2, d, seed);
        pos_spatial = &ps.add("motion.pos", ad::init_normal<T>({cfg.tokens(), d}, T(0.02), seed, "motion.pos"));
        pos_time = &ps.add("motion.time", ad::init_normal<T>({cfg.max_m, d}, T(0.02), seed, "motion.time"));
        for (std::uint32_t l = 0; l < cfg.layers; ++l) {
            blocks.emplace_back(ps, "motion.block" + std::to_string(l), d, cfg.heads, seed);
        }
        ln = ad::LayerNorm<T>(ps, "motion.ln", d);
    }

    /// Rows of (B*N, patch*patch*2) for conditioned input x input matrices,
    /// zero-padded to the patch multiple.
    Tensor<T> patchify(const std::vector<MotionMatrix>& ms) const {
        const std::size_t g = cfg.grid(), p = cfg.patch, n = cfg.tokens();
        Tensor<T> out({ms.size() * n, p * p * 2});
        for (std::size_t b = 0; b < ms.size(); ++b) {
            const auto& m = ms[b];
            if (m.mw != cfg.input || m.mh != cfg.input) {
                throw Error(Errc::ShapeMismatch, "motion matrix is " + std::to_string(m.mw) + "x" +
                                                     std::to_string(m.mh) + ", encoder expects " +
                                                     std::to_string(cfg.input) + "x" + std::to_string(cfg.input));
            }
            T* o = out.ptr() + b * n * p * p * 2;
            for (std::size_t gy = 0; gy < g; ++gy)
                for (std::size_t gx = 0; gx < g; ++gx)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t x = 0; x < p; ++x) {
                            const std::size_t row = gy * p + y, col = gx * p + x;
                            const bool inside = row < cfg.input && col < cfg.input;
                            for (int c = 0; c < 2; ++c) {
                                *o++ = inside ? static_cast<T>(m.at(static_cast<std::uint32_t>(row),
                                                                    static_cast<std::uint32_t>(col), c))
                                              : T(0);
                            }
                        }
        }
        return out;
    }

    std::vector<std::size_t> time_slots(const std::vector<MotionMatrix>& ms) const {
        std::vector<std::size_t> ids;
        for (const auto& m : ms) {
            if (m.t < 1 || m.t > cfg.max_m) {
                throw Error(Errc::TimeIndexOutOfRange, "time index " + std::to_string(m.t) + " outside [1, " +
                                                           std::to_string(cfg.max_m) + "]");
            }
            ids.push_back(m.t - 1);
        }
        return ids;
    }

    /// (B, N, D) tokens for B conditioned matrices, each with its own time index.
    Var<T> encode_patches(Tape<T>& t, Tensor<T> patches, const std::vector<std::size_t>& slots,
                          PositionMode mode) const {
        const std::size_t n = cfg.tokens(), d = cfg.hidden, b = slots.size();
        require(patches.rows() == b * n, Errc::ShapeMismatch, "motion patch rows do not match slot count");
        auto x = embed(t.constant(std::move(patches)));
        x = ad::add_tiled(x, t.param(*pos_spatial));
        if (mode == PositionMode::pre_fusion) {
            x = ad::add_broadcast(x, ad::embedding_lookup(t.param(*pos_time), slots));
        }
        x = ad::reshape(x, {b, n, d});
        for (const auto& blk : blocks) x = blk(x);
        x = ln(x);
        if (mode == PositionMode::post_fusion) {
            x = ad::reshape(ad::add_broadcast(ad::reshape(x, {b * n, d}), ad::embedding_lookup(t.param(*pos_time), slots)),
                            {b, n, d});
        }
        return x;
    }

    Var<T> encode(Tape<T>& t, const std::vector<MotionMatrix>& ms, PositionMode mode) const {
        require(!ms.empty(), Errc::EmptySequence, "encode_motion: no motion matrices");
        return encode_patches(t, patchify(ms), time_slots(ms), mode);
    }

    /// Conditions raw macroblock-resolution fields for this encoder.
    MotionMatrix condition(const MotionMatrix& raw, double search_radius) const {
        return condition_motion(raw, cfg.input, cfg.input, search_radius);
    }
};

/// Elementwise mean over the temporal axis of (M, N, D) -> (N, D).
template <class T>
Var<T> aggregate_motion(Var<T> seq) {
    const auto& s = seq.value().shape();
    require(s.size() == 3, Errc::ShapeMismatch, "aggregate_motion expects (M, N, D)");
    require(s[0] > 0, Errc::EmptySequence, "aggregate_motion: empty sequence");
    return ad::mean_over_axis(seq, 0);
}

template <class T>
struct Fusion {
    FusionConfig cfg;
    std::size_t d = 0;
    ad::MultiHeadAttention<T> attn;
    ad::FeedForward<T> ffn;
    ad::Linear<T> proj;

    Fusion(ParamStore<T>& ps, const FusionConfig& c, std::size_t hidden, std::size_t heads, std::uint64_t seed)
        : cfg(c), d(hidden) {
        switch (cfg.mode) {
            case FusionMode::crossattn:
                attn = ad::MultiHeadAttention<T>(ps, "fusion.attn", d, heads, seed);
                ffn = ad::FeedForward<T>(ps, "fusion.ffn", d, 4 * d, seed, true);
                break;
            case FusionMode::add: proj = ad::Linear<T>(ps, "fusion.proj", d, d, seed); break;
            case FusionMode::concat: proj = ad::Linear<T>(ps, "fusion.proj", 2 * d, d, seed); break;
            case FusionMode::none: break;
        }
    }

    /// frame: (o*o, D) query grid. motion: (M*N, D) keys/values laid out as M
    /// frames of a g x g token grid (M = 1 after mean aggregation).
    Var<T> operator()(Var<T> frame, Var<T> motion, std::size_t motion_grid) const {
        const std::size_t tq = frame.value().rows();
        require(frame.value().cols() == d && motion.value().cols() == d, Errc::ShapeMismatch,
                "fusion inputs must share width " + std::to_string(d));
        switch (cfg.mode) {
            case FusionMode::none: return frame;
            case FusionMode::crossattn: return ad::add(ffn(attn(frame, motion)), frame);
            case FusionMode::add:
            case FusionMode::concat: {
                const std::size_t n = motion_grid * motion_grid;
                require(motion.value().rows() % n == 0, Errc::ShapeMismatch, "motion tokens do not form a grid");
                const std::size_t m = motion.value().rows() / n;
                std::size_t o = 1;
                while (o * o < tq) ++o;
                require(o * o == tq, Errc::ShapeMismatch, "frame tokens do not form a square grid");
                auto grid = ad::reshape(motion, {m, motion_grid, motion_grid, d});
                auto pooled = ad::mean_over_axis(ad::adaptive_avg_pool2d_to(grid, o, o), 0);
                auto resampled = ad::reshape(pooled, {tq, d});
                if (cfg.mode == FusionMode::add) return ad::add(frame, proj(resampled));
                return ad::add(frame, proj(ad::concat_last_dim(frame, resampled)));
            }
        }
        throw Error(Errc::UnknownMode, "unknown fusion mode");
    }
};

template <class T>
struct Projector {
    ad::Linear<T> fc1, fc2;
    std::uint32_t layers = 2;

    Projector(ParamStore<T>& ps, const ProjectorConfig& c, std::size_t in, std::uint64_t seed) : layers(c.layers) {
        const std::size_t out = c.out_dim ? c.out_dim : in;
        if (layers == 2) {
            fc1 = ad::Linear<T>(ps, "projector.fc1", in, out, seed);
            fc2 = ad::Linear<T>(ps, "projector.fc2", out, out, seed);
        } else {
            fc1 = ad::Linear<T>(ps, "projector.fc1", in, out, seed, true);
            for (std::size_t i = 0; i < std::min(in, out); ++i) fc1.w->value.at(i, i) = T(1);
        }
    }

    Var<T> operator()(Var<T> x) const {
        require(x.value().cols() == fc1.in_dim(), Errc::ShapeMismatch, "projector input width mismatch");
        if (layers == 1) return fc1(x);
        return fc2(ad::gelu(fc1(x)));
    }
};

template <class T>
struct GopFeature {
    Tensor<T> tokens;  // (T, D)
    std::size_t gop_index = 0;
};

template <class T>
struct AssembledSequence {
    struct Segment {
        std::string prompt;
        Tensor<T> tokens;
    };
    std::vector<Segment> segments;

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& s : segments) n += s.tokens.rows();
        return n;
    }
};

inline std::string segment_prompt(std::size_t k) {
    return "Segment " + std::to_string(k);
}

/// Motion-aware GOP encoder: frame path, motion path, fusion and projector
/// with their parameters in one store.
template <class T>
class GopEncoder {
public:
    explicit GopEncoder(const EncoderConfig& cfg)
        : cfg_((cfg.validate(), cfg)),
          frame_(params_, cfg.frame, cfg.seed),
          motion_(params_, cfg.motion, cfg.seed),
          fusion_(params_, cfg.fusion, cfg.frame.hidden, cfg.frame.heads, cfg.seed),
          projector_(params_, cfg.projector, cfg.frame.hidden, cfg.seed) {}

    GopEncoder(const GopEncoder&) = delete;
    GopEncoder& operator=(const GopEncoder&) = delete;

    const EncoderConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const FrameEncoder<T>& frame_encoder() const { return frame_; }
    const MotionEncoder<T>& motion_encoder() const { return motion_; }
    const Fusion<T>& fusion() const { return fusion_; }
    const Projector<T>& projector() const { return projector_; }

    /// Sampled, conditioned motion frames for a GOP; an image GOP yields one
    /// blank matrix at t = 1.
    std::vector<MotionMatrix> motion_inputs(const Gop& gop) const {
        auto raw = sample_motion_frames(gop, cfg_.motion.max_m, cfg_.block_size, cfg_.time_index);
        if (raw.empty()) {
            raw.push_back(blank_motion(gop.iframe.width / cfg_.block_size, gop.iframe.height / cfg_.block_size));
        }
        std::vector<MotionMatrix> out;
        out.reserve(raw.size());
        for (const auto& m : raw) out.push_back(motion_.condition(m, cfg_.search_radius));
        return out;
    }

    /// Keys/values for fusion: (N, D) under mean aggregation, (M*N, D) otherwise.
    Var<T> motion_tokens(Tape<T>& t, const std::vector<MotionMatrix>& conditioned) const {
        auto seq = motion_.encode(t, conditioned, cfg_.fusion.position);
        return aggregate(seq);
    }

    Var<T> aggregate(Var<T> seq) const {
        const auto& s = seq.value().shape();
        if (cfg_.fusion.aggregator == Aggregator::mean_pool) return aggregate_motion(seq);
        return ad::reshape(seq, {s[0] * s[1], s[2]});
    }

    /// Frame tokens used as fusion queries.
    Var<T> frame_tokens(Tape<T>& t, const FrameRGB& iframe) const {
        auto tokens = frame_.encode(t, iframe);
        return cfg_.fusion.unpooled_query ? tokens : frame_.pool(tokens, cfg_.fusion.pool_k);
    }

    /// Fusion of precomputed frame queries and motion keys/values.
    Var<T> fuse(Var<T> frame_q, Var<T> motion_kv) const {
        auto fused = fusion_(frame_q, motion_kv, cfg_.motion.grid());
        return cfg_.fusion.unpooled_query ? frame_.pool(fused, cfg_.fusion.pool_k) : fused;
    }

    /// GOP feature (T, D) on a caller-owned tape.
    Var<T> encode_gop(Tape<T>& t, const Gop& gop) const {
        return fuse(frame_tokens(t, gop.iframe), motion_tokens(t, motion_inputs(gop)));
    }

    Var<T> project(Var<T> feature) const { return projector_(feature); }

    GopFeature<T> encode(const Gop& gop, std::size_t index) const {
        Tape<T> t;
        auto v = encode_gop(t, gop);
        if (!v.value().all_finite()) {
            throw Error(Errc::NonFiniteValue, "GOP " + std::to_string(index) + " produced non-finite features");
        }
        return {v.value(), index};
    }

    std::vector<GopFeature<T>> encode_stream(const GopStream& s, std::size_t max_gops) const {
        require(s.block_size == cfg_.block_size, Errc::Precondition, "stream block size differs from encoder config");
        require(s.gops.size() <= max_gops, Errc::Precondition,
                "stream has " + std::to_string(s.gops.size()) + " GOPs, limit is " + std::to_string(max_gops));
        std::vector<GopFeature<T>> out(s.gops.size());
        for (std::size_t g = 0; g < s.gops.size(); ++g) out[g] = encode(s.gops[g], g);
        return out;
    }

    AssembledSequence<T> assemble_sequence(const std::vector<GopFeature<T>>& features) const {
        require(!features.empty(), Errc::EmptySequence, "assemble_sequence: no GOP features");
        AssembledSequence<T> seq;
        const std::size_t d = features.front().tokens.cols();
        for (std::size_t k = 0; k < features.size(); ++k) {
            require(features[k].tokens.cols() == d, Errc::ShapeMismatch, "GOP features differ in width");
            Tape<T> t;
            auto y = projector_(t.constant(features[k].tokens));
            seq.segments.push_back({segment_prompt(k + 1), y.value()});
        }
        return seq;
    }

private:
    EncoderConfig cfg_;
    ParamStore<T> params_;
    FrameEncoder<T> frame_;
    MotionEncoder<T> motion_;
    Fusion<T> fusion_;
    Projector<T> projector_;
};

// ---------------------------------------------------------------------------
// Feature dump: "GFTR" | u32 segments | per segment: u16 prompt length, prompt,
// u32 T, u32 D, T*D f32.

inline constexpr std::string_view kGftrMagic = "GFTR";

template <class T>
std::vector<std::uint8_t> write_gftr(const AssembledSequence<T>& seq) {
    ByteWriter w;
    w.magic(kGftrMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.segments.size()));
    for (const auto& s : seq.segments) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(s.prompt.size()));
        w.raw(std::span(reinterpret_cast<const std::uint8_t*>(s.prompt.data()), s.prompt.size()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.tokens.rows()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.tokens.cols()));
        for (const T& v : s.tokens.vec()) w.put<float>(static_cast<float>(v));
    }
    return w.take();
}

inline AssembledSequence<float> read_gftr(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kGftrMagic);
    AssembledSequence<float> seq;
    const auto n = r.get<std::uint32_t>("segment count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = r.get<std::uint16_t>("prompt length");
        auto pb = r.raw(len, "prompt");
        std::string prompt(pb.begin(), pb.end());
        const auto rows = r.get<std::uint32_t>("T");
        const auto cols = r.get<std::uint32_t>("D");
        Tensor<float> t({rows, cols});
        for (auto& v : t.vec()) v = r.get<float>("token value");
        seq.segments.push_back({std::move(prompt), std::move(t)});
    }
    if (!r.at_end()) {
        throw Error(Errc::CorruptStream, "trailing bytes after last segment", r.pos());
    }
    return seq;
}

}  // namespace gopstream
