#include <gtest/gtest.h>

#include <random>

#include "gopstream/gop_encoder.hpp"
#include "gopstream/gradcheck.hpp"
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

// Default token geometry (378 / 14 = 27 grid, 96 -> 98 / 7 = 14 motion grid) at
// a narrow width so tests stay fast.
EncoderConfig narrow_config() {
    EncoderConfig c;
    c.frame.hidden = 8;
    c.frame.heads = 2;
    c.frame.layers = 1;
    c.motion.hidden = 8;
    c.motion.heads = 2;
    c.motion.layers = 1;
    c.seed = 3;
    return c;
}

// Small geometry for double-precision gradient checks.
EncoderConfig tiny_config() {
    EncoderConfig c;
    c.frame = {56, 14, 8, 1, 2};  // 4x4 grid
    c.motion = {12, 7, 8, 1, 2, 4};
    c.fusion.pool_k = 2;
    c.projector.out_dim = 6;
    c.seed = 5;
    return c;
}

Gop moving_gop(std::uint32_t size, std::size_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RawVideo v{size, size, 4, {}};
    auto base = testutil::random_frame(size, size, rng);
    v.frames.push_back(base);
    for (std::size_t i = 1; i < frames; ++i) {
        base = testutil::shifted(base, 1, static_cast<int>(i % 2), base);
        v.frames.push_back(base);
    }
    return encode_gop_stream(v, {static_cast<std::uint32_t>(frames), 4, 8}).gops.front();
}

// Each row band drifts at its own speed (toroidal wrap), so motion varies
// across the grid and every motion token differs.
Gop sheared_gop(std::uint32_t size, std::size_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto base = testutil::random_frame(size, size, rng);
    RawVideo v{size, size, 4, {}};
    for (std::size_t i = 0; i < frames; ++i) {
        FrameRGB f(size, size);
        for (std::uint32_t y = 0; y < size; ++y) {
            const auto speed = static_cast<std::int64_t>(y / 8 % 4) - 1;
            for (std::uint32_t x = 0; x < size; ++x) {
                const auto sx = static_cast<std::uint32_t>(
                    ((static_cast<std::int64_t>(x) - speed * static_cast<std::int64_t>(i)) % size + size) % size);
                for (int c = 0; c < 3; ++c) f.at(x, y, c) = base.at(sx, y, c);
            }
        }
        v.frames.push_back(std::move(f));
    }
    return encode_gop_stream(v, {static_cast<std::uint32_t>(frames), 4, 8}).gops.front();
}

template <class T>
void expect_bit_equal(ad::Tensor<T> a, ad::Tensor<T> b) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << "index " << i;
}

}  // namespace

TEST(Config, DefaultTokenGeometry) {
    EncoderConfig c;
    EXPECT_EQ(c.frame.grid(), 27u);
    EXPECT_EQ(c.motion.padded(), 98u);
    EXPECT_EQ(c.motion.tokens(), 196u);
    EXPECT_EQ(c.tokens_per_gop(), 81u);
    EXPECT_EQ(tokens_per_gop(27, 1), 729u);
    EXPECT_EQ(tokens_per_gop(27, 2), 196u);
    EXPECT_EQ(tokens_per_gop(27, 4), 49u);
}

TEST(Config, RejectsInvalidCombinations) {
    EncoderConfig c;
    c.frame.patch = 13;
    EXPECT_EQ(code_of([&] { c.validate(); }), Errc::Precondition);
    c = {};
    c.motion.hidden = 128;
    EXPECT_EQ(code_of([&] { c.validate(); }), Errc::ShapeMismatch);
    c = {};
    c.frame.heads = 3;
    EXPECT_EQ(code_of([&] { c.validate(); }), Errc::HeadsMismatch);
    EXPECT_EQ(code_of([] { (void)parse_fusion("gated"); }), Errc::UnknownMode);
}

TEST(FrameEncoder, DefaultWidthTokenCountsAcrossPoolingKernels) {
    EncoderConfig c;
    GopEncoder<float> enc(c);
    std::mt19937_64 rng(1);
    const auto frame = testutil::random_frame(384, 384, rng);
    ad::Tape<float> t;
    auto tokens = enc.frame_encoder().encode(t, frame);
    EXPECT_EQ(tokens.value().shape(), (Shape{729, 256}));
    const std::size_t expect[] = {729, 196, 81, 49};
    for (std::uint32_t k = 1; k <= 4; ++k) {
        auto pooled = enc.frame_encoder().pool(tokens, k);
        EXPECT_EQ(pooled.value().shape(), (Shape{expect[k - 1], 256}));
    }
    expect_bit_equal(enc.frame_encoder().pool(tokens, 1).value(), tokens.value());
}

TEST(FrameEncoder, IdenticalFramesGiveIdenticalTokens) {
    GopEncoder<float> enc(narrow_config());
    std::mt19937_64 rng(2);
    const auto f = testutil::random_frame(64, 64, rng);
    ad::Tape<float> t;
    expect_bit_equal(enc.frame_encoder().encode(t, f).value(), enc.frame_encoder().encode(t, f).value());
}

TEST(MotionEncoder, BlankMotionIsDeterministicAndNonzero) {
    GopEncoder<double> enc(narrow_config());
    const auto m = enc.motion_encoder().condition(blank_motion(16, 16), 8);
    ad::Tape<double> t;
    auto a = enc.motion_encoder().encode(t, {m}, PositionMode::pre_fusion);
    auto b = enc.motion_encoder().encode(t, {m}, PositionMode::pre_fusion);
    EXPECT_EQ(a.value().shape(), (Shape{1, 196, 8}));
    expect_bit_equal(a.value(), b.value());
    double mx = 0;
    for (double v : a.value().vec()) mx = std::max(mx, std::abs(v));
    EXPECT_GT(mx, 0.0);
}

TEST(MotionEncoder, TimeIndexMattersOnlyWithPositions) {
    GopEncoder<double> enc(narrow_config());
    const auto gop = moving_gop(32, 3, 4);
    auto ms = enc.motion_inputs(gop);
    ASSERT_EQ(ms.size(), 2u);
    auto m1 = ms[0], m2 = ms[0];
    m1.t = 1;
    m2.t = 2;
    auto diff = [&](PositionMode mode) {
        ad::Tape<double> t;
        const auto a = enc.motion_encoder().encode(t, {m1}, mode).value();
        const auto& b = enc.motion_encoder().encode(t, {m2}, mode).value();
        double d = 0;
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
        return d;
    };
    EXPECT_GE(diff(PositionMode::pre_fusion), 1e-6);
    EXPECT_GE(diff(PositionMode::post_fusion), 1e-6);
    EXPECT_EQ(diff(PositionMode::no_pos), 0.0);
}

TEST(MotionEncoder, RejectsTimeIndexOutsideTable) {
    GopEncoder<double> enc(narrow_config());
    auto m = enc.motion_encoder().condition(blank_motion(4, 4), 8);
    ad::Tape<double> t;
    m.t = 0;
    EXPECT_EQ(code_of([&] { (void)enc.motion_encoder().encode(t, {m}, PositionMode::pre_fusion); }),
              Errc::TimeIndexOutOfRange);
    m.t = 9;
    EXPECT_EQ(code_of([&] { (void)enc.motion_encoder().encode(t, {m}, PositionMode::pre_fusion); }),
              Errc::TimeIndexOutOfRange);
    m.t = 8;
    EXPECT_NO_THROW((void)enc.motion_encoder().encode(t, {m}, PositionMode::pre_fusion));
}

TEST(Aggregate, MeanOverTime) {
    ad::Tape<double> t;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    ad::Tensor<double> a({1, 4, 3}), b({1, 4, 3});
    for (auto& v : a.vec()) v = nd(rng);
    for (auto& v : b.vec()) v = nd(rng);
    expect_bit_equal(aggregate_motion(t.constant(a)).value(), a.reshaped({4, 3}));
    ad::Tensor<double> ab({2, 4, 3});
    std::copy(a.vec().begin(), a.vec().end(), ab.vec().begin());
    std::copy(b.vec().begin(), b.vec().end(), ab.vec().begin() + 12);
    const auto m = aggregate_motion(t.constant(ab)).value();
    for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(m[i], (a[i] + b[i]) / 2);
    ad::Tensor<double> same({5, 4, 3});
    for (std::size_t k = 0; k < 5; ++k) std::copy(a.vec().begin(), a.vec().end(), same.vec().begin() + 12 * k);
    const auto s = aggregate_motion(t.constant(same)).value();
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(s[i], a[i], 1e-15);
    EXPECT_EQ(code_of([&] { (void)aggregate_motion(t.constant(ad::Tensor<double>({0, 4, 3}))); }),
              Errc::EmptySequence);
}

TEST(Fusion, CrossAttentionAtInitIsFrameIdentityForAnyMotion) {
    auto cfg = narrow_config();
    GopEncoder<float> enc(cfg);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto gop = moving_gop(48, 1 + seed * 2, seed);
        ad::Tape<float> t;
        auto fused = enc.encode_gop(t, gop);
        auto frame_only = enc.frame_encoder().pool(enc.frame_encoder().encode(t, gop.iframe), cfg.fusion.pool_k);
        EXPECT_EQ(fused.value().shape(), (Shape{81, 8}));
        expect_bit_equal(fused.value(), frame_only.value());
    }
}

TEST(Fusion, NoneModeReturnsPooledFrameTokens) {
    auto cfg = narrow_config();
    cfg.fusion.mode = FusionMode::none;
    GopEncoder<double> enc(cfg);
    const auto gop = moving_gop(32, 5, 9);
    ad::Tape<double> t;
    expect_bit_equal(enc.encode_gop(t, gop).value(),
                     enc.frame_encoder().pool(enc.frame_encoder().encode(t, gop.iframe), 3).value());
}

TEST(Fusion, FullSequenceKeepsEveryMotionFrame) {
    auto cfg = narrow_config();
    cfg.fusion.aggregator = Aggregator::full_sequence;
    GopEncoder<double> enc(cfg);
    const auto gop = moving_gop(32, 8, 10);
    ad::Tape<double> t;
    EXPECT_EQ(enc.motion_tokens(t, enc.motion_inputs(gop)).value().shape(), (Shape{7 * 196, 8}));
    cfg.fusion.aggregator = Aggregator::mean_pool;
    GopEncoder<double> mean_enc(cfg);
    EXPECT_EQ(mean_enc.motion_tokens(t, mean_enc.motion_inputs(gop)).value().shape(), (Shape{196, 8}));
}

TEST(Fusion, AddAndConcatResampleMotionToFrameGrid) {
    for (auto mode : {FusionMode::add, FusionMode::concat}) {
        auto cfg = narrow_config();
        cfg.fusion.mode = mode;
        GopEncoder<double> enc(cfg);
        const auto gop = moving_gop(32, 4, 11);
        ad::Tape<double> t;
        auto f = enc.encode_gop(t, gop);
        EXPECT_EQ(f.value().shape(), (Shape{81, 8}));
        EXPECT_TRUE(f.value().all_finite());
    }
}

TEST(Fusion, UnpooledQueryPoolsAfterFusion) {
    auto cfg = narrow_config();
    cfg.fusion.unpooled_query = true;
    GopEncoder<float> enc(cfg);
    const auto gop = moving_gop(32, 3, 12);
    ad::Tape<float> t;
    EXPECT_EQ(enc.encode_gop(t, gop).value().shape(), (Shape{81, 8}));
}

TEST(EncodeGop, DefaultConfigGivesEightyOneByTwoFiftySix) {
    GopEncoder<float> enc(EncoderConfig{});
    const auto gop = moving_gop(384, 8, 13);
    ASSERT_EQ(gop.pframes.size(), 7u);
    const auto f = enc.encode(gop, 0);
    EXPECT_EQ(f.tokens.shape(), (Shape{81, 256}));
}

TEST(EncodeGop, ImageGopMatchesBlankMotionPath) {
    auto cfg = narrow_config();
    cfg.fusion.mode = FusionMode::add;  // non-identity fusion so motion matters
    GopEncoder<double> enc(cfg);
    std::mt19937_64 rng(14);
    Gop image{testutil::random_frame(32, 32, rng), {}};
    ad::Tape<double> t;
    auto direct = enc.fuse(enc.frame_tokens(t, image.iframe),
                           enc.motion_tokens(t, {enc.motion_encoder().condition(blank_motion(8, 8), 8)}));
    expect_bit_equal(enc.encode_gop(t, image).value(), direct.value());
    EXPECT_EQ(enc.motion_inputs(image).size(), 1u);
}

TEST(EncodeGop, DeterministicAcrossInstances) {
    auto cfg = narrow_config();
    cfg.fusion.mode = FusionMode::concat;
    GopEncoder<float> a(cfg), b(cfg);
    const auto gop = moving_gop(32, 6, 15);
    expect_bit_equal(a.encode(gop, 0).tokens, b.encode(gop, 0).tokens);
}

TEST(Projector, SingleLayerIdentityAndTwoLayerShape) {
    auto cfg = narrow_config();
    cfg.projector.layers = 1;
    GopEncoder<double> ident(cfg);
    std::mt19937_64 rng(16);
    std::normal_distribution<double> nd;
    ad::Tensor<double> x({81, 8});
    for (auto& v : x.vec()) v = nd(rng);
    ad::Tape<double> t;
    expect_bit_equal(ident.project(t.constant(x)).value(), x);

    cfg.projector = {12, 2};
    GopEncoder<double> mlp(cfg);
    EXPECT_EQ(mlp.project(t.constant(x)).value().shape(), (Shape{81, 12}));
}

TEST(Assemble, SegmentsAndTokenTotals) {
    GopEncoder<float> enc(narrow_config());
    const auto gop = moving_gop(32, 3, 17);
    const auto one = enc.encode(gop, 0);
    for (auto [n, total] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 81}, {2, 162}, {4, 324}, {8, 648}}) {
        std::vector<GopFeature<float>> feats(n, one);
        const auto seq = enc.assemble_sequence(feats);
        ASSERT_EQ(seq.segments.size(), n);
        EXPECT_EQ(seq.total_tokens(), total);
        for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(seq.segments[k].prompt, "Segment " + std::to_string(k + 1));
    }
    EXPECT_EQ(code_of([&] { (void)enc.assemble_sequence({}); }), Errc::EmptySequence);
}

TEST(Assemble, TokenCountPerKernelAcrossStream) {
    for (std::uint32_t k = 1; k <= 4; ++k) {
        auto cfg = narrow_config();
        cfg.fusion.pool_k = k;
        GopEncoder<float> enc(cfg);
        const auto f = enc.encode(moving_gop(32, 2, 18), 0);
        EXPECT_EQ(f.tokens.rows(), tokens_per_gop(27, k));
        EXPECT_EQ(f.tokens.rows(), cfg.tokens_per_gop());
    }
}

TEST(Gftr, RoundTripsAndMatchesLayout) {
    GopEncoder<float> enc(narrow_config());
    const auto f = enc.encode(moving_gop(32, 3, 19), 0);
    const auto seq = enc.assemble_sequence({f, f});
    const auto bytes = write_gftr(seq);
    EXPECT_EQ(bytes.size(), 8u + 2 * (2 + 9 + 8 + 81 * 8 * 4));
    const auto back = read_gftr(bytes);
    ASSERT_EQ(back.segments.size(), 2u);
    EXPECT_EQ(back.segments[1].prompt, "Segment 2");
    expect_bit_equal(back.segments[0].tokens, seq.segments[0].tokens);
}

TEST(EndToEnd, GradientsMatchFiniteDifferencesThroughWholeGraph) {
    auto cfg = tiny_config();
    GopEncoder<double> enc(cfg);
    // The fusion FFN output starts at zero, which would cut every motion
    // gradient; give it random values for the check.
    std::mt19937_64 rng(20);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto& p : enc.params()) {
        if (p.name.starts_with("fusion.ffn.fc2")) {
            for (auto& v : p.value.vec()) v = nd(rng);
        }
    }
    const std::vector<Gop> gops = {sheared_gop(32, 4, 21), sheared_gop(32, 3, 22)};
    ad::Tensor<double> head({6, 4});
    for (auto& v : head.vec()) v = nd(rng);

    auto loss = [&](ad::Tape<double>& t) {
        std::vector<Var<double>> pooled;
        for (const auto& g : gops) pooled.push_back(ad::mean_over_axis(enc.project(enc.encode_gop(t, g)), 0));
        auto feats = ad::reshape(ad::concat_last_dim(ad::reshape(pooled[0], {1, 6}), ad::reshape(pooled[1], {1, 6})),
                                 {2, 6});
        return ad::cross_entropy(ad::matmul(feats, t.constant(head)), {1, 3});
    };
    std::vector<Parameter<double>*> all;
    for (auto& p : enc.params()) all.push_back(&p);
    ad::GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.max_coords_per_param = 12;
    const auto rep = ad::grad_check(loss, all, opt);
    EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "] analytic "
                                       << rep.analytic_at_worst << " numeric " << rep.numeric_at_worst;

    ad::Tape<double> t;
    ad::GradStore<double> g;
    t.backward(loss(t), g);
    for (const char* prefix : {"motion.embed.w", "motion.block0.attn.q.w", "fusion.attn.v.w", "fusion.ffn.fc2.w",
                               "projector.fc1.w", "projector.fc2.w", "frame.embed.w"}) {
        const auto* p = enc.params().find(prefix);
        ASSERT_NE(p, nullptr) << prefix;
        const auto* gr = g.get(p);
        ASSERT_NE(gr, nullptr) << prefix;
        double mx = 0;
        for (double v : *gr) mx = std::max(mx, std::abs(v));
        EXPECT_GT(mx, 0.0) << prefix;
    }
}
