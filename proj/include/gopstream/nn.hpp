#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "gopstream/autodiff.hpp"
#include "gopstream/bytes.hpp"

namespace gopstream::ad {

// ---------------------------------------------------------------------------
// Seeded initialisation. Every parameter draws from its own PRNG stream keyed
// by (global seed, parameter name), so adding a module never shifts the
// initial values of the others.

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 param_stream(std::uint64_t seed, std::string_view name) {
    return std::mt19937_64(splitmix64(seed ^ fnv1a(name)));
}

template <class T>
Tensor<T> init_uniform(Shape s, T bound, std::uint64_t seed, std::string_view name) {
    auto rng = param_stream(seed, name);
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    Tensor<T> t(std::move(s));
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

template <class T>
Tensor<T> init_normal(Shape s, T stddev, std::uint64_t seed, std::string_view name) {
    auto rng = param_stream(seed, name);
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Tensor<T> t(std::move(s));
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

// ---------------------------------------------------------------------------
// Layers. Each layer keeps pointers into a ParamStore owned by the model.

template <class T>
struct Linear {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
           bool zero_init = false, bool bias = true) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in));
        w = &ps.add(name + ".w", zero_init ? Tensor<T>({in, out}) : init_uniform<T>({in, out}, bound, seed, name + ".w"));
        if (bias) {
            b = &ps.add(name + ".b", zero_init ? Tensor<T>({out}) : init_uniform<T>({out}, bound, seed, name + ".b"));
        }
    }

    std::size_t in_dim() const { return w->value.dim(0); }
    std::size_t out_dim() const { return w->value.dim(1); }

    Var<T> operator()(Var<T> x) const {
        auto& t = *x.tape;
        if (b == nullptr) {
            return linear(x, t.param(*w));
        }
        return linear(x, t.param(*w), t.param(*b));
    }
};

template <class T>
struct LayerNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    T eps = T(1e-5);

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t d) {
        gamma = &ps.add(name + ".gamma", Tensor<T>({d}, T(1)));
        beta = &ps.add(name + ".beta", Tensor<T>({d}, T(0)));
    }

    Var<T> operator()(Var<T> x) const {
        auto& t = *x.tape;
        return layer_norm(x, t.param(*gamma), t.param(*beta), eps);
    }
};

/// Multi-head attention with q/k/v/o projections. Inputs are (N, D) or
/// (B, N, D). The key projection has no bias: softmax is invariant to it.
template <class T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t h, std::uint64_t seed)
        : q(ps, name + ".q", d, d, seed),
          k(ps, name + ".k", d, d, seed, false, false),
          v(ps, name + ".v", d, d, seed),
          o(ps, name + ".o", d, d, seed),
          heads(h) {
        if (h == 0 || d % h != 0) {
            throw Error(Errc::HeadsMismatch,
                        "width " + std::to_string(d) + " not divisible by " + std::to_string(h) + " heads");
        }
    }

    Var<T> operator()(Var<T> xq, Var<T> xkv) const {
        return o(scaled_dot_product_attention(q(xq), k(xkv), v(xkv), heads));
    }
};

template <class T>
struct FeedForward {
    Linear<T> fc1, fc2;

    FeedForward() = default;
    FeedForward(ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t hidden, std::uint64_t seed,
                bool zero_init_out = false)
        : fc1(ps, name + ".fc1", d, hidden, seed), fc2(ps, name + ".fc2", hidden, d, seed, zero_init_out) {}

    Var<T> operator()(Var<T> x) const { return fc2(gelu(fc1(x))); }
};

/// Pre-LN block: x + Attn(LN(x)), then x + FFN(LN(x)).
template <class T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    FeedForward<T> ffn;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t heads,
                     std::uint64_t seed)
        : ln1(ps, name + ".ln1", d),
          ln2(ps, name + ".ln2", d),
          attn(ps, name + ".attn", d, heads, seed),
          ffn(ps, name + ".ffn", d, 4 * d, seed) {}

    Var<T> operator()(Var<T> x) const {
        auto h = ln1(x);
        x = add(x, attn(h, h));
        return add(x, ffn(ln2(x)));
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: "CKPT" | u32 count | per parameter: u16 name length, name,
// u8 rank, rank x u32 extents, f32 payload.

inline constexpr std::string_view kCkptMagic = "CKPT";

template <class T>
std::vector<std::uint8_t> save_checkpoint(const ParamStore<T>& ps) {
    ByteWriter w;
    w.magic(kCkptMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
    for (const auto& p : ps) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
        w.raw(std::span(reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
        for (auto e : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
        for (const T& v : p.value.vec()) w.put<float>(static_cast<float>(v));
    }
    return w.take();
}

struct CkptEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline std::vector<CkptEntry> parse_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kCkptMagic);
    const auto count = r.get<std::uint32_t>("parameter count");
    std::vector<CkptEntry> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        CkptEntry e;
        const auto len = r.get<std::uint16_t>("name length");
        auto nb = r.raw(len, "parameter name");
        e.name.assign(nb.begin(), nb.end());
        const auto rank = r.get<std::uint8_t>("rank");
        for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>("extent"));
        e.values.resize(numel(e.shape));
        for (auto& v : e.values) v = r.get<float>("payload");
        out.push_back(std::move(e));
    }
    if (!r.at_end()) {
        throw Error(Errc::CorruptStream, "trailing bytes after last parameter", r.pos());
    }
    return out;
}

/// Copies every checkpoint entry whose name starts with `prefix` into the
/// store. Returns the number of parameters loaded. With `strict`, an entry
/// missing from the store is an error; otherwise it is skipped.
template <class T>
std::size_t load_checkpoint(ParamStore<T>& ps, std::span<const std::uint8_t> bytes, std::string_view prefix = "",
                            bool strict = true) {
    std::size_t loaded = 0;
    for (auto& e : parse_checkpoint(bytes)) {
        if (!e.name.starts_with(prefix)) continue;
        Parameter<T>* p = ps.find(e.name);
        if (p == nullptr) {
            if (strict) throw Error(Errc::ShapeMismatch, "checkpoint parameter '" + e.name + "' not in model");
            continue;
        }
        if (p->value.shape() != e.shape) {
            throw Error(Errc::ShapeMismatch, "checkpoint parameter '" + e.name + "' has shape " +
                                                 shape_str(e.shape) + ", model expects " +
                                                 shape_str(p->value.shape()));
        }
        for (std::size_t i = 0; i < e.values.size(); ++i) p->value[i] = static_cast<T>(e.values[i]);
        ++loaded;
    }
    return loaded;
}

}  // namespace gopstream::ad
