#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gopstream/gop_encoder.hpp"
#include "gopstream/nn.hpp"
#include "gopstream/optim.hpp"
#include "gopstream/parallel.hpp"
#include "gopstream/synth_motion.hpp"
#include "gopstream/warmup.hpp"

namespace gopstream {

// Linear-probe protocol over GOP features. Frame and motion encoders stay
// frozen; the fusion layer and a linear classifier on the mean-pooled fused
// tokens are trained. Only the first GOP of each clip is used, whose I-frame
// is the label-free shared first frame under shared_start.

struct ProbeCell {
    FusionMode fusion = FusionMode::crossattn;
    PositionMode position = PositionMode::pre_fusion;
    Aggregator aggregator = Aggregator::mean_pool;
    bool warmup = true;
    std::uint32_t motion_layers = 2;
    std::uint32_t pool_k = 3;
};

struct ProbeResult {
    ProbeCell cell;
    EvalResult val;
    std::size_t tokens_per_gop = 0;  // analytic
    std::size_t measured_tokens = 0; // rows of an actual fused feature
    std::size_t warmup_params_loaded = 0;
    double wall_ms = 0;
};

/// Encoder config for a cell: `base` supplies widths, geometry and seed.
inline EncoderConfig cell_config(const EncoderConfig& base, const ProbeCell& c) {
    EncoderConfig e = base;
    e.fusion.mode = c.fusion;
    e.fusion.position = c.position;
    e.fusion.aggregator = c.aggregator;
    e.fusion.pool_k = c.pool_k;
    e.motion.layers = c.motion_layers;
    return e;
}

namespace probe_detail {

struct Cached {
    Tensor<float> frame, motion;  // fusion inputs
    std::size_t label = 0;
};

inline std::vector<Cached> cache_inputs(const GopEncoder<float>& enc, const std::vector<const DatasetEntry*>& clips,
                                        const CodecParams& codec) {
    std::vector<Cached> out(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
        auto& clip = clips[i]->clip;
        // Only the first GOP is needed; encode just its frames.
        RawVideo head = clip.video;
        head.frames.resize(std::min<std::size_t>(head.frames.size(), codec.keyframe_interval));
        const auto stream = encode_gop_stream(head, codec);
        const auto& gop = stream.gops.front();
        Tape<float> t;
        out[i].frame = enc.frame_tokens(t, gop.iframe).value();
        out[i].motion = enc.motion_tokens(t, enc.motion_inputs(gop)).value();
        out[i].label = static_cast<std::size_t>(clip.label);
    });
    return out;
}

}  // namespace probe_detail

class Probe {
public:
    Probe(const EncoderConfig& cfg, std::size_t classes)
        : enc_(cfg), head_(head_params_, "probe.head", cfg.frame.hidden, classes, cfg.seed) {
        enc_.params().set_trainable("", false);
        enc_.params().set_trainable("fusion.", true);
    }

    GopEncoder<float>& encoder() { return enc_; }

    /// (B, C) logits for cached clips.
    Var<float> logits(Tape<float>& t, const std::vector<const probe_detail::Cached*>& batch) const {
        std::vector<Var<float>> pooled;
        for (const auto* c : batch) {
            auto fused = enc_.fuse(t.constant(c->frame), t.constant(c->motion));
            pooled.push_back(ad::reshape(ad::mean_over_axis(fused, 0), {1, fused.value().cols()}));
        }
        return head_(ad::concat_rows(pooled));
    }

    EvalResult evaluate(const std::vector<probe_detail::Cached>& data, std::size_t batch) const {
        std::vector<std::size_t> labels(data.size()), pred(data.size());
        const std::size_t chunks = (data.size() + batch - 1) / batch;
        parallel_for(chunks, [&](std::size_t k) {
            std::vector<const probe_detail::Cached*> b;
            for (std::size_t i = k * batch; i < std::min(data.size(), (k + 1) * batch); ++i) b.push_back(&data[i]);
            Tape<float> t;
            const auto l = logits(t, b).value();
            for (std::size_t i = 0; i < b.size(); ++i) {
                labels[k * batch + i] = b[i]->label;
                pred[k * batch + i] = argmax_row(l.ptr() + i * l.cols(), l.cols());
            }
        });
        return summarize_predictions(labels, pred, head_.out_dim());
    }

    void train(const std::vector<probe_detail::Cached>& data, const TrainConfig& cfg) {
        ad::Adam<float> opt_enc({cfg.lr}), opt_head({cfg.lr});
        std::vector<std::size_t> order(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = ad::param_stream(cfg.seed, "probe.shuffle");
        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
                std::vector<const probe_detail::Cached*> b;
                std::vector<std::size_t> labels;
                for (std::size_t i = lo; i < std::min(order.size(), lo + cfg.batch); ++i) {
                    b.push_back(&data[order[i]]);
                    labels.push_back(b.back()->label);
                }
                Tape<float> t;
                auto loss = ad::cross_entropy(logits(t, b), labels);
                if (!std::isfinite(loss.value()[0])) {
                    throw Error(Errc::NonFiniteLoss, "probe loss became non-finite at epoch " + std::to_string(epoch));
                }
                ad::GradStore<float> g;
                t.backward(loss, g);
                opt_enc.step(enc_.params(), g);
                opt_head.step(head_params_, g);
            }
        }
    }

private:
    GopEncoder<float> enc_;
    ParamStore<float> head_params_;
    ad::Linear<float> head_;
};

/// Runs one ablation cell. `warmup_ckpt` supplies motion.* weights when the
/// cell asks for warmup; parameters absent from it (extra layers) keep their
/// random initialisation.
inline ProbeResult run_probe(const EncoderConfig& base, const ProbeCell& cell, const SynthDataset& ds,
                             const CodecParams& codec, const TrainConfig& train,
                             const std::vector<std::uint8_t>* warmup_ckpt) {
    const auto t0 = std::chrono::steady_clock::now();
    ProbeResult r;
    r.cell = cell;
    const auto cfg = cell_config(base, cell);
    Probe probe(cfg, kCategories.size());
    if (cell.warmup) {
        require(warmup_ckpt != nullptr, Errc::Precondition, "warmup cell needs a warmup checkpoint");
        r.warmup_params_loaded = ad::load_checkpoint(probe.encoder().params(), *warmup_ckpt, "motion.", false);
        require(r.warmup_params_loaded > 0, Errc::ShapeMismatch, "warmup checkpoint has no motion parameters");
    }
    const auto train_set = probe_detail::cache_inputs(probe.encoder(), ds.subset(Split::train), codec);
    const auto val_set = probe_detail::cache_inputs(probe.encoder(), ds.subset(Split::val), codec);

    r.tokens_per_gop = cfg.tokens_per_gop();
    {
        Tape<float> t;
        r.measured_tokens =
            probe.encoder().fuse(t.constant(val_set.front().frame), t.constant(val_set.front().motion)).value().rows();
    }
    if (r.measured_tokens != r.tokens_per_gop) {
        throw Error(Errc::ShapeMismatch, "fused feature has " + std::to_string(r.measured_tokens) +
                                             " tokens, expected " + std::to_string(r.tokens_per_gop));
    }
    probe.train(train_set, train);
    r.val = probe.evaluate(val_set, train.batch);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// One JSON row per cell: the exact config plus accuracy columns.
inline nlohmann::json probe_row(const EncoderConfig& base, const ProbeResult& r, const TrainConfig& train) {
    nlohmann::json row;
    row["config"] = to_json(cell_config(base, r.cell));
    row["warmup"] = r.cell.warmup;
    row["train"] = {{"lr", train.lr}, {"batch", train.batch}, {"epochs", train.epochs}, {"seed", train.seed}};
    row["tokens_per_gop"] = r.tokens_per_gop;
    row["measured_tokens"] = r.measured_tokens;
    for (std::size_t c = 0; c < kCategories.size(); ++c) {
        row[std::string(short_name(kCategories[c]))] = r.val.per_class[c] ? nlohmann::json(*r.val.per_class[c]) : nullptr;
    }
    row["Avg."] = r.val.average;
    row["wall_ms"] = r.wall_ms;
    return row;
}

}  // namespace gopstream
