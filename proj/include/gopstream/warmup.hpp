#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gopstream/gop_codec.hpp"
#include "gopstream/gop_encoder.hpp"
#include "gopstream/motion_field.hpp"
#include "gopstream/nn.hpp"
#include "gopstream/optim.hpp"
#include "gopstream/parallel.hpp"
#include "gopstream/synth_motion.hpp"

namespace gopstream {

/// Motion-only view of a clip. Nothing here can carry pixels.
struct ClipMotion {
    std::vector<MotionMatrix> motion;  // macroblock resolution, t = 1..M
    std::size_t label = 0;
};

/// Per-GOP sampled motion fields concatenated in temporal order, then
/// uniformly subsampled to max_m with time slots renumbered 1..M.
inline std::vector<MotionMatrix> featurize_clip_motion(const GopStream& s, std::size_t max_m) {
    std::vector<MotionMatrix> all;
    for (const auto& g : s.gops) {
        auto part = sample_motion_frames(g, g.pframes.size() + 1, s.block_size);
        for (auto& m : part) all.push_back(std::move(m));
    }
    if (all.empty()) {
        all.push_back(blank_motion(s.width / s.block_size, s.height / s.block_size));
    }
    const auto idx = uniform_sample_indices(all.size(), max_m);
    std::vector<MotionMatrix> out;
    out.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out.push_back(std::move(all[idx[j]]));
        out.back().t = static_cast<std::uint32_t>(j + 1);
    }
    return out;
}

inline std::vector<MotionMatrix> featurize_clip_motion(const SynthClip& clip, const CodecParams& codec,
                                                       std::size_t max_m) {
    return featurize_clip_motion(encode_gop_stream(clip.video, codec), max_m);
}

/// Label-preserving transforms of a clip's motion: 0 identity, 1 rotate
/// 180 degrees, 2 mirror left-right and play backwards, 3 mirror top-bottom
/// and play backwards. Mirroring flips the sense of rotation and reversing
/// time flips it back, so all four categories keep their label. Reversal
/// negates each field in place, which ignores the sub-block shift of the
/// moving content.
inline ClipMotion transform_clip_motion(const ClipMotion& c, int kind) {
    require(kind >= 0 && kind < 4, Errc::Precondition, "transform kind must be 0..3");
    if (kind == 0) return c;
    ClipMotion out{{}, c.label};
    const bool flip_x = kind != 3, flip_y = kind != 2;
    const double sx = kind == 1 ? -1 : (kind == 2 ? 1 : -1);
    const double sy = kind == 1 ? -1 : (kind == 2 ? -1 : 1);
    for (const auto& m : c.motion) {
        MotionMatrix r(m.mw, m.mh, m.t);
        for (std::uint32_t y = 0; y < m.mh; ++y)
            for (std::uint32_t x = 0; x < m.mw; ++x) {
                const std::uint32_t ix = flip_x ? m.mw - 1 - x : x, iy = flip_y ? m.mh - 1 - y : y;
                r.at(y, x, 0) = sx * m.at(iy, ix, 0);
                r.at(y, x, 1) = sy * m.at(iy, ix, 1);
            }
        out.motion.push_back(std::move(r));
    }
    if (kind != 1) {
        std::reverse(out.motion.begin(), out.motion.end());
        for (std::size_t j = 0; j < out.motion.size(); ++j) out.motion[j].t = static_cast<std::uint32_t>(j + 1);
    }
    return out;
}

struct WarmupData {
    std::vector<ClipMotion> train, val;
};

inline WarmupData prepare_warmup_data(const SynthDataset& ds, const CodecParams& codec, std::size_t max_m) {
    std::vector<ClipMotion> all(ds.entries.size());
    parallel_for(all.size(), [&](std::size_t i) {
        all[i] = {featurize_clip_motion(ds.entries[i].clip, codec, max_m),
                  static_cast<std::size_t>(ds.entries[i].clip.label)};
    });
    WarmupData d;
    for (std::size_t i = 0; i < all.size(); ++i) {
        (ds.entries[i].split == Split::val ? d.val : d.train).push_back(std::move(all[i]));
    }
    return d;
}

/// Motion encoder plus classification head. Parameter names and initial
/// values match the motion half of a GopEncoder with the same config and
/// seed, so a warmup checkpoint loads straight into it.
template <class T>
class WarmupModel {
public:
    /// head_hidden = 0 gives a linear head; otherwise one gelu layer of that
    /// width sits between the pooled tokens and the logits.
    WarmupModel(const MotionEncoderConfig& cfg, std::size_t classes, std::uint64_t seed, PositionMode position,
                double search_radius, std::size_t head_hidden = 0)
        : encoder_(params_, cfg, seed), position_(position), radius_(search_radius) {
        if (head_hidden == 0) {
            head_ = ad::Linear<T>(params_, "warmup.head", cfg.hidden, classes, seed);
        } else {
            hidden_ = ad::Linear<T>(params_, "warmup.hidden", cfg.hidden, head_hidden, seed);
            head_ = ad::Linear<T>(params_, "warmup.head", head_hidden, classes, seed);
        }
    }

    WarmupModel(const WarmupModel&) = delete;
    WarmupModel& operator=(const WarmupModel&) = delete;

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const MotionEncoder<T>& encoder() const { return encoder_; }
    std::size_t classes() const { return head_.out_dim(); }

    /// (B, C) logits. Head input is the mean over every token of every
    /// motion frame of a clip.
    Var<T> logits(Tape<T>& t, const std::vector<const ClipMotion*>& batch) const {
        require(!batch.empty(), Errc::EmptySequence, "logits: empty batch");
        std::vector<MotionMatrix> ms;
        std::vector<std::size_t> counts;
        const std::size_t n = encoder_.cfg.tokens();
        for (const auto* c : batch) {
            require(!c->motion.empty(), Errc::EmptySequence, "clip without motion frames");
            for (const auto& m : c->motion) ms.push_back(encoder_.condition(m, radius_));
            counts.push_back(c->motion.size() * n);
        }
        auto x = encoder_.encode(t, ms, position_);
        x = ad::reshape(x, {ms.size() * n, encoder_.cfg.hidden});
        auto pooled = ad::segment_mean_rows(x, counts);
        if (hidden_.w != nullptr) pooled = ad::gelu(hidden_(pooled));
        return head_(pooled);
    }

private:
    ParamStore<T> params_;
    MotionEncoder<T> encoder_;
    ad::Linear<T> hidden_, head_;
    PositionMode position_;
    double radius_;
};

struct EvalResult {
    std::vector<std::optional<double>> per_class;  // empty slot: class absent
    double average = 0;                            // macro mean over present classes
    std::size_t correct = 0, total = 0;
};

inline EvalResult summarize_predictions(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& pred,
                                        std::size_t classes) {
    std::vector<std::size_t> hit(classes, 0), seen(classes, 0);
    EvalResult r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < classes, Errc::ValueOutOfRange, "label outside class range");
        ++seen[labels[i]];
        if (pred[i] == labels[i]) {
            ++hit[labels[i]];
            ++r.correct;
        }
    }
    r.total = labels.size();
    r.per_class.resize(classes);
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (seen[c] == 0) continue;
        r.per_class[c] = static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
        r.average += *r.per_class[c];
        ++present;
    }
    if (present) r.average /= static_cast<double>(present);
    return r;
}

inline std::size_t argmax_row(const float* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}
inline std::size_t argmax_row(const double* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

template <class T>
EvalResult evaluate(const WarmupModel<T>& model, const std::vector<ClipMotion>& data, std::size_t batch = 32) {
    std::vector<std::size_t> labels(data.size()), pred(data.size());
    const std::size_t chunks = (data.size() + batch - 1) / batch;
    parallel_for(chunks, [&](std::size_t k) {
        std::vector<const ClipMotion*> b;
        for (std::size_t i = k * batch; i < std::min(data.size(), (k + 1) * batch); ++i) b.push_back(&data[i]);
        Tape<T> t;
        const auto logits = model.logits(t, b).value();
        for (std::size_t i = 0; i < b.size(); ++i) {
            labels[k * batch + i] = b[i]->label;
            pred[k * batch + i] = argmax_row(logits.ptr() + i * logits.cols(), logits.cols());
        }
    });
    return summarize_predictions(labels, pred, model.classes());
}

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch = 32;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    std::size_t max_m = 8;
    // Gradient shards per batch. Fixed by config rather than thread count so
    // results do not depend on the machine.
    std::size_t shards = 1;
    // Draw one of the transform_clip_motion variants per clip and epoch.
    bool augment = true;

    void validate() const {
        require(lr >= 0 && std::isfinite(lr), Errc::Precondition, "lr must be finite and non-negative");
        require(batch >= 1, Errc::Precondition, "batch must be >= 1");
        require(epochs >= 1, Errc::Precondition, "epochs must be >= 1");
        require(max_m >= 1, Errc::Precondition, "max_m must be >= 1");
        require(shards >= 1 && shards <= batch, Errc::Precondition, "shards must lie in [1, batch]");
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0;
    EvalResult val;
};

struct TrainReport {
    EvalResult initial_val;  // before the first update
    std::vector<EpochMetrics> epochs;
};

inline nlohmann::json to_json(const EvalResult& r) {
    nlohmann::json pc = nlohmann::json::object();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto name = c < kCategories.size() ? std::string(to_string(kCategories[c])) : std::to_string(c);
        if (r.per_class[c]) pc[name] = *r.per_class[c];
    }
    return pc;
}

inline nlohmann::json metrics_json(const TrainReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : rep.epochs) {
        rows.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_acc", e.val.average},
                        {"per_class_acc", to_json(e.val)}});
    }
    return rows;
}

/// Mean cross-entropy training with Adam. `on_epoch` (optional) sees each
/// epoch's metrics as they are produced.
template <class T>
TrainReport train_warmup(WarmupModel<T>& model, const WarmupData& data, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    require(!data.train.empty(), Errc::EmptySequence, "train_warmup: empty training split");
    ad::Adam<T> opt({cfg.lr});
    TrainReport rep;
    if (!data.val.empty()) rep.initial_val = evaluate(model, data.val, cfg.batch);

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = ad::param_stream(cfg.seed, "warmup.shuffle");

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch);
            const std::size_t nb = hi - lo;
            const std::size_t shards = std::min(cfg.shards, nb);
            std::vector<ad::GradStore<T>> grads(shards);
            std::vector<double> losses(shards);
            std::vector<ClipMotion> aug;
            if (cfg.augment) {
                for (std::size_t i = lo; i < hi; ++i) {
                    aug.push_back(transform_clip_motion(data.train[order[i]], static_cast<int>(rng() % 4)));
                }
            }
            parallel_for(shards, [&](std::size_t s) {
                std::vector<const ClipMotion*> b;
                std::vector<std::size_t> labels;
                for (std::size_t i = lo + nb * s / shards; i < lo + nb * (s + 1) / shards; ++i) {
                    b.push_back(cfg.augment ? &aug[i - lo] : &data.train[order[i]]);
                    labels.push_back(b.back()->label);
                }
                Tape<T> t;
                // Shard losses are weighted so their sum is the batch mean.
                auto loss = ad::scale(ad::cross_entropy(model.logits(t, b), labels),
                                      static_cast<T>(b.size()) / static_cast<T>(nb));
                losses[s] = static_cast<double>(loss.value()[0]);
                t.backward(loss, grads[s]);
            });
            double batch_loss = 0;
            for (double l : losses) batch_loss += l;
            if (!std::isfinite(batch_loss)) {
                throw Error(Errc::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                                     std::to_string(lo / cfg.batch));
            }
            for (std::size_t s = 1; s < shards; ++s) grads[0].accumulate(grads[s]);
            opt.step(model.params(), grads[0]);
            loss_sum += batch_loss * static_cast<double>(nb);
        }
        EpochMetrics m{epoch, loss_sum / static_cast<double>(order.size()), {}};
        if (!data.val.empty()) m.val = evaluate(model, data.val, cfg.batch);
        rep.epochs.push_back(m);
        if (on_epoch) on_epoch(rep.epochs.back());
    }
    return rep;
}

/// Width used for training runs on a single CPU core. Token geometry matches
/// the default encoder; only the hidden size shrinks.
inline MotionEncoderConfig desk_motion_config() {
    MotionEncoderConfig c;
    c.hidden = 64;
    return c;
}

}  // namespace gopstream
