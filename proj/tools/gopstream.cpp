// gopstream command-line entry point. Every subcommand is a thin wrapper over
// the cmd_* functions in commands.hpp; results go to stdout as JSON.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gopstream/commands.hpp"

using namespace gopstream;

namespace {

struct Overrides {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint32_t> pool_k, layers;
    std::optional<std::string> fusion, pos, agg, out, data, checkpoint, grid;
    std::optional<std::size_t> max_gops, per_class, epochs;

    RunConfig resolve() const {
        RunConfig c;
        if (!config_path.empty()) c = load_config(config_path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            require(eq != std::string::npos, Errc::Precondition, "--set expects key=value, got '" + s + "'");
            set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
        }
        if (seed) c.seed = *seed;
        if (pool_k) c.encoder.fusion.pool_k = *pool_k;
        if (layers) c.encoder.motion.layers = *layers;
        if (fusion) c.encoder.fusion.mode = parse_fusion(*fusion);
        if (pos) c.encoder.fusion.position = parse_position(*pos);
        if (agg) c.encoder.fusion.aggregator = parse_aggregator(*agg);
        if (max_gops) c.max_gops = *max_gops;
        if (per_class) c.per_class = *per_class;
        if (epochs) c.warmup.epochs = *epochs;
        if (out) c.out = *out;
        if (data) c.data = *data;
        if (checkpoint) c.checkpoint = *checkpoint;
        if (grid) c.grid = *grid;
        c.validate();
        return c;
    }
};

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GOP codec, motion-aware GOP features, synthetic motion data and training tools"};
    app.footer("Flags given on the command line override --set, which overrides --config.\n"
               "GOPSTREAM_THREADS caps worker threads.\n\n" +
               config_help());
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    app.add_option("--set", o.sets, "override one config key (key=value), repeatable");
    app.add_option("--seed", o.seed, "seed for weights, data and shuffling");
    app.add_option("--pool-k", o.pool_k, "frame token pooling kernel")->check(CLI::Range(1, 4));
    app.add_option("--fusion", o.fusion, "fusion mode")->check(CLI::IsMember({"crossattn", "add", "concat", "none"}));
    app.add_option("--pos", o.pos, "motion position embedding")->check(CLI::IsMember({"pre", "post", "none"}));
    app.add_option("--agg", o.agg, "motion aggregator")->check(CLI::IsMember({"mean", "full"}));
    app.add_option("--layers", o.layers, "motion encoder layers")->check(CLI::Range(1, 4));
    app.add_option("--max-gops", o.max_gops, "GOP limit for featurize (32 for long videos)");
    app.add_option("--out", o.out, "output path");

    std::string in, second;

    auto* encode = app.add_subcommand("encode", "RVF -> GSC");
    encode->add_option("input", in, "RVF video")->required()->check(CLI::ExistingFile);
    encode->add_option("output", second, "GSC stream (or --out)");

    auto* decode = app.add_subcommand("decode", "GSC -> RVF");
    decode->add_option("input", in, "GSC stream")->required()->check(CLI::ExistingFile);
    decode->add_option("output", second, "RVF video (or --out)");

    auto* verify = app.add_subcommand("verify", "check a GSC (or encode and check an RVF); exit 1 on failure");
    verify->add_option("input", in, "GSC stream or RVF video")->required()->check(CLI::ExistingFile);
    verify->add_option("--ref", second, "RVF the stream must decode to")->check(CLI::ExistingFile);

    auto* extract = app.add_subcommand("extract-mv", "GSC -> GMVM motion vector dump");
    extract->add_option("input", in, "GSC stream")->required()->check(CLI::ExistingFile);

    auto* featurize = app.add_subcommand("featurize", "RVF or GSC -> GFTR feature dump (--out) and stats");
    featurize->add_option("input", in, "RVF video or GSC stream")->required()->check(CLI::ExistingFile);

    auto* gen = app.add_subcommand("gen-synth", "write the synthetic motion dataset to --out");
    gen->add_option("--per-class", o.per_class, "clips per motion category");

    auto* train = app.add_subcommand("train-warmup", "train the motion warmup classifier into --out");
    train->add_option("--data", o.data, "dataset directory from gen-synth (generated in memory if absent)");
    train->add_option("--per-class", o.per_class, "clips per category when generating");
    train->add_option("--epochs", o.epochs, "training epochs");

    auto* eval = app.add_subcommand("eval", "val accuracy of a warmup checkpoint (untrained model without one)");
    eval->add_option("--data", o.data, "dataset directory (generated in memory if absent)");
    eval->add_option("--per-class", o.per_class, "clips per category when generating");
    eval->add_option("--checkpoint", o.checkpoint, "warmup.ckpt from train-warmup")->check(CLI::ExistingFile);

    auto* ablate = app.add_subcommand("ablate", "linear-probe grid; JSON lines to stdout and --out");
    ablate->add_option("--grid", o.grid, "e.g. \"fusion=none,crossattn;warmup=on;layers=1,2\"");
    ablate->add_option("--data", o.data, "dataset directory (generated in memory if absent)");
    ablate->add_option("--per-class", o.per_class, "clips per category when generating");
    ablate->add_option("--checkpoint", o.checkpoint, "warmup.ckpt for warmup=on cells")->check(CLI::ExistingFile);

    auto* bench = app.add_subcommand("bench", "token counts, stream ratios, featurize times; JSON lines");

    auto* show = app.add_subcommand("show-config", "print the effective config in file format");

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = o.resolve();
        const auto out_or = [&](const std::string& positional, const char* what) {
            const std::string p = positional.empty() ? cfg.out : positional;
            require(!p.empty(), Errc::Precondition, std::string(what) + " needs an output path");
            return p;
        };
        if (*encode) {
            print(cmd_encode(in, out_or(second, "encode"), cfg));
        } else if (*decode) {
            print(cmd_decode(in, out_or(second, "decode")));
        } else if (*verify) {
            const auto r = cmd_verify(in, second, cfg);
            if (!r.ok) {
                Json j = {{"ok", false}, {"error", r.message}};
                if (r.offset) j["offset"] = *r.offset;
                print(j);
                return 1;
            }
            Json j = r.stats;
            j["ok"] = true;
            print(j);
        } else if (*extract) {
            print(cmd_extract_mv(in, out_or("", "extract-mv")));
        } else if (*featurize) {
            print(cmd_featurize(in, cfg));
        } else if (*gen) {
            print(cmd_gen_synth(cfg));
        } else if (*train) {
            print(cmd_train_warmup(cfg, [](const EpochMetrics& m) {
                std::fprintf(stderr, "epoch %zu loss %.4f val %.3f\n", m.epoch, m.train_loss, m.val.average);
            }));
        } else if (*eval) {
            print(cmd_eval(cfg));
        } else if (*ablate || *bench) {
            const auto rep = *ablate ? cmd_ablate(cfg) : cmd_bench(cfg);
            std::cout << rep.jsonl();
            if (!cfg.out.empty()) write_file(cfg.out, cmd_detail::as_bytes(rep.jsonl()));
        } else if (*show) {
            std::cout << dump_config(cfg);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
