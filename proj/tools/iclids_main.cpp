#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iclids/commands.hpp"
#include "iclids/error.hpp"
#include "iclids/runconfig.hpp"
#include "iclids/version.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string manifest_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    uint64_t seed{0};
    bool seed_set{false};
    bool deterministic{false};
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--from-manifest", args.manifest_path,
                    "re-run with the resolved config of a previous run's manifest");
    cmd->add_option("--out-dir", args.out_dir,
                    "artifact directory (or env ICLIDS_OUT_DIR; default .)");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "base seed; section seeds derive from it")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_flag("--deterministic", args.deterministic,
                  "single-threaded bit-reproducible run (records the guarantee in the manifest)");
}

iclids::Config build_config(const CommonArgs& args) {
    iclids::Config cfg;
    if (!args.manifest_path.empty()) {
        cfg = iclids::config_from_manifest(args.manifest_path);
    } else if (!args.config_path.empty()) {
        cfg = iclids::load_config_file(args.config_path);
    }
    for (const auto& assignment : args.overrides) {
        iclids::apply_override(cfg, assignment);
    }
    if (args.seed_set) {
        cfg.set("seed.base", std::to_string(args.seed));
    }
    cfg.deterministic = cfg.deterministic || args.deterministic;

    // --out-dir beats the manifest's recorded dir; the env var is a fallback.
    if (!args.out_dir.empty()) {
        cfg.out_dir = args.out_dir;
    } else if (!cfg.out_dir_pinned) {
        if (const char* env = std::getenv("ICLIDS_OUT_DIR"); env != nullptr && *env != '\0') {
            cfg.out_dir = env;
        } else {
            cfg.out_dir = ".";
        }
    }
    iclids::resolve_seeds(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"in-context-learning intrusion detection pipeline"};
    app.set_version_flag("--version", iclids::kVersion);
    app.require_subcommand(1);

    struct SubSpec {
        const char* name;
        const char* help;
    };
    const std::vector<SubSpec> subs = {
        {"synth", "generate/load the dataset, split ID/OOD, multi-mix synthetic attack classes"},
        {"train-weak", "train the weak-classifier ensemble on the synthetic training set"},
        {"train", "train the transformer on weakly labeled context sequences"},
        {"eval", "n-shot detection accuracy on held-out attacks"},
        {"sensitivity", "zero-shot accuracy vs controlled weak-classifier accuracy"},
        {"plan", "latency-feasible deployment search over a latency table"},
        {"bench", "measure local per-sample inference latency"},
    };

    std::vector<CommonArgs> args(subs.size());
    std::vector<CLI::App*> cmds;
    for (size_t i = 0; i < subs.size(); ++i) {
        CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(cmd, args[i]);
        cmds.push_back(cmd);
    }

    // Frequently used shorthands.
    std::string regime;
    double gt_fraction = -1.0;
    int iterations = -1;
    cmds[2]->add_option("--regime", regime, "WCTF | MTF | WCDTF | MDTF");
    cmds[2]->add_option("--gt-fraction", gt_fraction, "ground-truth label fraction");
    cmds[2]->add_option("--iterations", iterations, "training iterations");
    int trials = -1;
    cmds[3]->add_option("--trials", trials, "trials per (attack, shots) cell");
    std::string latency_table;
    cmds[5]->add_option("--latency-table", latency_table, "CSV of H,BS,mean_s,std_s");

    CLI11_PARSE(app, argc, argv);

    try {
        for (size_t i = 0; i < subs.size(); ++i) {
            if (!cmds[i]->parsed()) {
                continue;
            }
            iclids::Config cfg = build_config(args[i]);
            if (i == 2) {
                if (!regime.empty()) {
                    cfg.set("train.regime", regime);
                }
                if (gt_fraction >= 0.0) {
                    cfg.set("train.gt_fraction", std::to_string(gt_fraction));
                }
                if (iterations >= 0) {
                    cfg.set("train.iterations", std::to_string(iterations));
                }
            }
            if (i == 3 && trials >= 0) {
                cfg.set("eval.trials", std::to_string(trials));
            }
            if (i == 5 && !latency_table.empty()) {
                cfg.set("deploy.latency_table", latency_table);
            }
            return iclids::run_command(subs[i].name, cfg);
        }
    } catch (const iclids::Error& e) {
        std::cerr << "error code=" << iclids::errc_name(e.code()) << " msg=\"" << e.what()
                  << "\"\n";
        return iclids::errc_exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error code=Internal msg=\"" << e.what() << "\"\n";
        return 1;
    }
    return 0;
}
