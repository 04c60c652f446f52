#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include "mtif/cli.hpp"

namespace {

void report(const std::exception& e) { std::fprintf(stderr, "error: %s\n", e.what()); }

void announce(const std::string& path) { std::printf("wrote %s\n", path.c_str()); }

int dispatch(const std::string& cmd, const mtif::RunConfig& cfg, int jobs) {
    mtif::cli::RunPaths paths = mtif::cli::RunPaths::in(cfg.output_dir);
    if (cmd == "gen") {
        mtif::cli::run_gen(cfg, jobs);
        announce(paths.dataset);
    } else if (cmd == "train") {
        mtif::cli::run_train(cfg, jobs);
        announce(paths.model);
    } else if (cmd == "influence") {
        mtif::cli::run_influence(cfg, jobs);
        announce(paths.influence_scores);
    } else if (cmd == "oracle") {
        mtif::cli::run_oracle(cfg, jobs);
        announce(paths.oracle_scores);
    } else if (cmd == "eval") {
        mtif::cli::run_eval(cfg, jobs);
        for (const auto& p : cfg.protocols) {
            if (p == "scatter") announce(paths.scatter);
            if (p == "loto") {
                announce(paths.eval_reports);
                announce(paths.eval_summary);
            }
        }
    } else {  // "select"
        mtif::cli::run_select(cfg, jobs);
        announce(paths.selection_report);
        announce(paths.selected_model);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multitask influence pipeline: gen, train, influence, oracle, eval, select"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed_override = 0;
    int jobs = 1;
    bool flip_sign = false;

    app.add_option("--config", config_path, "run config JSON (defaults apply when omitted)");
    CLI::Option* seed_opt = app.add_option("--seed", seed_override, "override global_seed");
    app.add_option("--jobs", jobs, "concurrent retrains/solves")->check(CLI::Range(1, 1024));
    CLI::Option* flip_opt =
        app.add_flag("--flip-sign", flip_sign, "negate scores before ranking in select");
    CLI::Option* out_opt = app.add_option("--out", out_dir, "override output_dir");

    app.add_subcommand("gen", "write the synthetic dataset CSV + meta sidecar")->fallthrough();
    app.add_subcommand("train", "fit the joint model and write model.json")->fallthrough();
    app.add_subcommand("influence", "score every training sample against each target task")
        ->fallthrough();
    app.add_subcommand("oracle", "leave-one-out retraining deltas as ground truth")
        ->fallthrough();
    app.add_subcommand("eval", "correlation protocols over scores and oracles")->fallthrough();
    app.add_subcommand("select", "rank, remove a tuned fraction, and retrain")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        mtif::RunConfig cfg =
            config_path.empty() ? mtif::RunConfig{} : mtif::RunConfig::load(config_path);
        if (seed_opt->count() > 0) cfg.global_seed = seed_override;
        if (out_opt->count() > 0) cfg.output_dir = out_dir;
        if (flip_opt->count() > 0) cfg.flip_sign = true;
        cfg.validate();
        return dispatch(app.get_subcommands().front()->get_name(), cfg, jobs);
    } catch (const mtif::NotConverged& e) {
        report(e);
        return 3;
    } catch (const mtif::MissingInput& e) {
        report(e);
        return 5;
    } catch (const mtif::SchemaError& e) {
        report(e);
        return 4;
    } catch (const mtif::ParseError& e) {
        report(e);
        return 4;
    } catch (const mtif::IncompleteMatrix& e) {
        report(e);
        return 4;
    } catch (const mtif::DimMismatch& e) {
        report(e);
        return 4;
    } catch (const mtif::LengthMismatch& e) {
        report(e);
        return 4;
    } catch (const mtif::IndexMismatch& e) {
        report(e);
        return 4;
    } catch (const mtif::InvalidConfig& e) {
        report(e);
        return 2;
    } catch (const mtif::InvalidRatios& e) {
        report(e);
        return 2;
    } catch (const mtif::NotClassification& e) {
        report(e);
        return 2;
    } catch (const mtif::InvalidTask& e) {
        report(e);
        return 2;
    } catch (const mtif::SameTask& e) {
        report(e);
        return 2;
    } catch (const mtif::EmptySplit& e) {
        report(e);
        return 2;
    } catch (const mtif::Error& e) {
        report(e);
        return 1;
    } catch (const std::exception& e) {
        report(e);
        return 1;
    }
}
