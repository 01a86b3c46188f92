#include <csignal>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "coca/app/commands.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_sigint(int) {
    g_stop.store(true);
    std::signal(SIGINT, SIG_DFL);  // a second Ctrl-C kills immediately
}

bool is_flag_key(const std::string& key) { return key == "deterministic" || key == "primary_bias"; }

// Every run-config key becomes --key-name; values are applied after the config file.
struct KeyFlags {
    std::string config_file;
    bool full_scale = false;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "Run-config file (key = value lines)")->check(CLI::ExistingFile);
        for (const auto& key : coca::app::run_config_keys()) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            options[key] = is_flag_key(key) ? cmd->add_flag(flag + "{true}", values[key], "Override " + key)
                                            : cmd->add_option(flag, values[key], "Override " + key);
        }
    }

    coca::app::RunConfig resolve() const {
        coca::app::RunConfig cfg = config_file.empty() ? coca::app::RunConfig() : coca::app::load_run_config(config_file);
        if (full_scale) coca::app::apply_full_scale(cfg);
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) cfg.apply(key, values.at(key));
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive capsule network: fetch data, train, evaluate, profile, plot"};
    app.require_subcommand(1);

    auto* fetch = app.add_subcommand("fetch", "Download or copy the CIFAR-10 binary archive, verify, unpack");
    KeyFlags fetch_flags;
    fetch_flags.attach(fetch);
    std::string fetch_dest;
    fetch->add_option("--dest", fetch_dest, "Destination directory (default: data_dir)");

    auto* train = app.add_subcommand("train", "Train the Siamese capsule network with NT-Xent");
    KeyFlags train_flags;
    train_flags.attach(train);
    bool dry_run = false, resume = false;
    train->add_flag("--dry-run", dry_run, "Validate the config and print the profile without training");
    train->add_flag("--resume", resume, "Continue from latest.ckpt in the checkpoint directory");
    train->add_flag("--paper-scale", train_flags.full_scale,
                    "Full-scale recipe: batch 512, 500 epochs, whole dataset (days on a CPU)");

    auto* eval = app.add_subcommand("eval", "Weighted kNN top-1/top-5 of a checkpoint");
    KeyFlags eval_flags;
    eval_flags.attach(eval);
    std::string eval_ckpt;
    bool untrained = false;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file (default: <checkpoint_dir>/latest.ckpt)");
    eval->add_flag("--untrained", untrained, "Evaluate randomly initialized weights from the config seed");

    auto* prof = app.add_subcommand("profile", "Per-layer parameters and MACs with the reference-figure audit");
    KeyFlags prof_flags;
    prof_flags.attach(prof);
    std::string convention = "macs", prof_csv;
    prof->add_option("--convention", convention, "FLOP convention: macs or 2macs")->capture_default_str();
    prof->add_option("--csv", prof_csv, "Also write the per-layer report as CSV");

    auto* plot = app.add_subcommand("plot", "Render loss/top1/top5 SVG plots from a metrics CSV");
    KeyFlags plot_flags;
    plot_flags.attach(plot);
    std::string plot_csv, plot_out;
    plot->add_option("--metrics", plot_csv, "Metrics CSV (default: metrics_path)");
    plot->add_option("--out", plot_out, "Output directory (default: plot_dir)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fetch->parsed()) {
            const auto cfg = fetch_flags.resolve();
            coca::app::FetchOptions opts{cfg.fetch_source, fetch_dest.empty() ? cfg.data_dir : fetch_dest,
                                         cfg.fetch_md5};
            coca::app::cmd_fetch(opts, std::cout);
        } else if (train->parsed()) {
            coca::app::TrainCommand cmd{train_flags.resolve(), dry_run, resume, &g_stop};
            std::signal(SIGINT, on_sigint);
            std::signal(SIGTERM, on_sigint);
            const auto outcome = coca::app::cmd_train(cmd, std::cout);
            if (outcome.interrupted) return 130;
        } else if (eval->parsed()) {
            coca::app::EvalCommand cmd{eval_flags.resolve(), std::nullopt, untrained};
            if (!eval_ckpt.empty()) cmd.checkpoint = eval_ckpt;
            coca::app::cmd_eval(cmd, std::cout);
        } else if (prof->parsed()) {
            const auto cfg = prof_flags.resolve();
            std::optional<std::filesystem::path> csv;
            if (!prof_csv.empty()) csv = prof_csv;
            coca::app::cmd_profile(cfg.train.model, convention, csv, std::cout);
        } else if (plot->parsed()) {
            const auto cfg = plot_flags.resolve();
            coca::app::cmd_plot(plot_csv.empty() ? cfg.metrics_path : plot_csv,
                                plot_out.empty() ? cfg.plot_dir : plot_out, std::cout);
        }
    } catch (const coca::app::ChecksumError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
