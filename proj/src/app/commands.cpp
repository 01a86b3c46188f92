#include "coca/app/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "coca/app/plot.hpp"

namespace fs = std::filesystem;

namespace coca::app {

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void check_eval_config(const RunConfig& cfg, std::size_t bank_size) {
    cfg.eval.validate(bank_size);
}

}  // namespace

LoadedData load_data(const RunConfig& cfg) {
    const fs::path root(cfg.data_dir);
    if (!fs::exists(root))
        throw MissingDataError("no CIFAR-10 data at '" + root.string() + "' (set data_dir or " + kDataRootEnv +
                               "); run `coca fetch --dest " + root.string() + "` first");
    data::CifarDataset ds;
    try {
        ds = data::load_cifar10_binary(root);
    } catch (const data::DataError& e) {
        if (!fs::exists(e.file()))
            throw MissingDataError(std::string(e.what()) + "; run `coca fetch --dest " + root.string() + "` first");
        throw;
    }
    LoadedData out;
    out.train = cfg.subset ? ds.train.slice(0, std::min(cfg.subset, ds.train.size())) : std::move(ds.train);
    out.memory = out.train.as(data::SplitKind::memory);
    out.test = cfg.eval_subset ? ds.test.slice(0, std::min(cfg.eval_subset, ds.test.size())) : std::move(ds.test);
    return out;
}

fs::path latest_checkpoint(const RunConfig& cfg) { return fs::path(cfg.checkpoint_dir) / "latest.ckpt"; }

fs::path epoch_checkpoint(const RunConfig& cfg, std::size_t epoch) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch-%04zu.ckpt", epoch);
    return fs::path(cfg.checkpoint_dir) / name;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : file_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        const int err = errno;
        file_.clear();
        if (err == EEXIST)
            throw std::runtime_error("checkpoint directory " + dir.string() +
                                     " is locked by another run (remove .lock if no run is active)");
        throw std::runtime_error("cannot create lock in " + dir.string() + ": " + std::strerror(err));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    if (!file_.empty()) fs::remove(file_, ec);
}

TrainOutcome cmd_train(const TrainCommand& cmd, std::ostream& out) {
    const RunConfig& cfg = cmd.config;
    cfg.train.validate();
    if (cmd.dry_run) {
        out << "configuration is valid\n" << cfg.to_text() << "\n";
        out << profile::format_table(profile::count_flops(cfg.train.model));
        return {};
    }

    const LoadedData data = load_data(cfg);
    if (cfg.train.eval_every > 0) check_eval_config(cfg, data.memory.size());
    DirectoryLock lock(cfg.checkpoint_dir);

    std::vector<train::MetricsRow> rows;
    std::optional<train::TrainState> start;
    if (cmd.resume) {
        const auto path = latest_checkpoint(cfg);
        if (!fs::exists(path)) throw std::runtime_error("nothing to resume: " + path.string() + " does not exist");
        start = train::TrainState::from_checkpoint(read_checkpoint(path));
        if (fs::exists(cfg.metrics_path)) rows = train::parse_metrics_csv(read_text(cfg.metrics_path));
        std::erase_if(rows, [&](const train::MetricsRow& r) { return r.epoch > start->epoch; });
        out << "resuming from epoch " << start->epoch << " batch " << start->next_batch << "\n";
    }

    const data::UnlabeledImages images(data.train);
    const data::NormalizationStats stats = start ? start->stats : data::compute_stats(data.train);
    train::TrainOptions opts;
    opts.deterministic = cfg.deterministic;
    opts.stop = cmd.stop;
    opts.on_epoch = [&](const train::MetricsRow& r) {
        rows.push_back(r);
        if (fs::path(cfg.metrics_path).has_parent_path()) fs::create_directories(fs::path(cfg.metrics_path).parent_path());
        write_file_atomic(cfg.metrics_path, train::metrics_csv(rows));
        out << "epoch " << r.epoch << " loss " << format_double(r.loss) << " seconds " << format_double(r.seconds);
        if (r.top1) out << " top1 " << percent(*r.top1) << " top5 " << percent(*r.top5);
        out << std::endl;
    };
    if (cfg.train.eval_every > 0) {
        opts.evaluate = [&](CapsuleNetwork<float>& net) {
            auto rep = knn::evaluate(net, data.memory, data.test, stats, cfg.eval);
            return std::make_pair(rep.top1(), rep.top5());
        };
    }
    opts.on_checkpoint = [&](const train::TrainState& s) {
        const auto ckpt = s.to_checkpoint();
        if (s.next_batch == 0 && s.epoch > 0 && cfg.train.checkpoint_every > 0 &&
            s.epoch % cfg.train.checkpoint_every == 0)
            write_checkpoint(epoch_checkpoint(cfg, s.epoch), ckpt);
        write_checkpoint(latest_checkpoint(cfg), ckpt);
    };

    train::TrainResult result = start ? train::resume(std::move(*start), cfg.train, images, opts)
                                      : train::train(cfg.train, images, stats, opts);
    if (result.interrupted)
        out << "interrupted at epoch " << result.state.epoch + 1 << " batch " << result.state.next_batch
            << "; checkpoint written to " << latest_checkpoint(cfg).string() << "\n";
    return {rows, result.interrupted, latest_checkpoint(cfg)};
}

knn::EvalReport cmd_eval(const EvalCommand& cmd, std::ostream& out) {
    const RunConfig& cfg = cmd.config;
    const LoadedData data = load_data(cfg);
    check_eval_config(cfg, data.memory.size());

    std::string source;
    std::optional<train::TrainState> state;
    if (cmd.untrained) {
        state = train::initial_state(cfg.train, data::compute_stats(data.train));
        source = "untrained(seed=" + std::to_string(cfg.train.seed) + ")";
    } else {
        const fs::path path = cmd.checkpoint ? *cmd.checkpoint : latest_checkpoint(cfg);
        if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
        state = train::TrainState::from_checkpoint(read_checkpoint(path));
        source = path.string();
    }
    const auto rep = knn::evaluate(state->network, data.memory, data.test, state->stats, cfg.eval);
    out << "k=" << rep.k << " tau=" << format_double(rep.temperature) << " bank=" << data.memory.size()
        << " queries=" << rep.queries << "\n";
    out << "top1=" << percent(rep.top1()) << "% top5=" << percent(rep.top5()) << "%\n";
    out << "checkpoint,k,tau,queries,top1,top5\n"
        << source << ',' << rep.k << ',' << format_double(rep.temperature) << ',' << rep.queries << ','
        << percent(rep.top1()) << ',' << percent(rep.top5()) << "\n";
    return rep;
}

profile::Audit cmd_profile(const ModelConfig& model, const std::string& convention,
                           const std::optional<fs::path>& csv_out, std::ostream& out) {
    const auto report = profile::count_flops(model, convention);
    const auto audit = profile::audit_against_reference(report);
    out << profile::format_table(report) << "\n" << profile::format_audit(audit);
    if (csv_out) {
        write_file_atomic(*csv_out, profile::format_csv(report));
        out << "wrote " << csv_out->string() << "\n";
    }
    return audit;
}

std::vector<fs::path> cmd_plot(const fs::path& csv, const fs::path& out_dir, std::ostream& out) {
    const auto written = plot_metrics(read_text(csv), out_dir);
    for (const auto& p : written) out << "wrote " << p.string() << "\n";
    return written;
}

FetchResult cmd_fetch(const FetchOptions& options, std::ostream& out) { return fetch_cifar10(options, out); }

}  // namespace coca::app
