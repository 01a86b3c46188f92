#include "coca/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "coca/augment.hpp"
#include "coca/nt_xent.hpp"

namespace coca::train {

namespace {

constexpr const char* kFormatTag = "coca-train-state";

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string metrics_csv_row(const MetricsRow& r) {
    return std::to_string(r.epoch) + "," + format_double(r.loss) + "," + format_double(r.seconds) + "," +
           cell(r.top1) + "," + cell(r.top5) + "\n";
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "epoch,loss,seconds,top1,top5\n";
    for (const auto& r : rows) out += metrics_csv_row(r);
    return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<MetricsRow> rows;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "epoch,loss,seconds,top1,top5")
                throw std::runtime_error("line " + std::to_string(lineno) + ": expected header epoch,loss,seconds,top1,top5");
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        try {
            if (cells.size() != 5) throw std::invalid_argument("expected 5 columns, found " + std::to_string(cells.size()));
            MetricsRow r;
            r.epoch = parse_unsigned("epoch", cells[0]);
            r.loss = parse_double("loss", cells[1]);
            r.seconds = parse_double("seconds", cells[2]);
            if (!cells[3].empty()) r.top1 = parse_double("top1", cells[3]);
            if (!cells[4].empty()) r.top5 = parse_double("top5", cells[4]);
            if (!std::isfinite(r.loss)) throw std::invalid_argument("loss is not finite");
            rows.push_back(r);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!header) throw std::runtime_error("metrics CSV has no header");
    return rows;
}

TrainState::TrainState(TrainConfig cfg, data::NormalizationStats s, CapsuleNetwork<float> net)
    : config(std::move(cfg)),
      stats(s),
      network(std::move(net)),
      adam(optim::AdamState<float>::for_params(network.params())) {}

TrainState initial_state(const TrainConfig& config, const data::NormalizationStats& stats) {
    config.validate();
    stats.validate();
    return TrainState(config, stats, CapsuleNetwork<float>::initialized(config.model, config.seed));
}

Checkpoint TrainState::to_checkpoint() const {
    Checkpoint ck;
    ck.meta = to_key_values(config);
    for (auto& [k, v] : to_key_values(stats)) ck.meta[k] = v;
    ck.meta["format"] = kFormatTag;
    ck.meta["config_hash"] = config.resume_hash();
    ck.meta["state.epoch"] = std::to_string(epoch);
    ck.meta["state.next_batch"] = std::to_string(next_batch);
    ck.meta["state.partial_loss_sum"] = format_double(partial_loss_sum);
    ck.meta["state.partial_batches"] = std::to_string(partial_batches);
    ck.meta["state.adam_step"] = std::to_string(adam.step);
    // Randomness is derived from (seed, epoch, index); this pair is the whole RNG state.
    ck.meta["state.rng_seed"] = std::to_string(config.seed);
    ck.meta["state.rng_epoch"] = std::to_string(epoch);

    std::size_t i = 0;
    network.params().visit([&](const std::string& name, const Tensor<float>& t, bool trainable) {
        ck.tensors.emplace_back(name, t);
        if (trainable) {
            ck.tensors.emplace_back("adam.m." + name, adam.m[i]);
            ck.tensors.emplace_back("adam.v." + name, adam.v[i]);
            ++i;
        }
    });
    return ck;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ck) {
    if (ck.meta.count("format") == 0 || ck.get("format") != kFormatTag)
        throw CheckpointError("checkpoint is not a training state");
    TrainConfig cfg;
    data::NormalizationStats stats;
    for (const auto& [k, v] : ck.meta) {
        if (k.rfind("state.", 0) == 0 || k == "format" || k == "config_hash") continue;
        if (!apply_key(cfg, k, v) && !apply_key(stats, k, v))
            throw CheckpointError("unknown checkpoint metadata key " + k);
    }
    cfg.validate();
    stats.validate();
    if (ck.get("config_hash") != cfg.resume_hash()) throw CheckpointError("checkpoint config hash does not match its metadata");

    auto params = Parameters<float>::zeros(cfg.model);
    std::size_t seen = 0;
    params.visit([&](const std::string& name, Tensor<float>& t, bool) {
        const auto& src = ck.tensor(name);
        if (src.shape != t.shape)
            throw CheckpointError("tensor " + name + " has shape " + shape_string(src.shape) + ", expected " +
                                  shape_string(t.shape));
        t = src;
        ++seen;
    });
    TrainState s(cfg, stats, CapsuleNetwork<float>(cfg.model, std::move(params)));
    std::size_t i = 0;
    s.network.params().visit([&](const std::string& name, const Tensor<float>&, bool trainable) {
        if (!trainable) return;
        const auto& m = ck.tensor("adam.m." + name);
        const auto& v = ck.tensor("adam.v." + name);
        if (m.shape != s.adam.m[i].shape || v.shape != s.adam.v[i].shape)
            throw CheckpointError("adam state for " + name + " has the wrong shape");
        s.adam.m[i] = m;
        s.adam.v[i] = v;
        seen += 2;
        ++i;
    });
    if (seen != ck.tensors.size()) throw CheckpointError("checkpoint carries unexpected tensors");
    s.adam.step = parse_unsigned("state.adam_step", ck.get("state.adam_step"));
    s.epoch = parse_unsigned("state.epoch", ck.get("state.epoch"));
    s.next_batch = parse_unsigned("state.next_batch", ck.get("state.next_batch"));
    s.partial_loss_sum = parse_double("state.partial_loss_sum", ck.get("state.partial_loss_sum"));
    s.partial_batches = parse_unsigned("state.partial_batches", ck.get("state.partial_batches"));
    return s;
}

TrainingError::TrainingError(std::size_t epoch, std::size_t batch, const std::string& what)
    : std::runtime_error("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
      epoch_(epoch),
      batch_(batch) {}

std::pair<Tensor<float>, Tensor<float>> make_view_batch(const data::UnlabeledImages& images,
                                                        std::span<const std::size_t> indices,
                                                        const TrainConfig& config,
                                                        const data::NormalizationStats& stats, std::uint64_t epoch) {
    constexpr std::size_t V = data::kPixelBytes;
    const std::size_t B = indices.size();
    const Shape shape{B, data::kChannels, data::kImageSide, data::kImageSide};
    Tensor<float> vi(shape), vj(shape);
    std::vector<float> unit(V);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& px = images.pixels(indices[b]);
        for (std::size_t k = 0; k < V; ++k) unit[k] = static_cast<float>(px[k]) / 255.0f;
        Rng rng = make_rng(config.seed, {0xa11cu, config.augment.seed, epoch, indices[b]});
        auto out_i = vi.row(b), out_j = vj.row(b);
        augment::apply_pipeline(unit, out_i, config.augment, rng);
        augment::apply_pipeline(unit, out_j, config.augment, rng);
        data::standardize(out_i, stats);
        data::standardize(out_j, stats);
    }
    return {std::move(vi), std::move(vj)};
}

double train_step(TrainState& state, const Tensor<float>& view_i, const Tensor<float>& view_j) {
    auto& net = state.network;
    const auto& cfg = state.config;
    ForwardCache<float> cache_i, cache_j;
    const auto out_i = net.forward(view_i, Mode::train, &cache_i, true);
    const auto out_j = net.forward(view_j, Mode::train, &cache_j, false);

    const std::size_t B = view_i.dim(0), Z = cfg.model.embedding_dim();
    Tensor<float> z({2 * B, Z});
    std::copy(out_i.z.data.begin(), out_i.z.data.end(), z.data.begin());
    std::copy(out_j.z.data.begin(), out_j.z.data.end(), z.data.begin() + B * Z);
    auto loss = loss::nt_xent_with_grad(z, cfg.temperature);
    if (!std::isfinite(loss.loss)) throw std::runtime_error("non-finite loss");

    Tensor<float> gi({B, Z}), gj({B, Z});
    std::copy_n(loss.grad.data.begin(), B * Z, gi.data.begin());
    std::copy_n(loss.grad.data.begin() + B * Z, B * Z, gj.data.begin());
    auto grads = Parameters<float>::zeros(cfg.model);
    net.backward(cache_i, &gi, nullptr, grads);
    net.backward(cache_j, &gj, nullptr, grads);

    optim::AdamOptions opt;
    opt.learning_rate = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;
    optim::adam_step(net.params(), grads, state.adam, opt);
    return loss.loss;
}

TrainResult train(const TrainConfig& config, const data::UnlabeledImages& images,
                  const data::NormalizationStats& stats, const TrainOptions& options) {
    return resume(initial_state(config, stats), config, images, options);
}

TrainResult resume(TrainState state, const TrainConfig& config, const data::UnlabeledImages& images,
                   const TrainOptions& options) {
    config.validate();
    if (state.config.resume_hash() != config.resume_hash())
        throw CheckpointError("config hash " + config.resume_hash() + " does not match checkpoint hash " +
                              state.config.resume_hash());
    if (images.size() < 2) throw std::invalid_argument("training needs at least 2 images");
    state.config = config;

    TrainResult result{std::move(state), {}, false};
    auto& s = result.state;
    using clock = std::chrono::steady_clock;

    while (s.epoch < config.epochs) {
        const std::size_t epoch = s.epoch + 1;
        const auto t0 = clock::now();
        const auto plan = data::batch_iterator(images.size(), config.batch_size, true, config.seed, epoch);
        for (std::size_t b = s.next_batch; b < plan.batches.size(); ++b) {
            if (options.stop && options.stop->load()) {
                s.next_batch = b;
                result.interrupted = true;
                if (options.on_checkpoint) options.on_checkpoint(s);
                return result;
            }
            const auto& idx = plan.batches[b];
            if (idx.size() < 2) continue;  // batch-norm needs two samples; a trailing singleton is skipped
            auto [vi, vj] = make_view_batch(images, idx, config, s.stats, epoch);
            double loss;
            try {
                loss = train_step(s, vi, vj);
            } catch (const std::exception& e) {
                throw TrainingError(epoch, b, e.what());
            }
            s.partial_loss_sum += loss;
            ++s.partial_batches;
            if (options.on_batch) options.on_batch(epoch, b, loss);
        }

        MetricsRow row;
        row.epoch = epoch;
        row.loss = s.partial_loss_sum / static_cast<double>(std::max<std::size_t>(s.partial_batches, 1));
        row.seconds = options.deterministic ? 0.0 : std::chrono::duration<double>(clock::now() - t0).count();
        s.epoch = epoch;
        s.next_batch = 0;
        s.partial_loss_sum = 0.0;
        s.partial_batches = 0;
        if (options.evaluate && config.eval_every > 0 && epoch % config.eval_every == 0) {
            auto [top1, top5] = options.evaluate(s.network);
            row.top1 = top1;
            row.top5 = top5;
        }
        result.metrics.push_back(row);
        if (options.on_epoch) options.on_epoch(row);
        const bool last = s.epoch == config.epochs;
        if (options.on_checkpoint && (last || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)))
            options.on_checkpoint(s);
    }
    return result;
}

}  // namespace coca::train
