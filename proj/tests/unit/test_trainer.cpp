#include <doctest.h>

#include <cmath>

#include "coca/trainer.hpp"
#include "synthetic_cifar.hpp"

using namespace coca;
using namespace coca::train;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.model.conv_channels = {8, 16};
    cfg.model.conv_strides = {2, 2};
    cfg.model.primary_types = 4;
    cfg.model.primary_dim = 8;
    cfg.model.out_dim = 8;
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg.seed = 11;
    return cfg;
}

struct Fixture {
    data::DatasetSplit split{data::SplitKind::train, testing::synthetic_records(28, 5)};
    data::UnlabeledImages images{split};
    data::NormalizationStats stats = data::compute_stats(split);
};

}  // namespace

template <typename U>
concept HasLabels = requires(const U& u) { u.label(0); };
static_assert(!HasLabels<data::UnlabeledImages>, "the training view must not expose labels");

TEST_CASE("metrics CSV round trip and errors") {
    std::vector<MetricsRow> rows{{1, 4.25, 0.0, std::nullopt, std::nullopt}, {2, 3.5, 1.5, 12.5, 48.0}};
    const auto text = metrics_csv(rows);
    CHECK(text.rfind("epoch,loss,seconds,top1,top5\n", 0) == 0);
    CHECK(parse_metrics_csv(text) == rows);
    CHECK(parse_metrics_csv("epoch,loss,seconds,top1,top5\n").empty());
    try {
        parse_metrics_csv("epoch,loss,seconds,top1,top5\n1,2,3,,\n2,abc,0,,\n");
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS(parse_metrics_csv("1,2,3,,\n"));
    CHECK_THROWS(parse_metrics_csv("epoch,loss,seconds,top1,top5\n1,nan,0,,\n"));
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.temperature = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.model.routing_iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("views depend only on seed, epoch and image index") {
    Fixture f;
    const auto cfg = small_config();
    const std::vector<std::size_t> a{3, 7, 1}, b{7, 9};
    const auto [ai, aj] = make_view_batch(f.images, a, cfg, f.stats, 2);
    const auto [bi, bj] = make_view_batch(f.images, b, cfg, f.stats, 2);
    const std::size_t V = 3 * 32 * 32;
    CHECK(std::equal(ai.data.begin() + V, ai.data.begin() + 2 * V, bi.data.begin()));
    CHECK(std::equal(aj.data.begin() + V, aj.data.begin() + 2 * V, bj.data.begin()));
    const auto [ci, cj] = make_view_batch(f.images, a, cfg, f.stats, 3);
    CHECK(ci.data != ai.data);
}

TEST_CASE("identical seeds give identical runs") {
    Fixture f;
    const auto cfg = small_config();
    const auto r1 = coca::train::train(cfg, f.images, f.stats), r2 = coca::train::train(cfg, f.images, f.stats);
    REQUIRE(r1.metrics.size() == 4);
    CHECK(metrics_csv(r1.metrics) == metrics_csv(r2.metrics));
    CHECK(serialize_checkpoint(r1.state.to_checkpoint()) == serialize_checkpoint(r2.state.to_checkpoint()));
    for (const auto& row : r1.metrics) {
        CHECK(std::isfinite(row.loss));
        CHECK(row.seconds == 0.0);
    }
    auto other = cfg;
    other.seed = 12;
    CHECK(metrics_csv(coca::train::train(other, f.images, f.stats).metrics) != metrics_csv(r1.metrics));
}

TEST_CASE("epoch loss is the mean of replayed batch losses") {
    Fixture f;
    auto cfg = small_config();
    cfg.epochs = 1;
    std::vector<double> seen;
    TrainOptions opt;
    opt.on_batch = [&](std::size_t, std::size_t, double l) { seen.push_back(l); };
    const auto run = coca::train::train(cfg, f.images, f.stats, opt);

    auto state = initial_state(cfg, f.stats);
    const auto plan = data::batch_iterator(f.images.size(), cfg.batch_size, true, cfg.seed, 1);
    double sum = 0;
    std::size_t n = 0;
    for (const auto& idx : plan.batches) {
        if (idx.size() < 2) continue;
        auto [vi, vj] = make_view_batch(f.images, idx, cfg, f.stats, 1);
        const double l = train_step(state, vi, vj);
        CHECK(l == seen.at(n));
        sum += l, ++n;
    }
    CHECK(n == 4);  // 28 images, batch 8: three full batches and one of four
    CHECK(std::abs(sum / n - run.metrics[0].loss) < 1e-5);
}

TEST_CASE("learning rate zero leaves trainable parameters bitwise unchanged") {
    Fixture f;
    auto cfg = small_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    const auto start = initial_state(cfg, f.stats);
    const auto run = coca::train::train(cfg, f.images, f.stats);
    std::vector<std::vector<float>> before, after;
    start.network.params().visit([&](const std::string&, const Tensor<float>& t, bool tr) {
        if (tr) before.push_back(t.data);
    });
    run.state.network.params().visit([&](const std::string&, const Tensor<float>& t, bool tr) {
        if (tr) after.push_back(t.data);
    });
    CHECK(before == after);
}

TEST_CASE("split run equals uninterrupted run") {
    Fixture f;
    auto cfg = small_config();
    const auto full = coca::train::train(cfg, f.images, f.stats);

    auto half = cfg;
    half.epochs = 2;
    const auto first = coca::train::train(half, f.images, f.stats);
    auto reloaded = TrainState::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(first.state.to_checkpoint())));
    const auto second = resume(std::move(reloaded), cfg, f.images);
    CHECK(serialize_checkpoint(second.state.to_checkpoint()) == serialize_checkpoint(full.state.to_checkpoint()));
    auto rows = first.metrics;
    rows.insert(rows.end(), second.metrics.begin(), second.metrics.end());
    CHECK(metrics_csv(rows) == metrics_csv(full.metrics));
}

TEST_CASE("mid-epoch interruption resumes exactly") {
    Fixture f;
    const auto cfg = small_config();
    const auto full = coca::train::train(cfg, f.images, f.stats);

    std::atomic<bool> stop{false};
    std::optional<Checkpoint> saved;
    TrainOptions opt;
    opt.stop = &stop;
    opt.on_batch = [&](std::size_t epoch, std::size_t batch, double) {
        if (epoch == 2 && batch == 1) stop = true;
    };
    opt.on_checkpoint = [&](const TrainState& s) { saved = s.to_checkpoint(); };
    const auto cut = coca::train::train(cfg, f.images, f.stats, opt);
    CHECK(cut.interrupted);
    CHECK(cut.state.epoch == 1);
    CHECK(cut.state.next_batch == 2);
    REQUIRE(saved);
    const auto rest = resume(TrainState::from_checkpoint(*saved), cfg, f.images);
    CHECK(serialize_checkpoint(rest.state.to_checkpoint()) == serialize_checkpoint(full.state.to_checkpoint()));
    CHECK(rest.metrics.size() == 3);
    CHECK(rest.metrics.front().loss == full.metrics[1].loss);
}

TEST_CASE("resume edge cases") {
    Fixture f;
    auto cfg = small_config();
    cfg.epochs = 1;
    const auto done = coca::train::train(cfg, f.images, f.stats);
    SUBCASE("finished checkpoint is a no-op") {
        const auto again = resume(done.state, cfg, f.images);
        CHECK(again.metrics.empty());
        CHECK(serialize_checkpoint(again.state.to_checkpoint()) == serialize_checkpoint(done.state.to_checkpoint()));
    }
    SUBCASE("hash mismatch rejected") {
        auto other = cfg;
        other.learning_rate = 0.5;
        CHECK_THROWS_AS(resume(done.state, other, f.images), CheckpointError);
    }
    SUBCASE("corrupted checkpoint rejected") {
        auto bytes = serialize_checkpoint(done.state.to_checkpoint());
        bytes[bytes.size() / 2] ^= 1;
        CHECK_THROWS_AS(deserialize_checkpoint(bytes), CheckpointError);
    }
}

TEST_CASE("non-finite loss aborts with the batch index") {
    Fixture f;
    const auto cfg = small_config();
    auto state = initial_state(cfg, f.stats);
    state.network.params().vote_weight.fill(std::nanf(""));
    try {
        resume(std::move(state), cfg, f.images);
        FAIL("expected a training error");
    } catch (const TrainingError& e) {
        CHECK(e.epoch() == 1);
        CHECK(e.batch() == 0);
    }
}

TEST_CASE("running statistics move on the first view only") {
    Fixture f;
    const auto cfg = small_config();
    auto state = initial_state(cfg, f.stats);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    auto [vi, vj] = make_view_batch(f.images, idx, cfg, f.stats, 1);

    auto probe = state.network;  // expected running stats: one update from view i
    probe.forward(vi, Mode::train, nullptr, true);
    train_step(state, vi, vj);
    CHECK(state.network.params().stages[0].running_mean.data == probe.params().stages[0].running_mean.data);
    CHECK(state.network.params().stages[1].running_var.data == probe.params().stages[1].running_var.data);
}
