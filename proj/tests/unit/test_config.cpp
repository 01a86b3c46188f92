#include <doctest.h>

#include <cstdlib>

#include "coca/app/run_config.hpp"
#include "coca/config.hpp"

using namespace coca;

TEST_CASE("defaults carry the stated hyperparameters") {
    TrainConfig cfg;
    CHECK(cfg.temperature == 0.2);
    CHECK(cfg.model.routing_iterations == 3);
    CHECK(cfg.learning_rate == 1e-3);
    CHECK(cfg.weight_decay == 1e-6);
    CHECK(cfg.batch_size == 128);
    CHECK(cfg.model.out_dim == 16);
}

TEST_CASE("key-value round trip") {
    TrainConfig cfg;
    cfg.temperature = 0.125;
    cfg.model.conv_channels = {8, 8};
    cfg.model.conv_strides = {1, 2};
    cfg.augment.jitter_strengths[3] = 0.05;
    cfg.seed = 123456789012345ull;
    TrainConfig back;
    for (const auto& [k, v] : to_key_values(cfg)) CHECK(apply_key(back, k, v));
    CHECK(to_key_values(back) == to_key_values(cfg));
    CHECK(back.resume_hash() == cfg.resume_hash());
    CHECK(!apply_key(back, "no_such_key", "1"));
    CHECK_THROWS(apply_key(back, "temperature", "warm"));
    CHECK_THROWS(apply_key(back, "batch_size", "-3"));
    CHECK_THROWS(apply_key(back, "primary_bias", "maybe"));
}

TEST_CASE("resume hash ignores epochs and cadences only") {
    TrainConfig a, b;
    b.epochs = 999;
    b.checkpoint_every = 7;
    b.eval_every = 3;
    CHECK(a.resume_hash() == b.resume_hash());
    b.learning_rate = 2e-3;
    CHECK(a.resume_hash() != b.resume_hash());
    TrainConfig c;
    c.augment.seed = 1;
    CHECK(a.resume_hash() != c.resume_hash());
}

TEST_CASE("shortest round-trip doubles") {
    for (double v : {0.1, 1e-6, 0.2, 123.456, 1.0 / 3.0}) CHECK(parse_double("x", format_double(v)) == v);
    CHECK(format_double(0.2) == "0.2");
}

TEST_CASE("run config file parsing") {
    using namespace coca::app;
    const auto cfg = parse_run_config("# comment\n epochs = 7 \nbatch_size=32\n\nknn_k = 50 # trailing\ndata_dir = /d\n"
                                      "deterministic = false\n");
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.eval.k == 50);
    CHECK(cfg.data_dir == "/d");
    CHECK(!cfg.deterministic);
    try {
        parse_run_config("epochs = 2\nbogus = 1\n");
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config("epochs = 2\nepochs = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("just words\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("learning_rate = fast\n"), std::invalid_argument);

    // the text form parses back to the same config
    const auto again = parse_run_config(cfg.to_text());
    CHECK(again.to_key_values() == cfg.to_key_values());
    for (const auto& k : run_config_keys()) CHECK(cfg.to_key_values().count(k) == 1);
}

TEST_CASE("data root comes from the environment") {
    ::setenv(coca::app::kDataRootEnv, "/from/env", 1);
    CHECK(coca::app::RunConfig().data_dir == "/from/env");
    ::unsetenv(coca::app::kDataRootEnv);
    CHECK(coca::app::RunConfig().data_dir == "data");
}

TEST_CASE("full-scale recipe") {
    coca::app::RunConfig cfg;
    cfg.subset = 512;
    coca::app::apply_full_scale(cfg);
    CHECK(cfg.train.batch_size == 512);
    CHECK(cfg.train.epochs == 500);
    CHECK(cfg.subset == 0);
}
