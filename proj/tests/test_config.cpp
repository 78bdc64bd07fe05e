#include <gtest/gtest.h>

#include "pdno/config.hpp"

using namespace pdno;
using nlohmann::json;

TEST(RunConfig, EmptyObjectGivesDefaults) {
    const auto rc = run_config_from_json(json::object());
    EXPECT_EQ(rc.arch, ArchSpec::desk());
    EXPECT_EQ(rc.schedule_kind, ScheduleKind::cosine);
    EXPECT_EQ(rc.t_max, 100);
    EXPECT_EQ(rc.train.epochs, 300);
    EXPECT_EQ(rc.train.batch_size, 50);
    EXPECT_EQ(rc.train.lr0, 1e-4);
    EXPECT_EQ(rc.train.lr_halving_period, 100);
    EXPECT_EQ(rc.train.cov_mode, CovMode::noise_free());
    EXPECT_FALSE(rc.train.normalize);
    EXPECT_FALSE(rc.train.max_grad_norm.has_value());
    EXPECT_FALSE(rc.mstd_sqrt_n);
    EXPECT_TRUE(rc.clip_denoised);
}

TEST(RunConfig, ParsesAllSections) {
    const json j = json::parse(R"({
        "schema_version": 1,
        "arch": {"base_channels": 8, "channel_mults": [1, 2], "blocks_per_res": 2, "time_embed_dim": 16,
                 "in_channels": 2, "groups": 4},
        "schedule": {"kind": "linear", "t_max": 50},
        "train": {"epochs": 7, "batch_size": 20, "lr0": 8e-5, "lr_halving_period": 0, "optimizer": "adam",
                  "adam_beta1": 0.8, "adam_beta2": 0.99, "adam_eps": 1e-7, "seed": 3, "init_seed": 4,
                  "normalize": true, "max_grad_norm": 2.5},
        "cov_mode": {"mode": "mixed", "lambda": 0.4},
        "eval": {"mstd_sqrt_n": true, "store_fields": [0, 3], "clip_denoised": false}
    })");
    const auto rc = run_config_from_json(j);
    EXPECT_EQ(rc.arch.base_channels, 8);
    EXPECT_EQ(rc.arch.blocks_per_res, 2);
    EXPECT_EQ(rc.schedule().kind(), ScheduleKind::linear);
    EXPECT_EQ(rc.schedule().t_max(), 50);
    EXPECT_EQ(rc.train.epochs, 7);
    EXPECT_EQ(rc.train.lr0, 8e-5);
    EXPECT_EQ(rc.train.lr_halving_period, 0);
    EXPECT_EQ(rc.train.adam_beta1, 0.8);
    EXPECT_EQ(rc.train.seed, 3u);
    EXPECT_TRUE(rc.train.normalize);
    EXPECT_EQ(rc.train.max_grad_norm, 2.5);
    EXPECT_EQ(rc.train.cov_mode, CovMode::mixed(0.4));
    EXPECT_TRUE(rc.mstd_sqrt_n);
    EXPECT_EQ(rc.store_fields, (std::vector<std::size_t>{0, 3}));
    EXPECT_FALSE(rc.clip_denoised);
}

TEST(RunConfig, JsonRoundTrip) {
    RunConfig rc;
    rc.arch = ArchSpec::paper();
    rc.train.cov_mode = CovMode::gaussian_noise();
    rc.train.max_grad_norm = 1.0;
    rc.store_fields = {1};
    rc.clip_denoised = false;
    const auto back = run_config_from_json(to_json(rc));
    EXPECT_EQ(to_json(back), to_json(rc));
    EXPECT_EQ(back.arch, ArchSpec::paper());
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
    for (const char* text : {R"({"epochs": 10})", R"({"train": {"learning_rate": 1e-3}})",
                             R"({"schedule": {"kind": "cosine", "T": 100}})", R"({"arch": {"base_channel": 16}})",
                             R"({"cov_mode": {"mode": "mixed", "lambda": 0.5, "x": 1}})",
                             R"({"eval": {"mstd_sqrtn": true}})"}) {
        EXPECT_THROW(run_config_from_json(json::parse(text)), ValidationError) << text;
    }
}

TEST(RunConfig, RejectsBadValues) {
    for (const char* text : {R"({"schema_version": 2})", R"({"train": {"epochs": 0}})",
                             R"({"train": {"epochs": "ten"}})", R"({"schedule": {"t_max": 1}})",
                             R"({"schedule": {"kind": "sigmoid"}})", R"({"cov_mode": {"mode": "mixed"}})",
                             R"({"train": {"optimizer": "sgd"}})", R"([1, 2])"}) {
        EXPECT_THROW(run_config_from_json(json::parse(text)), ValidationError) << text;
    }
}
