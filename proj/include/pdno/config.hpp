#pragma once

// Run configuration (JSON). Every section is optional; unknown keys are rejected.
//
// {
//   "schema_version": 1,
//   "arch":     {"base_channels": 16, "channel_mults": [1, 2, 4], "blocks_per_res": 1,
//                "time_embed_dim": 64, "in_channels": 2, "groups": 8},
//   "schedule": {"kind": "cosine", "t_max": 100},
//   "train":    {"epochs": 300, "batch_size": 50, "lr0": 1e-4, "lr_halving_period": 100,
//                "optimizer": "adam", "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
//                "seed": 0, "init_seed": 0, "normalize": false, "max_grad_norm": null},
//   "cov_mode": {"mode": "noise_free"},            // or gaussian_noise, or {"mode": "mixed", "lambda": 0.5}
//   "eval":     {"mstd_sqrt_n": false, "store_fields": [], "clip_denoised": true}
// }

#include <filesystem>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "checkpoint.hpp"
#include "core_data.hpp"
#include "inference.hpp"
#include "trainer.hpp"
#include "unet.hpp"

namespace pdno {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
    ArchSpec arch = ArchSpec::desk();
    ScheduleKind schedule_kind = ScheduleKind::cosine;
    int t_max = 100;
    TrainConfig train;
    bool mstd_sqrt_n = false;
    std::vector<std::size_t> store_fields;
    bool clip_denoised = true;

    NoiseSchedule schedule() const { return make_schedule(schedule_kind, t_max); }
};

namespace detail {
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& section) {
    require(j.is_object(), section + ": expected a JSON object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw ValidationError(section + ": unknown key '" + k + "'");
    }
}
} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"schema_version", "arch", "schedule", "train", "cov_mode", "eval"}, "config");
    RunConfig rc;
    try {
        const int version = j.value("schema_version", kConfigSchemaVersion);
        require(version == kConfigSchemaVersion, "config: unsupported schema_version " + std::to_string(version));
        if (j.contains("arch")) rc.arch = arch_from_json(j.at("arch"));
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            detail::reject_unknown_keys(s, {"kind", "t_max"}, "schedule");
            rc.schedule_kind = parse_schedule_kind(s.value("kind", std::string("cosine")));
            rc.t_max = s.value("t_max", rc.t_max);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown_keys(t,
                                        {"epochs", "batch_size", "lr0", "lr_halving_period", "optimizer", "adam_beta1",
                                         "adam_beta2", "adam_eps", "seed", "init_seed", "normalize", "max_grad_norm"},
                                        "train");
            auto& c = rc.train;
            c.epochs = t.value("epochs", c.epochs);
            c.batch_size = t.value("batch_size", c.batch_size);
            c.lr0 = t.value("lr0", c.lr0);
            c.lr_halving_period = t.value("lr_halving_period", c.lr_halving_period);
            c.optimizer = t.value("optimizer", c.optimizer);
            c.adam_beta1 = t.value("adam_beta1", c.adam_beta1);
            c.adam_beta2 = t.value("adam_beta2", c.adam_beta2);
            c.adam_eps = t.value("adam_eps", c.adam_eps);
            c.seed = t.value("seed", c.seed);
            c.init_seed = t.value("init_seed", c.init_seed);
            c.normalize = t.value("normalize", c.normalize);
            if (t.contains("max_grad_norm") && !t.at("max_grad_norm").is_null())
                c.max_grad_norm = t.at("max_grad_norm").get<double>();
        }
        if (j.contains("cov_mode")) rc.train.cov_mode = cov_mode_from_json(j.at("cov_mode"));
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            detail::reject_unknown_keys(e, {"mstd_sqrt_n", "store_fields", "clip_denoised"}, "eval");
            rc.mstd_sqrt_n = e.value("mstd_sqrt_n", rc.mstd_sqrt_n);
            rc.store_fields = e.value("store_fields", rc.store_fields);
            rc.clip_denoised = e.value("clip_denoised", rc.clip_denoised);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    require(rc.t_max >= 2, "schedule: t_max must be >= 2");
    rc.train.validate();
    return rc;
}

inline nlohmann::json to_json(const RunConfig& rc) {
    const auto& c = rc.train;
    nlohmann::json train{{"epochs", c.epochs},
                         {"batch_size", c.batch_size},
                         {"lr0", c.lr0},
                         {"lr_halving_period", c.lr_halving_period},
                         {"optimizer", c.optimizer},
                         {"adam_beta1", c.adam_beta1},
                         {"adam_beta2", c.adam_beta2},
                         {"adam_eps", c.adam_eps},
                         {"seed", c.seed},
                         {"init_seed", c.init_seed},
                         {"normalize", c.normalize},
                         {"max_grad_norm", c.max_grad_norm ? nlohmann::json(*c.max_grad_norm) : nlohmann::json()}};
    return {{"schema_version", kConfigSchemaVersion},
            {"arch", to_json(rc.arch)},
            {"schedule", {{"kind", to_string(rc.schedule_kind)}, {"t_max", rc.t_max}}},
            {"train", train},
            {"cov_mode", to_json(c.cov_mode)},
            {"eval",
             {{"mstd_sqrt_n", rc.mstd_sqrt_n}, {"store_fields", rc.store_fields}, {"clip_denoised", rc.clip_denoised}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
    return run_config_from_json(detail::read_json_file(file));
}

/// Sampling options matching how a model was trained (normalization on or off). With clip_denoised the
/// predicted u0 is kept inside the training output range.
template <class S>
SampleOptions sample_options_for(const TrainedModel<S>& tm, bool clip_denoised = true) {
    SampleOptions o;
    if (tm.normalized) o.normalization = tm.norm;
    if (clip_denoised) o.denoised_range = tm.output_range;
    return o;
}

} // namespace pdno
