#pragma once

// Checkpoint directory:
//   manifest.json   arch, schedule (kind, T), covariance mode, normalization stats,
//                   optimizer metadata, epoch, parameter layout
//   params.f32      little-endian float32 parameters in layout order
//   adam_m.f32      first Adam moment, same order
//   adam_v.f32      second Adam moment, same order
//
// Schedule arrays are not stored; they are recomputed from (kind, T) on load.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "core_data.hpp"
#include "trainer.hpp"
#include "unet.hpp"

namespace pdno {

inline constexpr const char* kCheckpointFormatVersion = "1";

namespace detail {

inline void write_f32_file(const std::filesystem::path& file, std::span<const float> values) {
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(file.string(), "cannot open for writing");
    for (float v : values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        const char bytes[4] = {static_cast<char>(bits & 0xffu), static_cast<char>((bits >> 8) & 0xffu),
                               static_cast<char>((bits >> 16) & 0xffu), static_cast<char>((bits >> 24) & 0xffu)};
        os.write(bytes, 4);
    }
    if (!os) throw IoError(file.string(), "write failed");
}

inline std::vector<float> read_f32_file(const std::filesystem::path& file, std::size_t expected) {
    const auto bytes = read_bytes(file);
    if (bytes.size() != expected * 4)
        throw ValidationError(file.string() + ": layout mismatch: expected " + std::to_string(expected) +
                              " float32 values, found " + std::to_string(bytes.size()) + " bytes");
    std::vector<float> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        const unsigned char* p = bytes.data() + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

} // namespace detail

inline nlohmann::json to_json(const CovMode& c) {
    nlohmann::json j{{"mode", to_string(c.kind)}};
    if (c.lambda) j["lambda"] = *c.lambda;
    return j;
}

inline CovMode cov_mode_from_json(const nlohmann::json& j) {
    for (const auto& [k, v] : j.items())
        if (k != "mode" && k != "lambda") throw ValidationError("cov_mode: unknown key '" + k + "'");
    CovMode c;
    c.kind = parse_cov_kind(j.at("mode").get<std::string>());
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    c.validate();
    return c;
}

inline nlohmann::json to_json(const NormalizationStats& s, bool enabled) {
    return {{"enabled", enabled},
            {"in_mean", s.in_mean},
            {"in_std", s.in_std},
            {"out_mean", s.out_mean},
            {"out_std", s.out_std}};
}

inline nlohmann::json layout_json(const std::vector<ParamEntry>& layout) {
    auto arr = nlohmann::json::array();
    for (const auto& e : layout) arr.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
    return arr;
}

inline void save_checkpoint(const TrainedModel<float>& tm, const std::filesystem::path& dir,
                            const nlohmann::json& train_config = nlohmann::json::object()) {
    require(tm.pred.params.size() == tm.adam.m.size() && tm.adam.m.size() == tm.adam.v.size(),
            "save_checkpoint: optimizer state does not match parameters");
    detail::ensure_directory(dir);
    nlohmann::json man{{"format_version", kCheckpointFormatVersion},
                       {"arch", to_json(tm.pred.arch)},
                       {"schedule", {{"kind", to_string(tm.sched.kind())}, {"t_max", tm.sched.t_max()}}},
                       {"cov_mode", to_json(tm.cov)},
                       {"normalization", to_json(tm.norm, tm.normalized)},
                       {"optimizer", {{"name", "adam"}, {"step", tm.adam.step}}},
                       {"output_range", tm.output_range ? nlohmann::json{tm.output_range->first, tm.output_range->second}
                                                        : nlohmann::json()},
                       {"epoch", tm.epoch},
                       {"num_params", tm.pred.params.size()},
                       {"param_dtype", "float32"},
                       {"layout", layout_json(tm.pred.layout)},
                       {"train_config", train_config}};
    detail::write_text_file(dir / "manifest.json", man.dump(2) + "\n");
    detail::write_f32_file(dir / "params.f32", tm.pred.params);
    detail::write_f32_file(dir / "adam_m.f32", tm.adam.m);
    detail::write_f32_file(dir / "adam_v.f32", tm.adam.v);
}

inline TrainedModel<float> load_checkpoint(const std::filesystem::path& dir) {
    const auto man_path = (dir / "manifest.json").string();
    const nlohmann::json man = detail::read_json_file(dir / "manifest.json");
    TrainedModel<float> tm;
    try {
        const auto version = man.at("format_version").get<std::string>();
        if (version != kCheckpointFormatVersion)
            throw ValidationError(man_path + ": unknown checkpoint format version \"" + version + "\"");
        const ArchSpec arch = arch_from_json(man.at("arch"));
        UNet1d<float> net(arch);
        const auto layout = net.layout();
        if (man.at("num_params").get<std::size_t>() != net.num_params() || layout_json(layout) != man.at("layout"))
            throw ValidationError(man_path + ": layout mismatch between manifest arch and stored parameter layout");
        tm.pred.arch = arch;
        tm.pred.layout = layout;
        const auto& sch = man.at("schedule");
        tm.sched = make_schedule(parse_schedule_kind(sch.at("kind").get<std::string>()), sch.at("t_max").get<int>());
        tm.cov = cov_mode_from_json(man.at("cov_mode"));
        const auto& nm = man.at("normalization");
        tm.normalized = nm.at("enabled").get<bool>();
        tm.norm = {nm.at("in_mean").get<double>(), nm.at("in_std").get<double>(), nm.at("out_mean").get<double>(),
                   nm.at("out_std").get<double>()};
        if (man.contains("output_range") && !man.at("output_range").is_null()) {
            const auto r = man.at("output_range").get<std::vector<double>>();
            if (r.size() != 2 || !(r[0] <= r[1]))
                throw ValidationError(man_path + ": output_range must be [min, max]");
            tm.output_range = std::pair{r[0], r[1]};
        }
        tm.epoch = man.at("epoch").get<int>();
        tm.adam.step = man.at("optimizer").at("step").get<std::int64_t>();
        tm.pred.params = detail::read_f32_file(dir / "params.f32", net.num_params());
        tm.adam.m = detail::read_f32_file(dir / "adam_m.f32", net.num_params());
        tm.adam.v = detail::read_f32_file(dir / "adam_v.f32", net.num_params());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(man_path + ": bad checkpoint manifest: " + e.what());
    }
    return tm;
}

} // namespace pdno
