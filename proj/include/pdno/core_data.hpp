#pragma once

// Grids, fields, paired datasets and the on-disk dataset directory format:
//
//   manifest.json   {"format_version":"1","problem","n","m","lo","hi","seed","sigma","params"}
//   inputs.f64      n*m little-endian IEEE-754 doubles, sample-major
//   outputs.f64     same layout as inputs.f64

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace pdno {

using json = nlohmann::json;

struct Grid1D {
    double lo = 0.0;
    double hi = 1.0;
    int m = 2;
    bool periodic = false;

    Grid1D() = default;
    Grid1D(double lo_, double hi_, int m_, bool periodic_ = false)
        : lo(lo_), hi(hi_), m(m_), periodic(periodic_) {
        validate();
    }

    void validate() const {
        require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, "grid requires lo < hi");
        require(m >= 2, "grid requires m >= 2");
    }

    double spacing() const { return (hi - lo) / (periodic ? m : m - 1); }

    double x(int j) const { return lo + j * spacing(); }

    std::vector<double> coordinates() const {
        std::vector<double> xs(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) xs[static_cast<std::size_t>(j)] = x(j);
        return xs;
    }

    bool operator==(const Grid1D&) const = default;
};

inline bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Grid values of a real function on a Grid1D.
struct Field {
    Grid1D grid;
    std::vector<double> values;

    Field() = default;
    Field(Grid1D g, std::vector<double> v) : grid(g), values(std::move(v)) { validate(); }

    static Field constant(const Grid1D& g, double c) {
        return Field(g, std::vector<double>(static_cast<std::size_t>(g.m), c));
    }

    void validate() const {
        grid.validate();
        require(values.size() == static_cast<std::size_t>(grid.m), "field length does not match grid");
        require(all_finite(values), "field contains non-finite values");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t j) const { return values[j]; }
};

struct DatasetMeta {
    std::string problem;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    json params = json::object();

    bool operator==(const DatasetMeta&) const = default;
};

/// Ordered (a, u) pairs on a shared grid.
struct PairDataset {
    Grid1D grid;
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> outputs;
    DatasetMeta meta;

    std::size_t n() const { return inputs.size(); }

    void validate() const {
        grid.validate();
        require(inputs.size() == outputs.size(), "dataset inputs/outputs count mismatch");
        const auto m = static_cast<std::size_t>(grid.m);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            require(inputs[i].size() == m && outputs[i].size() == m,
                    "dataset sample " + std::to_string(i) + " has wrong length");
            require(all_finite(inputs[i]) && all_finite(outputs[i]),
                    "dataset sample " + std::to_string(i) + " has non-finite values");
        }
        require(std::isfinite(meta.sigma) && meta.sigma >= 0.0, "dataset sigma must be >= 0");
    }

    Field input(std::size_t i) const { return Field(grid, inputs.at(i)); }
    Field output(std::size_t i) const { return Field(grid, outputs.at(i)); }

    /// First `count` samples, starting at `first`.
    PairDataset slice(std::size_t first, std::size_t count) const {
        require(first + count <= n(), "dataset slice out of range");
        PairDataset out{grid, {}, {}, meta};
        out.inputs.assign(inputs.begin() + first, inputs.begin() + first + count);
        out.outputs.assign(outputs.begin() + first, outputs.begin() + first + count);
        return out;
    }

    bool operator==(const PairDataset&) const = default;
};

namespace detail {

inline void write_f64_le(std::ofstream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xffu);
    os.write(bytes, 8);
}

inline double decode_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
    return std::bit_cast<double>(bits);
}

inline void write_rows(const std::filesystem::path& file, const std::vector<std::vector<double>>& rows) {
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(file.string(), "cannot open for writing");
    for (const auto& row : rows)
        for (double v : row) write_f64_le(os, v);
    if (!os) throw IoError(file.string(), "write failed");
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError(file.string(), "cannot open for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<std::vector<double>> read_rows(const std::filesystem::path& file, std::size_t n, std::size_t m) {
    const auto bytes = read_bytes(file);
    if (bytes.size() != n * m * 8)
        throw IoError(file.string(), "size mismatch: expected " + std::to_string(n * m * 8) + " bytes, found " +
                                         std::to_string(bytes.size()));
    std::vector<std::vector<double>> rows(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double v = decode_f64_le(bytes.data() + 8 * (i * m + j));
            if (!std::isfinite(v))
                throw ValidationError(file.string() + ": non-finite value at sample " + std::to_string(i));
            rows[i][j] = v;
        }
    return rows;
}

inline json read_json_file(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw IoError(file.string(), "cannot open for reading");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(file.string() + ": malformed JSON: " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& file, const std::string& text) {
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(file.string(), "cannot open for writing");
    os << text;
    if (!os) throw IoError(file.string(), "write failed");
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError(dir.string(), "cannot create directory");
}

} // namespace detail

inline constexpr const char* kDatasetFormatVersion = "1";

inline json dataset_manifest(const PairDataset& ds) {
    return json{{"format_version", kDatasetFormatVersion},
                {"problem", ds.meta.problem},
                {"n", ds.n()},
                {"m", ds.grid.m},
                {"lo", ds.grid.lo},
                {"hi", ds.grid.hi},
                {"seed", ds.meta.seed},
                {"sigma", ds.meta.sigma},
                {"params", ds.meta.params}};
}

inline void write_dataset(const PairDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    detail::ensure_directory(dir);
    detail::write_text_file(dir / "manifest.json", dataset_manifest(ds).dump(2) + "\n");
    detail::write_rows(dir / "inputs.f64", ds.inputs);
    detail::write_rows(dir / "outputs.f64", ds.outputs);
}

inline PairDataset read_dataset(const std::filesystem::path& dir) {
    const json man = detail::read_json_file(dir / "manifest.json");
    PairDataset ds;
    try {
        const auto version = man.at("format_version").get<std::string>();
        if (version != kDatasetFormatVersion)
            throw ValidationError((dir / "manifest.json").string() + ": unknown format version \"" + version + "\"");
        const auto n = man.at("n").get<std::size_t>();
        ds.grid = Grid1D(man.at("lo").get<double>(), man.at("hi").get<double>(), man.at("m").get<int>());
        ds.meta.problem = man.at("problem").get<std::string>();
        ds.meta.seed = man.at("seed").get<std::uint64_t>();
        ds.meta.sigma = man.at("sigma").get<double>();
        ds.meta.params = man.value("params", json::object());
        const auto m = static_cast<std::size_t>(ds.grid.m);
        ds.inputs = detail::read_rows(dir / "inputs.f64", n, m);
        ds.outputs = detail::read_rows(dir / "outputs.f64", n, m);
    } catch (const json::exception& e) {
        throw ValidationError((dir / "manifest.json").string() + ": bad manifest: " + e.what());
    }
    ds.validate();
    return ds;
}

struct NormalizationStats {
    double in_mean = 0.0;
    double in_std = 1.0;
    double out_mean = 0.0;
    double out_std = 1.0;

    static NormalizationStats identity() { return {}; }

    bool operator==(const NormalizationStats&) const = default;
};

inline constexpr double kStdFloor = 1e-12;

/// Scalar mean and population std (denominator n*m) of all input and all output values.
inline NormalizationStats normalize_stats(const PairDataset& ds) {
    require(ds.n() > 0, "normalize_stats: empty dataset");
    auto stats = [](const std::vector<std::vector<double>>& rows) {
        // Welford keeps the variance accurate for large constant offsets.
        double mean = 0.0, m2 = 0.0;
        std::size_t count = 0;
        for (const auto& row : rows)
            for (double v : row) {
                ++count;
                const double d = v - mean;
                mean += d / static_cast<double>(count);
                m2 += d * (v - mean);
            }
        const double sd = std::sqrt(m2 / static_cast<double>(count));
        return std::pair{mean, std::max(sd, kStdFloor)};
    };
    const auto [im, is] = stats(ds.inputs);
    const auto [om, os] = stats(ds.outputs);
    return {im, is, om, os};
}

} // namespace pdno
