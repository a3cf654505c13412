#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ega/errors.hpp"
#include "ega/random.hpp"
#include "ega/tensor.hpp"

// Desk-scale dataset provisioning: synthetic Gaussian-mixture classification
// tasks with controllable separability, CSV ingestion for small tabular
// data, deterministic batching, and additive-noise augmentation.

namespace ega {

enum class Split { train, test };

/// Per-feature statistics used to normalize a dataset. Always computed from
/// the training split; applying train stats to test data leaks nothing.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;
    bool empty() const { return mean.empty(); }
};

struct Dataset {
    std::size_t num_features = 0;
    std::vector<double> features; // row-major, size() x num_features
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::train;
    Normalization normalization; // the stats that were applied, if any

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return features.data() + i * num_features; }
};

struct MixtureSpec {
    int num_classes = 4;
    std::size_t input_dim = 20;
    int clusters_per_class = 2;
    double cluster_spread = 1.0;
    int train_per_class = 150;
    int test_per_class = 250;
    std::uint64_t seed = 0;
};

inline void validate(const MixtureSpec& spec) {
    if (spec.num_classes < 1) throw ValueError("mixture: num_classes must be >= 1");
    if (spec.input_dim < 1) throw ValueError("mixture: input_dim must be >= 1");
    if (spec.clusters_per_class < 1) throw ValueError("mixture: clusters_per_class must be >= 1");
    if (!(spec.cluster_spread > 0.0)) throw ValueError("mixture: cluster_spread must be > 0");
    if (spec.train_per_class < 1) throw ValueError("mixture: train_per_class must be >= 1");
    if (spec.test_per_class < 0) throw ValueError("mixture: test_per_class must be >= 0");
}

namespace detail {

inline Normalization train_statistics(const Dataset& train) {
    Normalization norm;
    const std::size_t d = train.num_features, n = train.size();
    norm.mean.assign(d, 0.0);
    norm.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) norm.mean[j] += train.row(i)[j];
    for (std::size_t j = 0; j < d; ++j) norm.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = train.row(i)[j] - norm.mean[j];
            norm.stddev[j] += c * c;
        }
    for (std::size_t j = 0; j < d; ++j) {
        norm.stddev[j] = std::sqrt(norm.stddev[j] / static_cast<double>(n));
        if (norm.stddev[j] < 1e-12) norm.stddev[j] = 1.0; // constant feature
    }
    return norm;
}

} // namespace detail

inline void apply_normalization(Dataset& ds, const Normalization& norm) {
    if (norm.mean.size() != ds.num_features)
        throw ShapeError("apply_normalization: stats width mismatch");
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.num_features; ++j) {
            double& v = ds.features[i * ds.num_features + j];
            v = (v - norm.mean[j]) / norm.stddev[j];
        }
    ds.normalization = norm;
}

/// Class-conditional Gaussian clusters with centers drawn from the seed.
/// Train and test are independent draws; both are normalized with statistics
/// computed from the train split only.
inline std::pair<Dataset, Dataset> gen_mixture(const MixtureSpec& spec) {
    validate(spec);
    const std::size_t d = spec.input_dim;
    const int total_clusters = spec.num_classes * spec.clusters_per_class;

    Rng center_rng(mix_seed(spec.seed, 0xce17e125ULL));
    std::vector<double> centers(static_cast<std::size_t>(total_clusters) * d);
    for (auto& v : centers) v = center_rng.normal();

    auto sample_split = [&](int per_class, Split split, std::uint64_t salt) {
        Dataset ds;
        ds.num_features = d;
        ds.num_classes = spec.num_classes;
        ds.split = split;
        Rng rng(mix_seed(spec.seed, salt));
        for (int c = 0; c < spec.num_classes; ++c) {
            for (int i = 0; i < per_class; ++i) {
                const int cluster =
                    c * spec.clusters_per_class + static_cast<int>(rng.index(spec.clusters_per_class));
                const double* mu = centers.data() + static_cast<std::size_t>(cluster) * d;
                for (std::size_t j = 0; j < d; ++j)
                    ds.features.push_back(mu[j] + spec.cluster_spread * rng.normal());
                ds.labels.push_back(c);
            }
        }
        return ds;
    };

    Dataset train = sample_split(spec.train_per_class, Split::train, 0x7261ULL);
    Dataset test = sample_split(spec.test_per_class, Split::test, 0x7465ULL);
    Normalization norm = detail::train_statistics(train);
    apply_normalization(train, norm);
    if (test.size() > 0) apply_normalization(test, norm);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CSV: UTF-8, newline-delimited, header row; one designated label column of
// non-negative integers, every other column decimal floating point.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_csv_double(const std::string& cell, std::size_t row, const std::string& col) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw DataError("csv: non-numeric cell '" + cell + "' at row " + std::to_string(row) +
                        ", column '" + col + "'");
    return value;
}

} // namespace detail

/// Parses a labeled CSV file. Row order is preserved. expected_classes = 0
/// infers the class count from the data; otherwise labels must sit in
/// [0, expected_classes). normalize computes and applies this file's own
/// feature statistics (use apply_normalization for cross-split stats).
inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        int expected_classes = 0, bool normalize = false) {
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw DataError("csv: empty file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = detail::split_csv_line(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw DataError("csv: label column '" + label_column + "' not found in '" + path + "'");

    Dataset ds;
    ds.num_features = header.size() - 1;
    if (ds.num_features == 0) throw DataError("csv: no feature columns in '" + path + "'");

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("csv: row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) continue;
            ds.features.push_back(detail::parse_csv_double(cells[i], row, header[i]));
        }
        const double raw = detail::parse_csv_double(cells[label_idx], row, label_column);
        const int label = static_cast<int>(raw);
        if (static_cast<double>(label) != raw || label < 0)
            throw DataError("csv: label '" + cells[label_idx] + "' at row " + std::to_string(row) +
                            " is not a non-negative integer");
        if (expected_classes > 0 && label >= expected_classes)
            throw DataError("csv: label " + std::to_string(label) + " at row " +
                            std::to_string(row) + " outside declared range [0, " +
                            std::to_string(expected_classes) + ")");
        ds.labels.push_back(label);
    }
    if (ds.labels.empty()) throw DataError("csv: no data rows in '" + path + "'");
    ds.num_classes =
        expected_classes > 0 ? expected_classes : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    if (normalize) apply_normalization(ds, detail::train_statistics(ds));
    return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path,
                     const std::string& label_column = "label") {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < ds.num_features; ++j) out << "f" << j << ",";
    out << label_column << "\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.num_features; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.row(i)[j]);
            out << buf << ",";
        }
        out << ds.labels[i] << "\n";
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Deterministic per-epoch shuffle chunked into batches. A final remnant of
/// size < 2 is dropped: a correlation graph needs at least two nodes.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t epoch_seed) {
    if (batch_size < 2) throw ValueError("batch_indices: batch size must be >= 2");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(epoch_seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        if (stop - start < 2) break;
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return batches;
}

inline Tensor features_for(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size() * ds.num_features);
    for (std::size_t i : idx)
        out.insert(out.end(), ds.row(i), ds.row(i) + ds.num_features);
    return Tensor({idx.size(), ds.num_features}, std::move(out));
}

inline std::vector<int> labels_for(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(ds.labels[i]);
    return out;
}

/// Additive Gaussian jitter on a feature batch; labels are untouched by
/// construction. noise_std = 0 returns the batch bit-identically and draws
/// nothing from the generator.
inline Tensor augment(const Tensor& batch, double noise_std, std::uint64_t seed) {
    if (!(noise_std >= 0.0)) throw ValueError("augment: noise_std must be >= 0");
    if (noise_std == 0.0) return Tensor(batch.shape(), batch.values());
    Rng rng(seed);
    std::vector<double> out = batch.values();
    for (auto& v : out) v += noise_std * rng.normal();
    return Tensor(batch.shape(), std::move(out));
}

} // namespace ega
