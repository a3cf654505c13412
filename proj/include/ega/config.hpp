#pragma once

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ega/data.hpp"
#include "ega/errors.hpp"
#include "ega/network.hpp"
#include "ega/train.hpp"
#include "ega/version.hpp"

// Experiment configuration: one versioned JSON document of nested key-value
// sections. Unknown keys are hard errors so hyperparameter typos cannot pass
// silently. Also: the run manifest written next to every run's artifacts.

namespace ega {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kOutputRootEnvVar = "EGA_OUT_ROOT";

struct DataConfig {
    enum class Type { mixture, csv } type = Type::mixture;
    MixtureSpec mixture;
    std::string train_path;
    std::string test_path;
    std::string label_column = "label";
    int csv_classes = 0; // 0 infers from the training file
};

struct ModelConfig {
    std::vector<std::size_t> hidden_dims;
    std::size_t embed_dim = 16;
};

struct ExperimentConfig {
    std::string label = "run";
    std::string output_dir; // empty -> <output root>/<label>
    DataConfig data;
    ModelConfig teacher{{64, 64}, 16};
    ModelConfig student{{8}, 16};
    PretrainConfig pretrain;
    TrainConfig train;
};

namespace detail {

/// View over a JSON object that tracks which keys were consumed and rejects
/// the rest, reporting the full path of the offender.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const nlohmann::json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key))
            throw ConfigError("config: missing required key '" + path_ + key + "'");
        return j_.at(key);
    }

    template <typename T>
    T get(const std::string& key) {
        try {
            return at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: bad value type for '" + path_ + key + "'");
        }
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return get<T>(key);
    }

    StrictObject section(const std::string& key) { return StrictObject(at(key), path_ + key + "."); }

    bool has_section(const std::string& key) { return has(key); }

    /// Throws if any key was never consumed.
    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key '" + path_ + it.key() + "'");
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline SgdConfig parse_sgd(StrictObject& o, const SgdConfig& defaults) {
    SgdConfig sgd = defaults;
    sgd.total_epochs = o.get_or<int>("epochs", sgd.total_epochs);
    sgd.initial_lr = o.get_or<double>("initial_lr", sgd.initial_lr);
    sgd.decay_factor = o.get_or<double>("decay_factor", sgd.decay_factor);
    sgd.decay_start_epoch = o.get_or<int>("decay_start_epoch", sgd.decay_start_epoch);
    sgd.decay_every = o.get_or<int>("decay_every", sgd.decay_every);
    return sgd;
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::StrictObject root(j, "");
    const int version = root.get<int>("version");
    if (version != kConfigSchemaVersion)
        throw ConfigError("config: unsupported schema version " + std::to_string(version) +
                          " (expected " + std::to_string(kConfigSchemaVersion) + ")");

    ExperimentConfig cfg;
    cfg.label = root.get_or<std::string>("label", cfg.label);
    cfg.output_dir = root.get_or<std::string>("output_dir", "");

    {
        detail::StrictObject data = root.section("data");
        const std::string type = data.get_or<std::string>("type", "mixture");
        if (type == "mixture") {
            cfg.data.type = DataConfig::Type::mixture;
            cfg.data.mixture.num_classes = data.get_or<int>("num_classes", 4);
            cfg.data.mixture.input_dim = data.get_or<std::size_t>("input_dim", 20);
            cfg.data.mixture.clusters_per_class = data.get_or<int>("clusters_per_class", 2);
            cfg.data.mixture.cluster_spread = data.get_or<double>("cluster_spread", 1.0);
            cfg.data.mixture.train_per_class = data.get_or<int>("train_per_class", 150);
            cfg.data.mixture.test_per_class = data.get_or<int>("test_per_class", 250);
            cfg.data.mixture.seed = data.get_or<std::uint64_t>("seed", 7);
        } else if (type == "csv") {
            cfg.data.type = DataConfig::Type::csv;
            cfg.data.train_path = data.get<std::string>("train_path");
            cfg.data.test_path = data.get_or<std::string>("test_path", "");
            cfg.data.label_column = data.get_or<std::string>("label_column", "label");
            cfg.data.csv_classes = data.get_or<int>("num_classes", 0);
        } else {
            throw ConfigError("config: data.type must be 'mixture' or 'csv', got '" + type + "'");
        }
        data.finish();
    }

    auto parse_model = [&](const std::string& key, const ModelConfig& defaults) {
        if (!root.has_section(key)) return defaults;
        detail::StrictObject m = root.section(key);
        ModelConfig out = defaults;
        out.hidden_dims = m.get_or<std::vector<std::size_t>>("hidden_dims", out.hidden_dims);
        out.embed_dim = m.get_or<std::size_t>("embed_dim", out.embed_dim);
        m.finish();
        return out;
    };
    cfg.teacher = parse_model("teacher", cfg.teacher);
    cfg.student = parse_model("student", cfg.student);

    if (root.has_section("pretrain")) {
        detail::StrictObject p = root.section("pretrain");
        SgdConfig defaults;
        defaults.total_epochs = 60;
        defaults.decay_start_epoch = 40;
        defaults.decay_every = 10;
        cfg.pretrain.sgd = detail::parse_sgd(p, defaults);
        cfg.pretrain.batch_size = p.get_or<std::size_t>("batch_size", 64);
        cfg.pretrain.seed = p.get_or<std::uint64_t>("seed", 1);
        cfg.pretrain.freeze_backbone = p.get_or<bool>("freeze_backbone", false);
        p.finish();
    } else {
        cfg.pretrain.sgd.total_epochs = 60;
        cfg.pretrain.sgd.decay_start_epoch = 40;
        cfg.pretrain.sgd.decay_every = 10;
        cfg.pretrain.seed = 1;
    }

    {
        detail::StrictObject t = root.section("train");
        const std::string strategy = t.get_or<std::string>("strategy", "simultaneous");
        if (strategy == "simultaneous")
            cfg.train.strategy = Strategy::simultaneous;
        else if (strategy == "sequential")
            cfg.train.strategy = Strategy::sequential;
        else
            throw ConfigError("config: train.strategy must be 'simultaneous' or 'sequential'");
        cfg.train.lambda = t.get_or<double>("lambda", cfg.train.lambda);
        cfg.train.lambda_ega = t.get_or<double>("lambda_ega", cfg.train.lambda_ega);
        cfg.train.enable_kd = t.get_or<bool>("enable_kd", false);
        cfg.train.kd_temperature = t.get_or<double>("kd_temperature", cfg.train.kd_temperature);
        cfg.train.kd_weight = t.get_or<double>("kd_weight", cfg.train.kd_weight);
        if (t.has("node_weight") && !t.at("node_weight").is_null())
            cfg.train.node_weight = t.get<double>("node_weight");
        if (t.has("edge_weight") && !t.at("edge_weight").is_null())
            cfg.train.edge_weight = t.get<double>("edge_weight");
        cfg.train.batch_size = t.get_or<std::size_t>("batch_size", cfg.train.batch_size);
        cfg.train.sgd = detail::parse_sgd(t, cfg.train.sgd);
        cfg.train.teacher_initial_lr =
            t.get_or<double>("teacher_initial_lr", cfg.train.teacher_initial_lr);
        cfg.train.seed = t.get_or<std::uint64_t>("seed", 0);
        cfg.train.eval_every = t.get_or<int>("eval_every", 1);
        cfg.train.augment_noise = t.get_or<double>("augment_noise", 0.0);
        const std::string norm = t.get_or<std::string>("graph_loss_norm", "frobenius");
        if (norm == "frobenius")
            cfg.train.graph_loss_norm = GraphLossNorm::frobenius;
        else if (norm == "mean_squared")
            cfg.train.graph_loss_norm = GraphLossNorm::mean_squared;
        else
            throw ConfigError("config: graph_loss_norm must be 'frobenius' or 'mean_squared'");
        t.finish();
    }

    root.finish();
    validate(cfg.train);
    validate(cfg.pretrain);
    if (cfg.data.type == DataConfig::Type::mixture) validate(cfg.data.mixture);
    return cfg;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json data;
    if (cfg.data.type == DataConfig::Type::mixture) {
        data = {{"type", "mixture"},
                {"num_classes", cfg.data.mixture.num_classes},
                {"input_dim", cfg.data.mixture.input_dim},
                {"clusters_per_class", cfg.data.mixture.clusters_per_class},
                {"cluster_spread", cfg.data.mixture.cluster_spread},
                {"train_per_class", cfg.data.mixture.train_per_class},
                {"test_per_class", cfg.data.mixture.test_per_class},
                {"seed", cfg.data.mixture.seed}};
    } else {
        data = {{"type", "csv"},
                {"train_path", cfg.data.train_path},
                {"test_path", cfg.data.test_path},
                {"label_column", cfg.data.label_column},
                {"num_classes", cfg.data.csv_classes}};
    }
    nlohmann::json train = {{"strategy", to_string(cfg.train.strategy)},
                            {"lambda", cfg.train.lambda},
                            {"lambda_ega", cfg.train.lambda_ega},
                            {"enable_kd", cfg.train.enable_kd},
                            {"kd_temperature", cfg.train.kd_temperature},
                            {"kd_weight", cfg.train.kd_weight},
                            {"batch_size", cfg.train.batch_size},
                            {"epochs", cfg.train.sgd.total_epochs},
                            {"initial_lr", cfg.train.sgd.initial_lr},
                            {"decay_factor", cfg.train.sgd.decay_factor},
                            {"decay_start_epoch", cfg.train.sgd.decay_start_epoch},
                            {"decay_every", cfg.train.sgd.decay_every},
                            {"teacher_initial_lr", cfg.train.teacher_initial_lr},
                            {"seed", cfg.train.seed},
                            {"eval_every", cfg.train.eval_every},
                            {"augment_noise", cfg.train.augment_noise},
                            {"graph_loss_norm",
                             cfg.train.graph_loss_norm == GraphLossNorm::frobenius
                                 ? "frobenius"
                                 : "mean_squared"}};
    if (cfg.train.node_weight) train["node_weight"] = *cfg.train.node_weight;
    if (cfg.train.edge_weight) train["edge_weight"] = *cfg.train.edge_weight;
    return {{"version", kConfigSchemaVersion},
            {"label", cfg.label},
            {"output_dir", cfg.output_dir},
            {"data", std::move(data)},
            {"teacher", {{"hidden_dims", cfg.teacher.hidden_dims}, {"embed_dim", cfg.teacher.embed_dim}}},
            {"student", {{"hidden_dims", cfg.student.hidden_dims}, {"embed_dim", cfg.student.embed_dim}}},
            {"pretrain",
             {{"epochs", cfg.pretrain.sgd.total_epochs},
              {"initial_lr", cfg.pretrain.sgd.initial_lr},
              {"decay_factor", cfg.pretrain.sgd.decay_factor},
              {"decay_start_epoch", cfg.pretrain.sgd.decay_start_epoch},
              {"decay_every", cfg.pretrain.sgd.decay_every},
              {"batch_size", cfg.pretrain.batch_size},
              {"seed", cfg.pretrain.seed},
              {"freeze_backbone", cfg.pretrain.freeze_backbone}}},
            {"train", std::move(train)}};
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: malformed JSON in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

/// Default output root: $EGA_OUT_ROOT if set, else ./runs.
inline std::filesystem::path output_root() {
    if (const char* env = std::getenv(kOutputRootEnvVar); env && *env)
        return std::filesystem::path(env);
    return std::filesystem::path("runs");
}

inline std::filesystem::path resolve_run_dir(const ExperimentConfig& cfg) {
    if (!cfg.output_dir.empty()) return std::filesystem::path(cfg.output_dir);
    return output_root() / cfg.label;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string toolkit_version = kVersion;
    std::string label;
    std::string status = "completed";
    std::string started_at;
    std::string finished_at;
    nlohmann::json config;
    nlohmann::json seeds; // effective seeds, for paired-design audits
    double teacher_test_accuracy = 0.0;
    double student_test_accuracy = 0.0;
    std::map<std::string, std::string> artifacts; // name -> path
};

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes the manifest; every referenced artifact must already exist.
inline void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
    for (const auto& [name, p] : m.artifacts)
        if (!std::filesystem::exists(p))
            throw DataError("manifest: artifact '" + name + "' missing at '" + p + "'");
    nlohmann::json j = {{"toolkit_version", m.toolkit_version},
                        {"label", m.label},
                        {"status", m.status},
                        {"started_at", m.started_at},
                        {"finished_at", m.finished_at},
                        {"config", m.config},
                        {"seeds", m.seeds},
                        {"teacher_test_accuracy", m.teacher_test_accuracy},
                        {"student_test_accuracy", m.student_test_accuracy},
                        {"artifacts", m.artifacts}};
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: malformed JSON: " + std::string(e.what()));
    }
    RunManifest m;
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.label = j.at("label").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.config = j.at("config");
    m.seeds = j.at("seeds");
    m.teacher_test_accuracy = j.at("teacher_test_accuracy").get<double>();
    m.student_test_accuracy = j.at("student_test_accuracy").get<double>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return m;
}

// ---------------------------------------------------------------------------
// Metrics file: newline-delimited CSV, one record per epoch in EpochMetrics
// field order; the header line carries the schema version. Appended and
// flushed per epoch, so an aborted run leaves a parsable prefix.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "# ega-metrics v1\nepoch,lr,train_loss,l_ce,l_node,l_edge,l_kd,test_accuracy\n";

class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw DataError("metrics: cannot open '" + path.string() + "' for writing");
        out_ << kMetricsHeader;
        out_.flush();
    }

    void write(const EpochMetrics& em) {
        char buf[64];
        auto fmt = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        out_ << em.epoch << ',' << fmt(em.lr) << ',' << fmt(em.train_loss) << ',' << fmt(em.l_ce)
             << ',' << fmt(em.l_node) << ',' << fmt(em.l_edge) << ','
             << (em.l_kd ? fmt(*em.l_kd) : std::string()) << ',' << fmt(em.test_accuracy) << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

/// Parses a metrics file, tolerating a truncated final line (crash prefix).
inline std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("metrics: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "# ega-metrics v1")
        throw DataError("metrics: bad or missing version header in '" + path.string() + "'");
    if (!std::getline(in, line))
        throw DataError("metrics: missing column header in '" + path.string() + "'");
    std::vector<EpochMetrics> out;
    while (std::getline(in, line)) {
        std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != 8) continue; // truncated tail
        try {
            EpochMetrics em;
            em.epoch = std::stoi(cells[0]);
            em.lr = std::stod(cells[1]);
            em.train_loss = std::stod(cells[2]);
            em.l_ce = std::stod(cells[3]);
            em.l_node = std::stod(cells[4]);
            em.l_edge = std::stod(cells[5]);
            if (!cells[6].empty()) em.l_kd = std::stod(cells[6]);
            em.test_accuracy = std::stod(cells[7]);
            out.push_back(em);
        } catch (const std::exception&) {
            break; // truncated tail
        }
    }
    return out;
}

} // namespace ega
