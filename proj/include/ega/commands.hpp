#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ega/config.hpp"
#include "ega/gradcheck.hpp"
#include "ega/train.hpp"

// Experiment orchestration behind the CLI subcommands. Each run owns one
// output directory with metrics.csv, final checkpoints, and a manifest;
// sweeps and ablations fan out paired sub-runs and assemble a report after
// all of them finish. Pretrained teachers are cached by config hash.

namespace ega {

namespace detail {

// Seed salts for deriving the independent streams of one experiment.
inline constexpr std::uint64_t kTeacherInitSalt = 0x7469ULL;
inline constexpr std::uint64_t kStudentInitSalt = 0x7369ULL;
inline constexpr std::uint64_t kTeacherHeadSalt = 0x7468ULL;

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Everything the pretrained teacher depends on: data, architecture,
/// pretraining schedule and seed. Train-time settings are excluded so all
/// paired runs share one checkpoint.
inline std::string teacher_cache_key(const ExperimentConfig& cfg) {
    nlohmann::json full = to_json(cfg);
    nlohmann::json relevant = {{"data", full.at("data")},
                               {"teacher", full.at("teacher")},
                               {"pretrain", full.at("pretrain")}};
    return hex64(fnv1a(relevant.dump()));
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

inline LoadedData load_data(const ExperimentConfig& cfg) {
    if (cfg.data.type == DataConfig::Type::mixture) {
        auto [train, test] = gen_mixture(cfg.data.mixture);
        return {std::move(train), std::move(test)};
    }
    Dataset train = load_csv(cfg.data.train_path, cfg.data.label_column, cfg.data.csv_classes);
    Normalization norm = train_statistics(train);
    apply_normalization(train, norm);
    Dataset test;
    if (!cfg.data.test_path.empty()) {
        test = load_csv(cfg.data.test_path, cfg.data.label_column, train.num_classes);
        test.split = Split::test;
        apply_normalization(test, norm);
    }
    return {std::move(train), std::move(test)};
}

inline NetworkSpec make_spec(const ModelConfig& model, const Dataset& data, Role role) {
    NetworkSpec spec;
    spec.input_dim = data.num_features;
    spec.hidden_dims = model.hidden_dims;
    spec.num_classes = static_cast<std::size_t>(data.num_classes);
    spec.embed_dim = model.embed_dim;
    spec.role = role;
    return spec;
}

/// Pretrains the teacher or loads the cached checkpoint for this config.
inline PretrainResult provision_teacher(const ExperimentConfig& cfg, const LoadedData& data,
                                        const std::filesystem::path& cache_dir) {
    const NetworkSpec spec = make_spec(cfg.teacher, data.train, Role::teacher);
    std::filesystem::create_directories(cache_dir);
    const std::filesystem::path cache_file =
        cache_dir / ("teacher_" + teacher_cache_key(cfg) + ".json");
    if (std::filesystem::exists(cache_file)) {
        PretrainResult result;
        result.state = load_checkpoint(cache_file.string());
        result.train_accuracy = evaluate(result.state, data.train);
        result.test_accuracy = data.test.size() ? evaluate(result.state, data.test) : 0.0;
        return result;
    }
    NetworkState teacher = init_network(spec, mix_seed(cfg.pretrain.seed, kTeacherInitSalt));
    PretrainResult result = pretrain_teacher(teacher, data.train, data.test, cfg.pretrain);
    save_checkpoint(result.state, cache_file.string());
    return result;
}

} // namespace detail

/// Executes one experiment end to end: data, teacher provisioning, the
/// configured distillation strategy, per-epoch metrics, checkpoints, and the
/// manifest. Returns the manifest.
inline RunManifest cmd_run(const ExperimentConfig& cfg) {
    RunManifest manifest;
    manifest.label = cfg.label;
    manifest.started_at = utc_timestamp();
    manifest.config = to_json(cfg);

    const std::filesystem::path run_dir = resolve_run_dir(cfg);
    std::filesystem::create_directories(run_dir);
    const std::filesystem::path cache_dir = output_root() / "teacher_cache";

    detail::LoadedData data = detail::load_data(cfg);

    if (cfg.pretrain.sgd.total_epochs == 0 && cfg.train.strategy == Strategy::sequential)
        std::cerr << "[ega] warning: sequential distillation from an un-pretrained teacher "
                     "(pretrain epochs = 0); permitted as an ablation\n";

    PretrainResult teacher = detail::provision_teacher(cfg, data, cache_dir);

    NetworkState teacher_state = teacher.state;
    if (cfg.train.strategy == Strategy::simultaneous) {
        // Mutual learning starts the teacher's new layers (head + embed) from
        // a fresh seeded init on top of the provisioned backbone.
        NetworkState fresh = init_network(teacher_state.spec,
                                          mix_seed(cfg.train.seed, detail::kTeacherHeadSalt));
        teacher_state.head = fresh.head;
        teacher_state.embed = fresh.embed;
    }

    const NetworkSpec student_spec = detail::make_spec(cfg.student, data.train, Role::student);
    NetworkState student =
        init_network(student_spec, mix_seed(cfg.train.seed, detail::kStudentInitSalt));

    const std::filesystem::path metrics_path = run_dir / "metrics.csv";
    DistillResult result;
    {
        MetricsWriter writer(metrics_path);
        MetricsSink sink = [&](const EpochMetrics& em) { writer.write(em); };
        result = cfg.train.strategy == Strategy::simultaneous
                     ? train_simultaneous(teacher_state, student, data.train, data.test, cfg.train,
                                          sink)
                     : train_sequential(teacher_state, student, data.train, data.test, cfg.train,
                                        sink);
    }

    const std::filesystem::path teacher_ckpt = run_dir / "teacher_final.json";
    const std::filesystem::path student_ckpt = run_dir / "student_final.json";
    save_checkpoint(result.teacher, teacher_ckpt.string());
    save_checkpoint(result.student, student_ckpt.string());

    manifest.finished_at = utc_timestamp();
    manifest.teacher_test_accuracy =
        data.test.size() ? evaluate(result.teacher, data.test) : teacher.test_accuracy;
    manifest.student_test_accuracy =
        data.test.size() ? evaluate(result.student, data.test)
                         : (result.metrics.empty() ? 0.0 : result.metrics.back().test_accuracy);
    manifest.seeds = {{"data", cfg.data.type == DataConfig::Type::mixture
                                   ? nlohmann::json(cfg.data.mixture.seed)
                                   : nlohmann::json(nullptr)},
                      {"pretrain", cfg.pretrain.seed},
                      {"train", cfg.train.seed},
                      {"student_init", mix_seed(cfg.train.seed, detail::kStudentInitSalt)},
                      {"teacher_cache", detail::teacher_cache_key(cfg)}};
    manifest.artifacts = {{"metrics", metrics_path.string()},
                          {"teacher_checkpoint", teacher_ckpt.string()},
                          {"student_checkpoint", student_ckpt.string()}};
    save_manifest(manifest, run_dir / "manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// Ablation: baseline / edge-only / node-only / full, on paired seeds.
// ---------------------------------------------------------------------------

struct VariantResult {
    std::string variant;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

struct AblateReport {
    std::vector<VariantResult> runs;
    // variant -> {mean, min, max}
    std::map<std::string, std::array<double, 3>> summary;
    std::filesystem::path report_path;
};

namespace detail {

inline void write_variant_report(const std::filesystem::path& path,
                                 const std::string& axis_name,
                                 const std::vector<VariantResult>& runs,
                                 std::map<std::string, std::array<double, 3>>& summary) {
    std::map<std::string, std::vector<double>> by_variant;
    for (const auto& r : runs) by_variant[r.variant].push_back(r.accuracy);
    for (auto& [variant, accs] : by_variant) {
        double mean = 0, lo = accs[0], hi = accs[0];
        for (double a : accs) {
            mean += a;
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        mean /= static_cast<double>(accs.size());
        summary[variant] = {mean, lo, hi};
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("report: cannot open '" + path.string() + "'");
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "# ega-report v1\n" << axis_name << ",seed,test_accuracy\n";
    for (const auto& r : runs)
        out << r.variant << ',' << r.seed << ',' << fmt(r.accuracy) << '\n';
    out << "\n" << axis_name << ",mean,min,max\n";
    for (const auto& [variant, s] : summary)
        out << variant << ',' << fmt(s[0]) << ',' << fmt(s[1]) << ',' << fmt(s[2]) << '\n';
}

inline ExperimentConfig subrun_config(const ExperimentConfig& base, const std::string& name,
                                      std::uint64_t seed,
                                      const std::filesystem::path& parent_dir) {
    ExperimentConfig cfg = base;
    cfg.label = base.label + "_" + name + "_s" + std::to_string(seed);
    cfg.output_dir = (parent_dir / (name + "_s" + std::to_string(seed))).string();
    cfg.train.seed = seed;
    return cfg;
}

} // namespace detail

/// Loss-component ablation on shared seeds: the four variants differ only in
/// the (node, edge) weight pair, so data, inits, and batch order are paired.
inline AblateReport cmd_ablate(const ExperimentConfig& cfg, int num_seeds = 5) {
    if (num_seeds < 1) throw ValueError("ablate: need at least 1 seed");
    const double w_node = cfg.train.effective_node_weight();
    const double w_edge = cfg.train.effective_edge_weight();
    const std::vector<std::pair<std::string, std::pair<double, double>>> variants = {
        {"baseline", {0.0, 0.0}},
        {"ega_wo_node", {0.0, w_edge}},
        {"ega_wo_edge", {w_node, 0.0}},
        {"ega_full", {w_node, w_edge}},
    };
    const std::filesystem::path parent = resolve_run_dir(cfg).string() + "_ablate";
    std::filesystem::create_directories(parent);

    AblateReport report;
    for (const auto& [name, weights] : variants) {
        for (int s = 0; s < num_seeds; ++s) {
            const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(s);
            ExperimentConfig run_cfg = detail::subrun_config(cfg, name, seed, parent);
            run_cfg.train.node_weight = weights.first;
            run_cfg.train.edge_weight = weights.second;
            RunManifest manifest = cmd_run(run_cfg);
            report.runs.push_back({name, seed, manifest.student_test_accuracy});
        }
    }
    report.report_path = parent / "ablate_report.csv";
    detail::write_variant_report(report.report_path, "variant", report.runs, report.summary);
    return report;
}

// ---------------------------------------------------------------------------
// Sweeps: graph size (= batch size) and single-term loss weights.
// ---------------------------------------------------------------------------

enum class SweepAxis { graph_size, node_weight, edge_weight };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::graph_size: return "graph_size";
        case SweepAxis::node_weight: return "node_weight";
        default: return "edge_weight";
    }
}

inline std::vector<double> default_sweep_values(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::graph_size: return {16, 32, 64, 128, 256};
        case SweepAxis::node_weight: return {1.2, 1.4, 1.5, 1.6, 1.8, 2.0};
        default: return {0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
    }
}

struct SweepReport {
    SweepAxis axis = SweepAxis::graph_size;
    std::vector<VariantResult> runs; // variant holds the formatted value
    std::map<std::string, std::array<double, 3>> summary;
    std::filesystem::path report_path;
};

/// One run per axis value on shared seeds. The graph-size axis varies the
/// batch size (graph size == batch size); the weight axes train single-term
/// objectives L_ce + w * L_term.
inline SweepReport cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                             std::vector<double> values = {}, int num_seeds = 1) {
    if (num_seeds < 1) throw ValueError("sweep: need at least 1 seed");
    if (values.empty()) values = default_sweep_values(axis);
    for (double v : values) {
        if (axis == SweepAxis::graph_size && (v < 2.0 || v != std::floor(v)))
            throw ValueError("sweep: graph sizes must be integers >= 2");
        if (axis != SweepAxis::graph_size && !(v >= 0.0))
            throw ValueError("sweep: loss weights must be >= 0");
    }
    const std::filesystem::path parent = resolve_run_dir(cfg).string() + "_sweep";
    std::filesystem::create_directories(parent);

    SweepReport report;
    report.axis = axis;
    for (double v : values) {
        char name[48];
        std::snprintf(name, sizeof(name), "%s_%g", to_string(axis), v);
        for (int s = 0; s < num_seeds; ++s) {
            const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(s);
            ExperimentConfig run_cfg = detail::subrun_config(cfg, name, seed, parent);
            switch (axis) {
                case SweepAxis::graph_size:
                    run_cfg.train.batch_size = static_cast<std::size_t>(v);
                    break;
                case SweepAxis::node_weight:
                    run_cfg.train.node_weight = v;
                    run_cfg.train.edge_weight = 0.0;
                    break;
                case SweepAxis::edge_weight:
                    run_cfg.train.node_weight = 0.0;
                    run_cfg.train.edge_weight = v;
                    break;
            }
            RunManifest manifest = cmd_run(run_cfg);
            char value_key[32];
            std::snprintf(value_key, sizeof(value_key), "%g", v);
            report.runs.push_back({value_key, seed, manifest.student_test_accuracy});
        }
    }
    report.report_path = parent / ("sweep_report_" + std::string(to_string(axis)) + ".csv");
    detail::write_variant_report(report.report_path, to_string(axis), report.runs, report.summary);
    return report;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Runs the finite-difference suite and writes machine-readable records, one
/// line per op: op,instances,max_rel_error,pass.
inline std::vector<GradCheckCase> cmd_gradcheck(const GradCheckOptions& opt,
                                                const std::filesystem::path& report_path) {
    std::vector<GradCheckCase> report = run_gradcheck(opt);
    if (!report_path.empty()) {
        if (report_path.has_parent_path())
            std::filesystem::create_directories(report_path.parent_path());
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw DataError("gradcheck: cannot open '" + report_path.string() + "'");
        out << "# ega-gradcheck v1\nop,instances,max_rel_error,pass\n";
        char buf[64];
        for (const auto& c : report) {
            std::snprintf(buf, sizeof(buf), "%.3e", c.max_rel_error);
            out << c.op << ',' << c.instances << ',' << buf << ',' << (c.pass ? "pass" : "FAIL")
                << '\n';
        }
    }
    return report;
}

} // namespace ega
