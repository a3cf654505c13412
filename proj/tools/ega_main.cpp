#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ega/ega.hpp"

// Exit codes: 0 success, 1 configuration error, 2 numerical abort,
// 3 gradient-check failure.

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitGradcheck = 3;

ega::ExperimentConfig load_and_override(const std::string& config_path, const std::string& out_dir,
                                        long long seed, const std::string& strategy,
                                        const std::string& label) {
    ega::ExperimentConfig cfg = ega::load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    if (!label.empty()) cfg.label = label;
    if (!strategy.empty()) {
        if (strategy == "simultaneous")
            cfg.train.strategy = ega::Strategy::simultaneous;
        else if (strategy == "sequential")
            cfg.train.strategy = ega::Strategy::sequential;
        else
            throw ega::ConfigError("unknown strategy '" + strategy + "'");
    }
    return cfg;
}

void print_summary_table(const std::string& axis,
                         const std::map<std::string, std::array<double, 3>>& summary) {
    std::printf("%-18s %10s %10s %10s\n", axis.c_str(), "mean", "min", "max");
    for (const auto& [key, s] : summary)
        std::printf("%-18s %10.4f %10.4f %10.4f\n", key.c_str(), s[0], s[1], s[2]);
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        out.push_back(std::stod(cell));
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EGA: correlation-graph knowledge distillation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, strategy, label;
    long long seed = -1;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config file (JSON)");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory override");
        cmd->add_option("--seed", seed, "training seed override");
    };

    auto* run = app.add_subcommand("run", "execute one distillation experiment");
    add_common(run, true);
    run->add_option("--strategy", strategy, "simultaneous|sequential");
    run->add_option("--label", label, "run label override");

    auto* ablate = app.add_subcommand("ablate", "loss-component ablation on paired seeds");
    add_common(ablate, true);
    int ablate_seeds = 5;
    ablate->add_option("--seeds", ablate_seeds, "number of paired seeds");

    auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep on shared seeds");
    add_common(sweep, true);
    std::string axis_name;
    std::string values_csv;
    int sweep_seeds = 1;
    sweep->add_option("--axis", axis_name, "graph_size|node_weight|edge_weight")->required();
    sweep->add_option("--values", values_csv, "comma-separated axis values (default per axis)");
    sweep->add_option("--seeds", sweep_seeds, "number of shared seeds");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    long long gc_seed = 0;
    std::string gc_sizes, gc_out, gc_corrupt;
    gradcheck->add_option("--seed", gc_seed, "base seed");
    gradcheck->add_option("--sizes", gc_sizes, "size grid as BxD pairs, e.g. 3x4,8x16");
    gradcheck->add_option("--out", gc_out, "report directory");
    gradcheck->add_option("--corrupt-op", gc_corrupt, "self-test hook: corrupt this op's gradient")
        ->group("");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            ega::ExperimentConfig cfg =
                load_and_override(config_path, out_dir, seed, strategy, label);
            ega::RunManifest manifest = ega::cmd_run(cfg);
            std::printf("run %s: teacher accuracy %.4f, student accuracy %.4f\n",
                        manifest.label.c_str(), manifest.teacher_test_accuracy,
                        manifest.student_test_accuracy);
            std::printf("artifacts in %s\n", ega::resolve_run_dir(cfg).string().c_str());
        } else if (ablate->parsed()) {
            ega::ExperimentConfig cfg = load_and_override(config_path, out_dir, seed, "", "");
            ega::AblateReport report = ega::cmd_ablate(cfg, ablate_seeds);
            print_summary_table("variant", report.summary);
            std::printf("report: %s\n", report.report_path.string().c_str());
        } else if (sweep->parsed()) {
            ega::ExperimentConfig cfg = load_and_override(config_path, out_dir, seed, "", "");
            ega::SweepAxis axis;
            if (axis_name == "graph_size")
                axis = ega::SweepAxis::graph_size;
            else if (axis_name == "node_weight")
                axis = ega::SweepAxis::node_weight;
            else if (axis_name == "edge_weight")
                axis = ega::SweepAxis::edge_weight;
            else
                throw ega::ConfigError("unknown sweep axis '" + axis_name + "'");
            ega::SweepReport report =
                ega::cmd_sweep(cfg, axis, parse_values(values_csv), sweep_seeds);
            print_summary_table(axis_name, report.summary);
            std::printf("report: %s\n", report.report_path.string().c_str());
        } else if (gradcheck->parsed()) {
            ega::GradCheckOptions opt;
            opt.seed = static_cast<std::uint64_t>(gc_seed);
            opt.corrupt_op = gc_corrupt;
            if (!gc_sizes.empty()) {
                opt.sizes.clear();
                std::stringstream ss(gc_sizes);
                std::string cell;
                while (std::getline(ss, cell, ',')) {
                    const auto x = cell.find('x');
                    if (x == std::string::npos)
                        throw ega::ConfigError("bad --sizes entry '" + cell + "', expected BxD");
                    opt.sizes.emplace_back(std::stoul(cell.substr(0, x)),
                                           std::stoul(cell.substr(x + 1)));
                }
            }
            const std::filesystem::path report_dir =
                gc_out.empty() ? ega::output_root() / "gradcheck" : std::filesystem::path(gc_out);
            const auto report = ega::cmd_gradcheck(opt, report_dir / "gradcheck_report.csv");
            bool all_pass = true;
            for (const auto& c : report) {
                std::printf("%-22s instances %3zu  max rel error %.3e  %s\n", c.op.c_str(),
                            c.instances, c.max_rel_error, c.pass ? "pass" : "FAIL");
                all_pass = all_pass && c.pass;
            }
            std::printf("report: %s\n", (report_dir / "gradcheck_report.csv").string().c_str());
            if (!all_pass) return kExitGradcheck;
        }
    } catch (const ega::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ega::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ega::ValueError& e) {
        std::cerr << "invalid value: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ega::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ega::NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
