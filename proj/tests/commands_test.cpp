#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ega/commands.hpp"

using namespace ega;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::string s;
    std::getline(in, s, '\0');
    return s;
}

// Small fast experiment shared by the command tests.
ExperimentConfig quick_config(const fs::path& root, const std::string& label) {
    ExperimentConfig cfg;
    cfg.label = label;
    cfg.output_dir = (root / label).string();
    cfg.data.mixture.num_classes = 3;
    cfg.data.mixture.input_dim = 6;
    cfg.data.mixture.clusters_per_class = 1;
    cfg.data.mixture.cluster_spread = 0.8;
    cfg.data.mixture.train_per_class = 20;
    cfg.data.mixture.test_per_class = 20;
    cfg.data.mixture.seed = 9;
    cfg.teacher = {{12}, 5};
    cfg.student = {{4}, 5};
    cfg.pretrain.sgd.total_epochs = 5;
    cfg.pretrain.sgd.decay_start_epoch = 5;
    cfg.pretrain.batch_size = 16;
    cfg.pretrain.seed = 1;
    cfg.train.batch_size = 16;
    cfg.train.sgd.total_epochs = 4;
    cfg.train.sgd.decay_start_epoch = 4;
    cfg.train.seed = 2;
    return cfg;
}

struct OutputRootGuard {
    explicit OutputRootGuard(const fs::path& root) {
        setenv(kOutputRootEnvVar, root.string().c_str(), 1);
    }
    ~OutputRootGuard() { unsetenv(kOutputRootEnvVar); }
};

fs::path fresh_root(const std::string& tag) {
    const fs::path root = fs::temp_directory_path() / ("ega_cmd_" + tag);
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

} // namespace

TEST_CASE("cmd_run writes metrics, checkpoints, and a manifest") {
    const fs::path root = fresh_root("run");
    OutputRootGuard guard(root);
    ExperimentConfig cfg = quick_config(root, "basic");
    // sequential keeps the pretrained head, so the teacher accuracy in the
    // manifest reflects the pretraining quality
    cfg.train.strategy = Strategy::sequential;

    RunManifest manifest = cmd_run(cfg);
    CHECK(manifest.student_test_accuracy >= 0.0);
    CHECK(manifest.teacher_test_accuracy > 0.3);
    for (const auto& [name, path] : manifest.artifacts) CHECK(fs::exists(path));

    const auto rows = read_metrics(root / "basic" / "metrics.csv");
    REQUIRE(rows.size() == 4);
    for (const auto& em : rows) CHECK(em.lr == 0.05);

    RunManifest loaded = load_manifest(root / "basic" / "manifest.json");
    CHECK(loaded.config == to_json(cfg));
    fs::remove_all(root);
}

TEST_CASE("cmd_run is byte-deterministic across reruns") {
    const fs::path root = fresh_root("det");
    OutputRootGuard guard(root);

    ExperimentConfig cfg = quick_config(root, "det1");
    cmd_run(cfg);
    const std::string first = slurp(root / "det1" / "metrics.csv");

    // identical config + seed into a different directory: byte-identical
    ExperimentConfig cfg2 = quick_config(root, "det1");
    cfg2.output_dir = (root / "det2").string();
    cmd_run(cfg2);
    CHECK(slurp(root / "det2" / "metrics.csv") == first);

    // rerunning in place reproduces the same bytes
    cmd_run(cfg);
    CHECK(slurp(root / "det1" / "metrics.csv") == first);

    // a different training seed changes the trajectory
    ExperimentConfig cfg3 = quick_config(root, "det3");
    cfg3.train.seed = 77;
    cmd_run(cfg3);
    CHECK(slurp(root / "det3" / "metrics.csv") != first);
    fs::remove_all(root);
}

TEST_CASE("cmd_run with zero epochs reports the untrained student") {
    const fs::path root = fresh_root("zero");
    OutputRootGuard guard(root);
    ExperimentConfig cfg = quick_config(root, "zero");
    cfg.train.sgd.total_epochs = 0;

    RunManifest manifest = cmd_run(cfg);
    CHECK(read_metrics(root / "zero" / "metrics.csv").empty());
    CHECK(manifest.student_test_accuracy >= 0.0);
    CHECK(manifest.student_test_accuracy <= 1.0);
    CHECK(fs::exists(root / "zero" / "manifest.json"));
    fs::remove_all(root);
}

TEST_CASE("teacher checkpoints are cached and reused") {
    const fs::path root = fresh_root("cache");
    OutputRootGuard guard(root);

    cmd_run(quick_config(root, "c1"));
    const fs::path cache = root / "teacher_cache";
    REQUIRE(fs::exists(cache));
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(cache)) {
        (void)e;
        ++count;
    }
    CHECK(count == 1);

    // same teacher-relevant config: reused; different train seed, same cache
    ExperimentConfig other = quick_config(root, "c2");
    other.train.seed = 99;
    cmd_run(other);
    count = 0;
    for (const auto& e : fs::directory_iterator(cache)) {
        (void)e;
        ++count;
    }
    CHECK(count == 1);

    // changing the pretrain schedule invalidates the cache key
    ExperimentConfig changed = quick_config(root, "c3");
    changed.pretrain.sgd.total_epochs = 6;
    cmd_run(changed);
    count = 0;
    for (const auto& e : fs::directory_iterator(cache)) {
        (void)e;
        ++count;
    }
    CHECK(count == 2);
    fs::remove_all(root);
}

TEST_CASE("cmd_ablate pairs seeds across the four variants") {
    const fs::path root = fresh_root("ablate");
    OutputRootGuard guard(root);
    ExperimentConfig cfg = quick_config(root, "ab");
    cfg.train.sgd.total_epochs = 3;
    cfg.train.sgd.decay_start_epoch = 3;

    AblateReport report = cmd_ablate(cfg, 2);
    CHECK(report.runs.size() == 8);
    REQUIRE(report.summary.size() == 4);
    for (const auto& name : {"baseline", "ega_wo_node", "ega_wo_edge", "ega_full"})
        CHECK(report.summary.count(name) == 1);
    CHECK(fs::exists(report.report_path));

    // paired design: all variants of one seed share data and student init
    nlohmann::json seeds_baseline =
        load_manifest(root / "ab_ablate" / "baseline_s2" / "manifest.json").seeds;
    nlohmann::json seeds_full =
        load_manifest(root / "ab_ablate" / "ega_full_s2" / "manifest.json").seeds;
    CHECK(seeds_baseline.at("data") == seeds_full.at("data"));
    CHECK(seeds_baseline.at("student_init") == seeds_full.at("student_init"));
    CHECK(seeds_baseline.at("teacher_cache") == seeds_full.at("teacher_cache"));

    // the baseline variant trains with both loss terms at zero weight
    nlohmann::json baseline_cfg =
        load_manifest(root / "ab_ablate" / "baseline_s2" / "manifest.json").config;
    CHECK(baseline_cfg.at("train").at("node_weight").get<double>() == 0.0);
    CHECK(baseline_cfg.at("train").at("edge_weight").get<double>() == 0.0);
    nlohmann::json wo_node_cfg =
        load_manifest(root / "ab_ablate" / "ega_wo_node_s2" / "manifest.json").config;
    CHECK(wo_node_cfg.at("train").at("node_weight").get<double>() == 0.0);
    CHECK(wo_node_cfg.at("train").at("edge_weight").get<double>() ==
          Catch::Approx(cfg.train.effective_edge_weight()));
    fs::remove_all(root);
}

TEST_CASE("cmd_sweep covers its axis and matches cmd_run bit for bit") {
    const fs::path root = fresh_root("sweep");
    OutputRootGuard guard(root);
    ExperimentConfig cfg = quick_config(root, "sw");
    cfg.train.sgd.total_epochs = 3;
    cfg.train.sgd.decay_start_epoch = 3;

    SweepReport report = cmd_sweep(cfg, SweepAxis::graph_size, {8, 16}, 1);
    CHECK(report.runs.size() == 2);
    CHECK(report.summary.count("8") == 1);
    CHECK(report.summary.count("16") == 1);

    // a single-value sweep reproduces cmd_run's metrics byte-identically
    ExperimentConfig direct = quick_config(root, "direct");
    direct.train.sgd.total_epochs = 3;
    direct.train.sgd.decay_start_epoch = 3;
    direct.train.batch_size = 8;
    cmd_run(direct);
    CHECK(slurp(root / "sw_sweep" / "graph_size_8_s2" / "metrics.csv") ==
          slurp(root / "direct" / "metrics.csv"));

    // weight axes train single-term objectives
    SweepReport node_sweep = cmd_sweep(cfg, SweepAxis::node_weight, {1.5}, 1);
    nlohmann::json node_cfg =
        load_manifest(root / "sw_sweep" / "node_weight_1.5_s2" / "manifest.json").config;
    CHECK(node_cfg.at("train").at("node_weight").get<double>() == 1.5);
    CHECK(node_cfg.at("train").at("edge_weight").get<double>() == 0.0);

    CHECK_THROWS_AS(cmd_sweep(cfg, SweepAxis::graph_size, {1}, 1), ValueError);
    CHECK_THROWS_AS(cmd_sweep(cfg, SweepAxis::graph_size, {8.5}, 1), ValueError);
    fs::remove_all(root);
}

TEST_CASE("cmd_run trains from csv files with train-split normalization") {
    const fs::path root = fresh_root("csv");
    OutputRootGuard guard(root);

    // materialize a mixture as csv train/test files
    MixtureSpec m;
    m.num_classes = 3;
    m.input_dim = 6;
    m.clusters_per_class = 1;
    m.cluster_spread = 0.8;
    m.train_per_class = 20;
    m.test_per_class = 20;
    m.seed = 9;
    auto [train, test] = gen_mixture(m);
    save_csv(train, (root / "train.csv").string());
    save_csv(test, (root / "test.csv").string());

    ExperimentConfig cfg = quick_config(root, "fromcsv");
    cfg.data.type = DataConfig::Type::csv;
    cfg.data.train_path = (root / "train.csv").string();
    cfg.data.test_path = (root / "test.csv").string();
    cfg.data.label_column = "label";

    RunManifest manifest = cmd_run(cfg);
    CHECK(manifest.student_test_accuracy > 0.0);
    CHECK(read_metrics(root / "fromcsv" / "metrics.csv").size() == 4);
    // csv data carries no mixture seed
    CHECK(manifest.seeds.at("data").is_null());

    // the config snapshot round-trips through json
    ExperimentConfig back = config_from_json(manifest.config);
    CHECK(back.data.type == DataConfig::Type::csv);
    CHECK(back.data.train_path == cfg.data.train_path);
    CHECK(to_json(back) == manifest.config);

    // a missing csv file surfaces as a data error
    cfg.data.train_path = (root / "nope.csv").string();
    CHECK_THROWS_AS(cmd_run(cfg), DataError);
    fs::remove_all(root);
}

TEST_CASE("sweep default values match the analysis protocol") {
    CHECK(default_sweep_values(SweepAxis::graph_size) ==
          std::vector<double>{16, 32, 64, 128, 256});
    CHECK(default_sweep_values(SweepAxis::node_weight) ==
          std::vector<double>{1.2, 1.4, 1.5, 1.6, 1.8, 2.0});
    CHECK(default_sweep_values(SweepAxis::edge_weight) ==
          std::vector<double>{0.2, 0.4, 0.5, 0.6, 0.8, 1.0});
}

TEST_CASE("cmd_gradcheck writes machine-readable records") {
    const fs::path root = fresh_root("gc");
    GradCheckOptions opt;
    opt.seed = 3;
    opt.sizes = {{4, 8}};
    opt.instances_per_size = 2;
    const fs::path report_path = root / "gradcheck_report.csv";
    const auto report = cmd_gradcheck(opt, report_path);
    CHECK(!report.empty());
    for (const auto& c : report) CHECK(c.pass);

    std::ifstream in(report_path);
    REQUIRE(in);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# ega-gradcheck v1");
    std::getline(in, line);
    CHECK(line == "op,instances,max_rel_error,pass");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == report.size());
    fs::remove_all(root);
}
