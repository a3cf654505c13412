#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ega/data.hpp"
#include "ega/network.hpp"
#include "ega/train.hpp"

using namespace ega;

namespace {

MixtureSpec tiny_task() {
    MixtureSpec spec;
    spec.num_classes = 3;
    spec.input_dim = 8;
    spec.clusters_per_class = 1;
    spec.cluster_spread = 0.7;
    spec.train_per_class = 30;
    spec.test_per_class = 40;
    spec.seed = 5;
    return spec;
}

NetworkSpec teacher_spec(const MixtureSpec& m) {
    NetworkSpec spec;
    spec.input_dim = m.input_dim;
    spec.hidden_dims = {16, 16};
    spec.num_classes = static_cast<std::size_t>(m.num_classes);
    spec.embed_dim = 6;
    spec.role = Role::teacher;
    return spec;
}

NetworkSpec student_spec(const MixtureSpec& m) {
    NetworkSpec spec;
    spec.input_dim = m.input_dim;
    spec.hidden_dims = {5};
    spec.num_classes = static_cast<std::size_t>(m.num_classes);
    spec.embed_dim = 6;
    spec.role = Role::student;
    return spec;
}

TrainConfig quick_train(Strategy strategy, int epochs = 6) {
    TrainConfig cfg;
    cfg.strategy = strategy;
    cfg.batch_size = 16;
    cfg.sgd.total_epochs = epochs;
    cfg.sgd.decay_start_epoch = epochs; // flat schedule at this scale
    cfg.seed = 3;
    return cfg;
}

bool params_identical(const NetworkState& a, const NetworkState& b) {
    const auto pa = all_params(a), pb = all_params(b);
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].values() != pb[i].values()) return false;
    return true;
}

bool metrics_identical(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].lr != b[i].lr ||
            a[i].train_loss != b[i].train_loss || a[i].l_ce != b[i].l_ce ||
            a[i].l_node != b[i].l_node || a[i].l_edge != b[i].l_edge ||
            a[i].l_kd.has_value() != b[i].l_kd.has_value() ||
            a[i].test_accuracy != b[i].test_accuracy)
            return false;
        if (a[i].l_kd && *a[i].l_kd != *b[i].l_kd) return false;
    }
    return true;
}

} // namespace

TEST_CASE("pretraining reaches ceiling accuracy on a separable task") {
    MixtureSpec m;
    m.num_classes = 2;
    m.input_dim = 6;
    m.clusters_per_class = 1;
    m.cluster_spread = 0.25; // linearly separable with margin
    m.train_per_class = 60;
    m.test_per_class = 60;
    m.seed = 1;
    auto [train, test] = gen_mixture(m);

    PretrainConfig cfg;
    cfg.sgd.total_epochs = 50;
    cfg.sgd.decay_start_epoch = 40;
    cfg.sgd.decay_every = 5;
    cfg.batch_size = 16;
    cfg.seed = 2;
    PretrainResult r = pretrain_teacher(init_network(teacher_spec(m), 4), train, test, cfg);
    CHECK(r.test_accuracy >= 0.99);
}

TEST_CASE("pretraining for zero epochs is an exact no-op on the parameters") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 7);
    NetworkState reference = init_network(teacher_spec(tiny_task()), 7);
    PretrainConfig cfg;
    cfg.sgd.total_epochs = 0;
    PretrainResult r = pretrain_teacher(std::move(teacher), train, test, cfg);
    CHECK(params_identical(r.state, reference));
}

TEST_CASE("pretraining with a frozen backbone leaves it untouched") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 7);
    const std::vector<double> backbone_before = teacher.backbone[0].weight.values();
    PretrainConfig cfg;
    cfg.sgd.total_epochs = 4;
    cfg.freeze_backbone = true;
    PretrainResult r = pretrain_teacher(std::move(teacher), train, test, cfg);
    CHECK(r.state.backbone[0].weight.values() == backbone_before);
    // the embed projection receives no task-loss gradient either
    NetworkState reference = init_network(teacher_spec(tiny_task()), 7);
    CHECK(r.state.embed.weight.values() == reference.embed.weight.values());
}

TEST_CASE("simultaneous training is deterministic and keeps the backbone frozen") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 11);
    NetworkState student = init_network(student_spec(tiny_task()), 12);
    const std::vector<double> backbone_before = teacher.backbone[1].weight.values();
    const std::vector<double> head_before = teacher.head.weight.values();

    TrainConfig cfg = quick_train(Strategy::simultaneous);
    DistillResult r1 = train_simultaneous(teacher, student, train, test, cfg);
    DistillResult r2 = train_simultaneous(teacher, student, train, test, cfg);

    CHECK(metrics_identical(r1.metrics, r2.metrics));
    CHECK(params_identical(r1.student, r2.student));
    CHECK(r1.metrics.size() == 6);

    // backbone constant, head trained
    CHECK(r1.teacher.backbone[1].weight.values() == backbone_before);
    CHECK(r1.teacher.head.weight.values() != head_before);
    // the teacher embed projection gets explicit zero gradients only
    CHECK(r1.teacher.embed.weight.values() == teacher.embed.weight.values());

    CHECK_THROWS_AS(train_simultaneous(teacher, student, train, test,
                                       quick_train(Strategy::sequential)),
                    ValueError);
}

TEST_CASE("sequential training leaves the whole teacher bit-identical") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 21);
    NetworkState student = init_network(student_spec(tiny_task()), 22);

    TrainConfig cfg = quick_train(Strategy::sequential);
    DistillResult r = train_sequential(teacher, student, train, test, cfg);
    CHECK(params_identical(r.teacher, teacher));
    CHECK_FALSE(params_identical(r.student, student));
}

TEST_CASE("zero distillation weights reproduce the cross-entropy baseline") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 31);
    NetworkState student = init_network(student_spec(tiny_task()), 32);

    // run A: weights derived from lambda_ega = 0
    TrainConfig a = quick_train(Strategy::sequential);
    a.lambda_ega = 0.0;
    // run B: explicit zero overrides (the ablation baseline)
    TrainConfig b = quick_train(Strategy::sequential);
    b.node_weight = 0.0;
    b.edge_weight = 0.0;

    DistillResult ra = train_sequential(teacher, student, train, test, a);
    DistillResult rb = train_sequential(teacher, student, train, test, b);
    CHECK(params_identical(ra.student, rb.student));
    CHECK(metrics_identical(ra.metrics, rb.metrics));
    // the objective reduces to the task loss exactly
    for (const auto& em : ra.metrics) CHECK(em.train_loss == em.l_ce);
}

TEST_CASE("loss accounting reconstructs the reported train loss") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 41);
    NetworkState student = init_network(student_spec(tiny_task()), 42);

    TrainConfig cfg = quick_train(Strategy::simultaneous, 5);
    cfg.enable_kd = true;
    DistillResult r = train_simultaneous(teacher, student, train, test, cfg);
    const double w_node = cfg.effective_node_weight();
    const double w_edge = cfg.effective_edge_weight();
    for (const auto& em : r.metrics) {
        REQUIRE(em.l_kd.has_value());
        const double recon =
            em.l_ce + w_node * em.l_node + w_edge * em.l_edge + cfg.kd_weight * *em.l_kd;
        CHECK(std::fabs(em.train_loss - recon) <= 1e-9);
        CHECK(em.lr == lr_at_epoch(cfg.sgd, em.epoch));
    }

    // default-weight identity: w_node*l_node + w_edge*l_edge equals
    // lambda_ega * (l_node + lambda * l_edge)
    for (const auto& em : r.metrics) {
        const double combined = cfg.lambda_ega * (em.l_node + cfg.lambda * em.l_edge);
        CHECK(std::fabs((w_node * em.l_node + w_edge * em.l_edge) - combined) <= 1e-12);
    }
}

TEST_CASE("evaluate computes argmax accuracy with low-index tie breaking") {
    auto [train, test] = gen_mixture(tiny_task());

    // constant-class predictor: zero weights, bias favoring class 1
    NetworkState net = init_network(student_spec(tiny_task()), 3);
    for (auto& p : all_params(net))
        for (auto& v : p.mutable_values()) v = 0.0;
    net.head.bias.mutable_values()[1] = 5.0;
    double frac_class1 = 0;
    for (int l : test.labels) frac_class1 += (l == 1);
    frac_class1 /= static_cast<double>(test.size());
    CHECK(evaluate(net, test) == Catch::Approx(frac_class1).margin(1e-12));

    // all-zero logits tie on every class: ties break to class 0
    net.head.bias.mutable_values()[1] = 0.0;
    double frac_class0 = 0;
    for (int l : test.labels) frac_class0 += (l == 0);
    frac_class0 /= static_cast<double>(test.size());
    CHECK(evaluate(net, test) == Catch::Approx(frac_class0).margin(1e-12));

    Dataset empty;
    CHECK_THROWS_AS(evaluate(net, empty), ValueError);

    // a random-init net on balanced 4-class data lands near chance; high
    // spread keeps per-sample predictions independent so the binomial bound
    // around 0.25 applies
    MixtureSpec m4 = tiny_task();
    m4.num_classes = 4;
    m4.test_per_class = 100;
    m4.cluster_spread = 5.0;
    auto [tr4, te4] = gen_mixture(m4);
    NetworkSpec s4 = student_spec(m4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const double acc = evaluate(init_network(s4, seed), te4);
        CHECK(acc >= 0.10);
        CHECK(acc <= 0.45);
    }
}

TEST_CASE("perfect memorization evaluates to one") {
    // features one-hot encode the label; an identity head reads it off
    Dataset ds;
    ds.num_features = 3;
    ds.num_classes = 3;
    ds.features = {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0};
    ds.labels = {0, 1, 2, 0};
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.hidden_dims = {};
    spec.num_classes = 3;
    spec.embed_dim = 3;
    NetworkState net = init_network(spec, 0);
    for (auto& p : all_params(net))
        for (auto& v : p.mutable_values()) v = 0.0;
    for (std::size_t i = 0; i < 3; ++i) net.head.weight.mutable_values()[i * 3 + i] = 1.0;
    CHECK(evaluate(net, ds) == 1.0);
}

TEST_CASE("kd metrics are recorded only when enabled") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 51);
    NetworkState student = init_network(student_spec(tiny_task()), 52);

    TrainConfig off = quick_train(Strategy::sequential, 2);
    DistillResult r_off = train_sequential(teacher, student, train, test, off);
    for (const auto& em : r_off.metrics) CHECK_FALSE(em.l_kd.has_value());

    TrainConfig on = quick_train(Strategy::sequential, 2);
    on.enable_kd = true;
    DistillResult r_on = train_sequential(teacher, student, train, test, on);
    for (const auto& em : r_on.metrics) {
        REQUIRE(em.l_kd.has_value());
        CHECK(*em.l_kd >= 0.0);
    }
}

TEST_CASE("augmented training stays deterministic and differs from clean runs") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 71);
    NetworkState student = init_network(student_spec(tiny_task()), 72);

    TrainConfig clean = quick_train(Strategy::sequential, 3);
    TrainConfig noisy = quick_train(Strategy::sequential, 3);
    noisy.augment_noise = 0.3;

    DistillResult r_clean = train_sequential(teacher, student, train, test, clean);
    DistillResult r_noisy1 = train_sequential(teacher, student, train, test, noisy);
    DistillResult r_noisy2 = train_sequential(teacher, student, train, test, noisy);
    CHECK(metrics_identical(r_noisy1.metrics, r_noisy2.metrics));
    CHECK_FALSE(metrics_identical(r_clean.metrics, r_noisy1.metrics));
}

TEST_CASE("eval_every carries the last measured accuracy forward") {
    auto [train, test] = gen_mixture(tiny_task());
    NetworkState teacher = init_network(teacher_spec(tiny_task()), 61);
    NetworkState student = init_network(student_spec(tiny_task()), 62);
    TrainConfig cfg = quick_train(Strategy::sequential, 5);
    cfg.eval_every = 2;
    DistillResult r = train_sequential(teacher, student, train, test, cfg);
    REQUIRE(r.metrics.size() == 5);
    CHECK(r.metrics[1].test_accuracy == r.metrics[0].test_accuracy);
    CHECK(r.metrics[3].test_accuracy == r.metrics[2].test_accuracy);
    for (const auto& em : r.metrics) {
        CHECK(em.test_accuracy >= 0.0);
        CHECK(em.test_accuracy <= 1.0);
    }
}
