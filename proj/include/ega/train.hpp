#pragma once

#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ega/data.hpp"
#include "ega/graph_align.hpp"
#include "ega/network.hpp"
#include "ega/optim.hpp"

// Distillation drivers. Both strategies build, for every mini-batch, the
// teacher and student embedding graphs and train the student with
//   L_s = L_ce + w_node * L_node + w_edge * L_edge (+ kd_weight * L_kd),
// where the default weights derive from the combined objective
// L_ce + lambda_ega * (L_node + lambda * L_edge). In simultaneous mode the
// teacher's classifier head is trained alongside by its own cross-entropy
// loss and optimizer; in sequential mode the teacher is entirely frozen.

namespace ega {

enum class Strategy { simultaneous, sequential };

inline const char* to_string(Strategy s) {
    return s == Strategy::simultaneous ? "simultaneous" : "sequential";
}

struct TrainConfig {
    Strategy strategy = Strategy::simultaneous;
    double lambda = 0.3;      // edge weight inside the alignment loss
    double lambda_ega = 0.8;  // alignment weight inside the total objective
    bool enable_kd = false;
    double kd_temperature = 4.0;
    double kd_weight = 1.0;
    // Direct per-term overrides used by ablations and weight sweeps; unset
    // means derive from (lambda, lambda_ega).
    std::optional<double> node_weight;
    std::optional<double> edge_weight;
    std::size_t batch_size = 64;
    SgdConfig sgd;                      // student schedule
    double teacher_initial_lr = 0.01;   // simultaneous-mode teacher schedule
    std::uint64_t seed = 0;
    int eval_every = 1;
    double augment_noise = 0.0; // 0 disables augmentation entirely
    GraphLossNorm graph_loss_norm = GraphLossNorm::frobenius;

    double effective_node_weight() const { return node_weight.value_or(lambda_ega); }
    double effective_edge_weight() const { return edge_weight.value_or(lambda_ega * lambda); }

    SgdConfig teacher_sgd() const {
        SgdConfig t = sgd;
        t.initial_lr = teacher_initial_lr;
        return t;
    }
};

inline void validate(const TrainConfig& cfg) {
    validate(cfg.sgd);
    if (cfg.batch_size < 2) throw ValueError("train: batch_size must be >= 2");
    if (!(cfg.lambda >= 0.0) || !(cfg.lambda_ega >= 0.0))
        throw ValueError("train: loss weights must be >= 0");
    if (cfg.node_weight && !(*cfg.node_weight >= 0.0))
        throw ValueError("train: node_weight must be >= 0");
    if (cfg.edge_weight && !(*cfg.edge_weight >= 0.0))
        throw ValueError("train: edge_weight must be >= 0");
    if (!(cfg.kd_temperature > 0.0)) throw ValueError("train: kd_temperature must be > 0");
    if (!(cfg.kd_weight >= 0.0)) throw ValueError("train: kd_weight must be >= 0");
    if (cfg.eval_every < 1) throw ValueError("train: eval_every must be >= 1");
    if (!(cfg.augment_noise >= 0.0)) throw ValueError("train: augment_noise must be >= 0");
    if (!(cfg.teacher_initial_lr > 0.0)) throw ValueError("train: teacher_initial_lr must be > 0");
}

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double l_ce = 0.0;
    double l_node = 0.0;
    double l_edge = 0.0;
    std::optional<double> l_kd;
    double test_accuracy = 0.0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

/// Fraction of rows whose argmax logit equals the label; argmax ties break
/// toward the lowest class index.
inline double evaluate(const NetworkState& model, const Dataset& ds) {
    if (ds.size() == 0) throw ValueError("evaluate: empty split");
    std::size_t correct = 0;
    const std::size_t chunk = 512;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t stop = std::min(ds.size(), start + chunk);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor logits = network_forward(model, features_for(ds, idx)).second;
        const std::size_t c = logits.cols();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits(i, j) > logits(i, best)) best = j;
            if (static_cast<int>(best) == ds.labels[idx[i]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace detail {

// Seed salts for the independent random streams of one run.
inline constexpr std::uint64_t kShuffleSalt = 0x5348ULL;
inline constexpr std::uint64_t kAugmentTeacherSalt = 0x4155ULL;
inline constexpr std::uint64_t kAugmentStudentSalt = 0x4156ULL;

inline void warn_remnant_drop(std::size_t n, std::size_t batch_size) {
    if (n % batch_size == 1)
        std::cerr << "[ega] warning: dropping a singleton remnant batch each epoch (" << n
                  << " rows, batch " << batch_size << "); correlation graphs need >= 2 nodes\n";
}

struct BatchLosses {
    Tensor total;
    double ce = 0.0, node = 0.0, edge = 0.0, kd = 0.0;
};

/// Student objective on one batch. The teacher embedding batch and logits
/// enter as constant targets (detached inside the loss ops).
inline BatchLosses student_batch_loss(const NetworkState& student, const Tensor& batch,
                                      const std::vector<int>& labels, const Tensor& x_teacher,
                                      const Tensor& teacher_logits, const TrainConfig& cfg) {
    auto [features, logits] = network_forward(student, batch);
    Tensor x_student = node_embed(student, features);

    Tensor ce = cross_entropy(logits, labels);
    Tensor xt = x_teacher.detach();
    Tensor l_node = node_loss(node_matrix(xt, x_student), cfg.graph_loss_norm);
    Tensor l_edge = edge_loss(edge_matrix(xt), edge_matrix(x_student), cfg.graph_loss_norm);

    Tensor total = add(ce, add(scale_add(l_node, cfg.effective_node_weight(), 0.0),
                               scale_add(l_edge, cfg.effective_edge_weight(), 0.0)));
    BatchLosses out;
    out.ce = ce.value();
    out.node = l_node.value();
    out.edge = l_edge.value();
    if (cfg.enable_kd) {
        Tensor kd = kd_loss(logits, teacher_logits, cfg.kd_temperature);
        out.kd = kd.value();
        total = add(total, scale_add(kd, cfg.kd_weight, 0.0));
    }
    out.total = total;
    return out;
}

} // namespace detail

struct DistillResult {
    NetworkState teacher;
    NetworkState student;
    std::vector<EpochMetrics> metrics;
};

namespace detail {

/// Shared epoch loop for both strategies. `train_teacher` switches the
/// simultaneous-mode teacher head update on.
inline DistillResult run_distillation(NetworkState teacher, NetworkState student,
                                      const Dataset& train, const Dataset& test,
                                      const TrainConfig& cfg, bool train_teacher,
                                      const MetricsSink& sink) {
    validate(cfg);
    if (train.size() < 2) throw ValueError("train: need at least 2 training rows");
    warn_remnant_drop(train.size(), cfg.batch_size);

    set_frozen(student, {});
    std::vector<Tensor> student_params = trainable_params(student);
    std::vector<Tensor> teacher_params = trainable_params(teacher);
    const SgdConfig teacher_sgd = cfg.teacher_sgd();

    DistillResult result{std::move(teacher), std::move(student), {}};
    double last_accuracy = -1.0;

    for (int epoch = 0; epoch < cfg.sgd.total_epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.sgd, epoch);
        const double teacher_lr = train_teacher ? lr_at_epoch(teacher_sgd, epoch) : 0.0;
        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        if (cfg.enable_kd) em.l_kd = 0.0;

        const auto batches =
            batch_indices(train.size(), cfg.batch_size, mix_seed(cfg.seed, kShuffleSalt + static_cast<std::uint64_t>(epoch)));
        double sum_total = 0, sum_ce = 0, sum_node = 0, sum_edge = 0, sum_kd = 0;

        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& idx = batches[bi];
            Tensor base = features_for(train, idx);
            const std::vector<int> labels = labels_for(train, idx);
            // Independent teacher/student views of the same batch when
            // augmentation is enabled; otherwise the exact same tensor.
            Tensor batch_t =
                cfg.augment_noise > 0.0
                    ? augment(base, cfg.augment_noise,
                              mix_seed(cfg.seed, kAugmentTeacherSalt + static_cast<std::uint64_t>(epoch) * 131071 + bi))
                    : base;
            Tensor batch_s =
                cfg.augment_noise > 0.0
                    ? augment(base, cfg.augment_noise,
                              mix_seed(cfg.seed, kAugmentStudentSalt + static_cast<std::uint64_t>(epoch) * 131071 + bi))
                    : base;

            auto [features_t, logits_t] = network_forward(result.teacher, batch_t);
            Tensor x_teacher = node_embed(result.teacher, features_t);

            BatchLosses losses =
                student_batch_loss(result.student, batch_s, labels, x_teacher, logits_t, cfg);
            zero_grads(student_params);
            backward(losses.total);
            sgd_step(student_params, lr);

            if (train_teacher) {
                Tensor teacher_ce = cross_entropy(logits_t, labels);
                zero_grads(teacher_params);
                backward(teacher_ce);
                sgd_step(teacher_params, teacher_lr);
            }

            sum_total += losses.total.value();
            sum_ce += losses.ce;
            sum_node += losses.node;
            sum_edge += losses.edge;
            sum_kd += losses.kd;
        }

        const double nb = static_cast<double>(batches.size());
        em.train_loss = sum_total / nb;
        em.l_ce = sum_ce / nb;
        em.l_node = sum_node / nb;
        em.l_edge = sum_edge / nb;
        if (cfg.enable_kd) em.l_kd = sum_kd / nb;

        if (test.size() > 0 &&
            (epoch % cfg.eval_every == 0 || epoch == cfg.sgd.total_epochs - 1 ||
             last_accuracy < 0.0))
            last_accuracy = evaluate(result.student, test);
        em.test_accuracy = std::max(last_accuracy, 0.0);

        result.metrics.push_back(em);
        if (sink) sink(em);
    }
    return result;
}

} // namespace detail

/// Mutual-learning distillation: the teacher's new layers (head + embed) are
/// trained by the teacher's own cross-entropy with a separate optimizer, the
/// student by the full objective. The teacher backbone is frozen throughout.
/// Both input states are cloned; the callers' parameters are never touched.
inline DistillResult train_simultaneous(const NetworkState& teacher, const NetworkState& student,
                                        const Dataset& train, const Dataset& test,
                                        const TrainConfig& cfg, const MetricsSink& sink = {}) {
    if (cfg.strategy != Strategy::simultaneous)
        throw ValueError("train_simultaneous: config strategy is not 'simultaneous'");
    NetworkState t = clone(teacher);
    set_frozen(t, {"backbone"});
    return detail::run_distillation(std::move(t), clone(student), train, test, cfg,
                                    /*train_teacher=*/true, sink);
}

/// Sequential distillation: the teacher (assumed pre-trained) is entirely
/// frozen; only the student learns. Input states are cloned.
inline DistillResult train_sequential(const NetworkState& teacher, const NetworkState& student,
                                      const Dataset& train, const Dataset& test,
                                      const TrainConfig& cfg, const MetricsSink& sink = {}) {
    if (cfg.strategy != Strategy::sequential)
        throw ValueError("train_sequential: config strategy is not 'sequential'");
    NetworkState t = clone(teacher);
    set_frozen(t, {"backbone", "head", "embed"});
    return detail::run_distillation(std::move(t), clone(student), train, test, cfg,
                                    /*train_teacher=*/false, sink);
}

struct PretrainConfig {
    SgdConfig sgd;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    bool freeze_backbone = false; // true trains only the new layers
};

inline void validate(const PretrainConfig& cfg) {
    validate(cfg.sgd);
    if (cfg.batch_size < 2) throw ValueError("pretrain: batch_size must be >= 2");
}

struct PretrainResult {
    NetworkState state;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

/// Trains the teacher with the task cross-entropy. The embed projection
/// receives no gradient from the task loss and stays at its seeded
/// initialization. With total_epochs = 0 the parameters pass through
/// unchanged. The input state is cloned.
inline PretrainResult pretrain_teacher(const NetworkState& input, const Dataset& train,
                                       const Dataset& test, const PretrainConfig& cfg) {
    validate(cfg);
    if (train.size() < 2) throw ValueError("pretrain: need at least 2 training rows");
    detail::warn_remnant_drop(train.size(), cfg.batch_size);
    NetworkState teacher = clone(input);
    set_frozen(teacher, cfg.freeze_backbone ? std::set<std::string>{"backbone"}
                                            : std::set<std::string>{});
    std::vector<Tensor> params = trainable_params(teacher);
    for (int epoch = 0; epoch < cfg.sgd.total_epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.sgd, epoch);
        const auto batches = batch_indices(train.size(), cfg.batch_size,
                                           mix_seed(cfg.seed, detail::kShuffleSalt + static_cast<std::uint64_t>(epoch)));
        for (const auto& idx : batches) {
            Tensor logits = network_forward(teacher, features_for(train, idx)).second;
            Tensor ce = cross_entropy(logits, labels_for(train, idx));
            zero_grads(params);
            backward(ce);
            sgd_step(params, lr);
        }
    }
    PretrainResult result;
    result.train_accuracy = evaluate(teacher, train);
    result.test_accuracy = test.size() > 0 ? evaluate(teacher, test) : 0.0;
    result.state = std::move(teacher);
    return result;
}

} // namespace ega
