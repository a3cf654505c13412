#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "ega/graph_align.hpp"
#include "ega/network.hpp"
#include "ega/optim.hpp"
#include "ega/random.hpp"

using namespace ega;

namespace {

NetworkSpec small_spec() {
    NetworkSpec spec;
    spec.input_dim = 5;
    spec.hidden_dims = {7, 6};
    spec.num_classes = 3;
    spec.embed_dim = 4;
    spec.role = Role::teacher;
    return spec;
}

bool states_identical(const NetworkState& a, const NetworkState& b) {
    const auto pa = all_params(a), pb = all_params(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].values() != pb[i].values()) return false;
    return true;
}

// Hand-rolled affine/ReLU chain on plain doubles.
std::vector<double> forward_oracle(const NetworkState& net, const std::vector<double>& batch,
                                   std::size_t b, bool logits) {
    std::vector<double> x = batch;
    std::size_t width = net.spec.input_dim;
    for (const auto& layer : net.backbone) {
        const std::size_t out_w = layer.bias.numel();
        std::vector<double> y(b * out_w, 0.0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t o = 0; o < out_w; ++o) {
                double acc = layer.bias.at(o);
                for (std::size_t k = 0; k < width; ++k)
                    acc += x[i * width + k] * layer.weight(k, o);
                y[i * out_w + o] = acc > 0 ? acc : 0;
            }
        x = std::move(y);
        width = out_w;
    }
    if (!logits) return x;
    const std::size_t c = net.spec.num_classes;
    std::vector<double> y(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t o = 0; o < c; ++o) {
            double acc = net.head.bias.at(o);
            for (std::size_t k = 0; k < width; ++k) acc += x[i * width + k] * net.head.weight(k, o);
            y[i * c + o] = acc;
        }
    return y;
}

} // namespace

TEST_CASE("init_network is deterministic and seed-sensitive") {
    const NetworkSpec spec = small_spec();
    NetworkState a = init_network(spec, 42);
    NetworkState b = init_network(spec, 42);
    CHECK(states_identical(a, b));

    // a seed sweep produces pairwise distinct parameterizations
    std::vector<NetworkState> sweep;
    for (std::uint64_t s = 0; s < 5; ++s) sweep.push_back(init_network(spec, s));
    for (std::size_t i = 0; i < sweep.size(); ++i)
        for (std::size_t j = i + 1; j < sweep.size(); ++j) {
            double max_delta = 0;
            const auto pi = all_params(sweep[i]), pj = all_params(sweep[j]);
            for (std::size_t k = 0; k < pi.size(); ++k)
                for (std::size_t e = 0; e < pi[k].numel(); ++e)
                    max_delta = std::max(max_delta,
                                         std::fabs(pi[k].values()[e] - pj[k].values()[e]));
            CHECK(max_delta > 0.0);
        }

    // biases start at zero, weights inside the fan-in bound
    NetworkState n = init_network(spec, 3);
    for (double v : n.backbone[0].bias.values()) CHECK(v == 0.0);
    const double bound = 1.0 / std::sqrt(5.0);
    for (double v : n.backbone[0].weight.values()) CHECK(std::fabs(v) <= bound);

    NetworkSpec bad = spec;
    bad.embed_dim = 2;
    CHECK_THROWS_AS(init_network(bad, 0), ValueError);
}

TEST_CASE("no hidden layers degenerates to an affine map") {
    NetworkSpec spec;
    spec.input_dim = 4;
    spec.hidden_dims = {};
    spec.num_classes = 3;
    spec.embed_dim = 5;
    NetworkState net = init_network(spec, 11);
    Rng rng(8);
    std::vector<double> bv(8);
    for (auto& v : bv) v = rng.normal();
    Tensor batch({2, 4}, bv);
    auto [features, logits] = network_forward(net, batch);
    // features pass the input through untouched
    CHECK(features.values() == batch.values());
    const auto oracle = forward_oracle(net, bv, 2, true);
    for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(logits.at(i) == Catch::Approx(oracle[i]).margin(1e-12));
}

TEST_CASE("zero parameters produce zero logits") {
    NetworkState net = init_network(small_spec(), 1);
    for (auto& p : all_params(net))
        for (auto& v : p.mutable_values()) v = 0.0;
    Tensor batch({2, 5}, {1, 2, 3, 4, 5, -1, -2, -3, -4, -5});
    Tensor logits = network_forward(net, batch).second;
    for (double v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("forward is row-wise independent") {
    NetworkState net = init_network(small_spec(), 5);
    Tensor one({1, 5}, {0.5, -1, 2, 0.25, -0.75});
    std::vector<double> four(one.values());
    Rng rng(2);
    for (int i = 0; i < 15; ++i) four.push_back(rng.normal());
    Tensor batch({4, 5}, four);

    Tensor l1 = network_forward(net, one).second;
    Tensor l4 = network_forward(net, batch).second;
    for (std::size_t j = 0; j < 3; ++j) CHECK(l4(0, j) == l1(0, j));

    // permuting rows permutes outputs identically
    std::vector<double> swapped(four);
    for (std::size_t j = 0; j < 5; ++j) std::swap(swapped[0 * 5 + j], swapped[2 * 5 + j]);
    Tensor ls = network_forward(net, Tensor({4, 5}, swapped)).second;
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(ls(2, j) == l4(0, j));
        CHECK(ls(0, j) == l4(2, j));
    }

    CHECK_THROWS_AS(network_forward(net, Tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8})), ShapeError);
}

TEST_CASE("random net matches the hand-rolled oracle") {
    NetworkState net = init_network(small_spec(), 21);
    Rng rng(13);
    std::vector<double> bv(3 * 5);
    for (auto& v : bv) v = rng.normal();
    auto [features, logits] = network_forward(net, Tensor({3, 5}, bv));
    const auto feat_oracle = forward_oracle(net, bv, 3, false);
    const auto logit_oracle = forward_oracle(net, bv, 3, true);
    for (std::size_t i = 0; i < feat_oracle.size(); ++i)
        CHECK(features.at(i) == Catch::Approx(feat_oracle[i]).margin(1e-12));
    for (std::size_t i = 0; i < logit_oracle.size(); ++i)
        CHECK(logits.at(i) == Catch::Approx(logit_oracle[i]).margin(1e-12));
}

TEST_CASE("node_embed projection") {
    // identity weights with zero bias reproduce the features
    Layer eye{Tensor::identity(4), Tensor::zeros({4})};
    Tensor features({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor x = node_embed(features, eye);
    CHECK(x.values() == features.values());

    // a shared bias shifts every row identically: row differences unchanged
    Layer biased{Tensor::identity(4), Tensor({4}, {10, -3, 0.5, 2})};
    Tensor xb = node_embed(features, biased);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(xb(0, j) - xb(1, j) == Catch::Approx(x(0, j) - x(1, j)).margin(1e-12));

    // random projection against the plain matrix product
    Rng rng(31);
    std::vector<double> wv(8 * 4), fv(3 * 8), biasv(4);
    for (auto& v : wv) v = rng.normal();
    for (auto& v : fv) v = rng.normal();
    for (auto& v : biasv) v = rng.normal();
    Layer proj{Tensor({8, 4}, wv), Tensor({4}, biasv)};
    Tensor xf = node_embed(Tensor({3, 8}, fv), proj);
    REQUIRE(xf.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = biasv[o];
            for (std::size_t k = 0; k < 8; ++k) acc += fv[i * 8 + k] * wv[k * 4 + o];
            CHECK(xf(i, o) == Catch::Approx(acc).margin(1e-12));
        }

    CHECK_THROWS_AS(node_embed(features, proj), ShapeError);
}

TEST_CASE("trainable_params honors the frozen mask") {
    NetworkState net = init_network(small_spec(), 2);
    CHECK(trainable_params(net).size() == 8); // 2 backbone layers + head + embed

    set_frozen(net, {"backbone"});
    const auto trainable = trainable_params(net);
    CHECK(trainable.size() == 4); // head + embed
    for (const auto& layer : net.backbone) {
        CHECK_FALSE(layer.weight.requires_grad());
        CHECK_FALSE(layer.bias.requires_grad());
    }
    CHECK(net.head.weight.requires_grad());

    set_frozen(net, {"backbone", "head", "embed"});
    CHECK(trainable_params(net).empty());
    CHECK_THROWS_AS(set_frozen(net, {"nonsense"}), ValueError);
}

TEST_CASE("frozen groups stay bit-identical through training steps") {
    NetworkState net = init_network(small_spec(), 9);
    set_frozen(net, {"backbone"});
    const std::vector<double> before_w = net.backbone[0].weight.values();
    const std::vector<double> before_b = net.backbone[1].weight.values();

    Rng rng(4);
    std::vector<double> bv(6 * 5);
    std::vector<Tensor> params = trainable_params(net);
    for (int step = 0; step < 5; ++step) {
        for (auto& v : bv) v = rng.normal();
        Tensor logits = network_forward(net, Tensor({6, 5}, bv)).second;
        Tensor loss = cross_entropy(logits, {0, 1, 2, 0, 1, 2});
        zero_grads(params);
        backward(loss);
        sgd_step(params, 0.05);
    }
    CHECK(net.backbone[0].weight.values() == before_w);
    CHECK(net.backbone[1].weight.values() == before_b);

    // a fully frozen network is bit-identical after a training step
    NetworkState frozen = init_network(small_spec(), 10);
    NetworkState reference = init_network(small_spec(), 10);
    set_frozen(frozen, {"backbone", "head", "embed"});
    std::vector<Tensor> none = trainable_params(frozen);
    CHECK(none.empty());
    sgd_step(none, 0.05);
    CHECK(states_identical(frozen, reference));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    NetworkState net = init_network(small_spec(), 77);
    set_frozen(net, {"backbone"});
    const auto path = std::filesystem::temp_directory_path() / "ega_ckpt_test.json";
    save_checkpoint(net, path.string());
    NetworkState loaded = load_checkpoint(path.string());
    CHECK(states_identical(net, loaded));
    CHECK(loaded.frozen == std::set<std::string>{"backbone"});
    CHECK(loaded.spec.hidden_dims == net.spec.hidden_dims);
    CHECK(loaded.spec.role == Role::teacher);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), DataError);

    // version field is mandatory
    const auto bad = std::filesystem::temp_directory_path() / "ega_ckpt_bad.json";
    { std::ofstream(bad) << "{\"format\":\"ega-checkpoint\",\"spec\":{}}"; }
    CHECK_THROWS_AS(load_checkpoint(bad.string()), DataError);
    std::filesystem::remove(bad);
}
