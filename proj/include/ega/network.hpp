#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ega/ops.hpp"
#include "ega/random.hpp"
#include "ega/tensor.hpp"

// Teacher and student networks: plain ReLU MLPs plus the linear projection
// head that maps penultimate features into the shared embedding space where
// the correlation graphs live. Parameters are grouped as backbone (hidden
// layers), head (classifier), and embed (projection); groups listed in the
// frozen mask never receive gradient updates.

namespace ega {

enum class Role { teacher, student };

inline const char* to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    std::size_t embed_dim = 16;
    Role role = Role::student;

    std::size_t feature_dim() const {
        return hidden_dims.empty() ? input_dim : hidden_dims.back();
    }
};

inline void validate(const NetworkSpec& spec) {
    if (spec.input_dim < 1) throw ValueError("network: input_dim must be >= 1");
    if (spec.num_classes < 1) throw ValueError("network: num_classes must be >= 1");
    for (std::size_t h : spec.hidden_dims)
        if (h < 1) throw ValueError("network: hidden dims must be >= 1");
    // At embed_dim 2 any two distinct centered vectors correlate exactly +-1,
    // which makes every graph uninformative.
    if (spec.embed_dim < 3) throw ValueError("network: embed_dim must be >= 3");
}

struct Layer {
    Tensor weight; // (in x out)
    Tensor bias;   // (out)
};

struct NetworkState {
    NetworkSpec spec;
    std::vector<Layer> backbone;
    Layer head;
    Layer embed;
    std::set<std::string> frozen; // parameter groups excluded from updates
};

namespace detail {

inline Layer init_layer(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Layer{Tensor({fan_in, fan_out}, std::move(w), true),
                 Tensor::zeros({fan_out}, true)};
}

inline void for_each_group(NetworkState& s,
                           const std::function<void(const std::string&, Layer&)>& fn) {
    for (auto& layer : s.backbone) fn("backbone", layer);
    fn("head", s.head);
    fn("embed", s.embed);
}

inline void for_each_group(const NetworkState& s,
                           const std::function<void(const std::string&, const Layer&)>& fn) {
    for (const auto& layer : s.backbone) fn("backbone", layer);
    fn("head", s.head);
    fn("embed", s.embed);
}

} // namespace detail

/// Freezes exactly the named groups; all other groups become trainable.
inline void set_frozen(NetworkState& state, std::set<std::string> groups) {
    for (const auto& g : groups)
        if (g != "backbone" && g != "head" && g != "embed")
            throw ValueError("set_frozen: unknown parameter group '" + g + "'");
    state.frozen = std::move(groups);
    detail::for_each_group(state, [&](const std::string& g, Layer& layer) {
        const bool trainable = state.frozen.count(g) == 0;
        layer.weight.set_requires_grad(trainable);
        layer.bias.set_requires_grad(trainable);
    });
}

/// Weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero;
/// identical (spec, seed) pairs produce bit-identical states.
inline NetworkState init_network(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    NetworkState state;
    state.spec = spec;
    Rng rng(mix_seed(seed, 0x6567616eULL));
    std::size_t prev = spec.input_dim;
    for (std::size_t h : spec.hidden_dims) {
        state.backbone.push_back(detail::init_layer(prev, h, rng));
        prev = h;
    }
    state.head = detail::init_layer(prev, spec.num_classes, rng);
    state.embed = detail::init_layer(prev, spec.embed_dim, rng);
    set_frozen(state, {});
    return state;
}

/// Runs the backbone and classifier: returns {features, logits} where
/// features are the final hidden activations (the input batch itself when
/// there are no hidden layers).
inline std::pair<Tensor, Tensor> network_forward(const NetworkState& state, const Tensor& batch) {
    detail::require_2d("network_forward", batch);
    if (batch.cols() != state.spec.input_dim)
        throw ShapeError("network_forward: batch width " + std::to_string(batch.cols()) +
                         " != input_dim " + std::to_string(state.spec.input_dim));
    Tensor x = batch;
    for (const auto& layer : state.backbone)
        x = relu(add_row_bias(matmul(x, layer.weight), layer.bias));
    Tensor logits = add_row_bias(matmul(x, state.head.weight), state.head.bias);
    return {x, logits};
}

/// Linear projection of features into the shared embedding space
/// (graph nodes): X = features * W + b, one row per instance.
inline Tensor node_embed(const Tensor& features, const Layer& embed) {
    detail::require_2d("node_embed", features);
    if (features.cols() != embed.weight.rows())
        throw ShapeError("node_embed: feature width " + std::to_string(features.cols()) +
                         " != projection input " + std::to_string(embed.weight.rows()));
    return add_row_bias(matmul(features, embed.weight), embed.bias);
}

inline Tensor node_embed(const NetworkState& state, const Tensor& features) {
    return node_embed(features, state.embed);
}

/// Parameters of every group not in the frozen mask, in a fixed order.
inline std::vector<Tensor> trainable_params(const NetworkState& state) {
    std::vector<Tensor> out;
    detail::for_each_group(state, [&](const std::string& g, const Layer& layer) {
        if (state.frozen.count(g)) return;
        out.push_back(layer.weight);
        out.push_back(layer.bias);
    });
    return out;
}

inline std::vector<Tensor> all_params(const NetworkState& state) {
    std::vector<Tensor> out;
    detail::for_each_group(state, [&](const std::string&, const Layer& layer) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
    });
    return out;
}

/// Deep copy with fresh parameter storage. Tensors are shared handles, so a
/// plain struct copy would alias the same buffers; training drivers clone
/// their inputs to keep callers' states untouched.
inline NetworkState clone(const NetworkState& state) {
    auto copy_layer = [](const Layer& l) {
        return Layer{Tensor(l.weight.shape(), l.weight.values(), l.weight.requires_grad()),
                     Tensor(l.bias.shape(), l.bias.values(), l.bias.requires_grad())};
    };
    NetworkState out;
    out.spec = state.spec;
    for (const auto& layer : state.backbone) out.backbone.push_back(copy_layer(layer));
    out.head = copy_layer(state.head);
    out.embed = copy_layer(state.embed);
    out.frozen = state.frozen;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one JSON document with the spec, the frozen mask, and
// flat parameter arrays keyed by group name. The version field is mandatory.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
    return {{"input_dim", spec.input_dim},
            {"hidden_dims", spec.hidden_dims},
            {"num_classes", spec.num_classes},
            {"embed_dim", spec.embed_dim},
            {"role", to_string(spec.role)}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    spec.embed_dim = j.at("embed_dim").get<std::size_t>();
    const std::string role = j.at("role").get<std::string>();
    if (role != "teacher" && role != "student")
        throw DataError("checkpoint: unknown role '" + role + "'");
    spec.role = role == "teacher" ? Role::teacher : Role::student;
    return spec;
}

} // namespace detail

inline void save_checkpoint(const NetworkState& state, const std::string& path) {
    nlohmann::json params;
    std::size_t backbone_index = 0;
    detail::for_each_group(state, [&](const std::string& g, const Layer& layer) {
        std::string key = g;
        if (g == "backbone") key += "." + std::to_string(backbone_index++);
        params[key + ".weight"] = layer.weight.values();
        params[key + ".bias"] = layer.bias.values();
    });
    nlohmann::json j = {{"format", "ega-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"spec", detail::spec_to_json(state.spec)},
                        {"frozen", state.frozen},
                        {"params", std::move(params)}};
    std::ofstream out(path);
    if (!out) throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

inline NetworkState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_checkpoint: malformed JSON in '" + path + "': " + e.what());
    }
    if (!j.contains("version") || !j.at("version").is_number_integer())
        throw DataError("load_checkpoint: missing version field in '" + path + "'");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw DataError("load_checkpoint: unsupported checkpoint version in '" + path + "'");
    NetworkState state;
    state.spec = detail::spec_from_json(j.at("spec"));
    validate(state.spec);
    const auto& params = j.at("params");
    auto load_layer = [&](const std::string& key, std::size_t fan_in, std::size_t fan_out) {
        std::vector<double> w = params.at(key + ".weight").get<std::vector<double>>();
        std::vector<double> b = params.at(key + ".bias").get<std::vector<double>>();
        if (w.size() != fan_in * fan_out || b.size() != fan_out)
            throw DataError("load_checkpoint: parameter size mismatch for '" + key + "'");
        for (const auto& vec : {std::cref(w), std::cref(b)})
            for (double v : vec.get())
                if (!std::isfinite(v))
                    throw DataError("load_checkpoint: non-finite parameter in '" + key + "'");
        return Layer{Tensor({fan_in, fan_out}, std::move(w), true),
                     Tensor({fan_out}, std::move(b), true)};
    };
    std::size_t prev = state.spec.input_dim;
    for (std::size_t i = 0; i < state.spec.hidden_dims.size(); ++i) {
        const std::size_t h = state.spec.hidden_dims[i];
        state.backbone.push_back(load_layer("backbone." + std::to_string(i), prev, h));
        prev = h;
    }
    state.head = load_layer("head", prev, state.spec.num_classes);
    state.embed = load_layer("embed", prev, state.spec.embed_dim);
    set_frozen(state, j.at("frozen").get<std::set<std::string>>());
    return state;
}

} // namespace ega
