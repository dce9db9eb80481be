#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graphfuse/fusion.hpp"
#include "graphfuse/graph.hpp"
#include "graphfuse/gtn.hpp"
#include "graphfuse/nn_ops.hpp"
#include "graphfuse/tensor.hpp"

namespace graphfuse {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct BlockSpec {
    std::int64_t out_channels = 0;
    std::int64_t temporal_stride = 1;
};

// Single-stream adaptive graph convolutional classifier. The default block
// stack is the standard 10-block layout with temporal downsampling at
// blocks 5 and 8.
struct ModelConfig {
    std::int64_t num_nodes = 20;
    std::int64_t in_channels = 3;
    std::int64_t num_classes = 27;
    std::int64_t num_persons = 1;
    std::vector<BlockSpec> blocks = default_blocks();
    std::int64_t temporal_kernel = 9;
    std::int64_t subsets = 3;
    std::int64_t embed_factor = 4;
    bool adaptive = true;  // learned additive adjacency offsets B_k
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    static std::vector<BlockSpec> default_blocks() {
        return {{64, 1}, {64, 1}, {64, 1}, {64, 1}, {128, 2},
                {128, 1}, {128, 1}, {256, 2}, {256, 1}, {256, 1}};
    }

    std::int64_t embed_channels(std::int64_t out_channels) const {
        return std::max<std::int64_t>(1, out_channels / embed_factor);
    }

    // num_nodes / in_channels of 0 mean "derive from the fusion plan";
    // building a model requires them resolved.
    void validate() const {
        if (num_nodes < 0) throw ConfigError("model: num_nodes must be >= 0");
        if (in_channels < 0) throw ConfigError("model: in_channels must be >= 0");
        if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
        if (num_persons < 1) throw ConfigError("model: num_persons must be >= 1");
        if (blocks.empty()) throw ConfigError("model: block list must be nonempty");
        for (const auto& b : blocks) {
            if (b.out_channels < 1) throw ConfigError("model: block out_channels must be >= 1");
            if (b.temporal_stride != 1 && b.temporal_stride != 2) {
                throw ConfigError("model: temporal stride must be 1 or 2");
            }
        }
        if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
            throw ConfigError("model: temporal kernel must be odd and >= 1");
        }
        if (subsets < 1) throw ConfigError("model: subsets must be >= 1");
        if (embed_factor < 1) throw ConfigError("model: embed_factor must be >= 1");
        if (bn_eps <= 0) throw ConfigError("model: bn_eps must be positive");
    }
};

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        static const char* known[] = {"num_nodes",       "in_channels", "num_classes",
                                      "num_persons",     "blocks",      "temporal_kernel",
                                      "subsets",         "embed_factor", "adaptive",
                                      "bn_momentum",     "bn_eps"};
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("model config: unknown key \"" + key + "\"");
    }
    ModelConfig cfg;
    try {
        if (j.contains("num_nodes")) cfg.num_nodes = j.at("num_nodes").get<std::int64_t>();
        if (j.contains("in_channels")) cfg.in_channels = j.at("in_channels").get<std::int64_t>();
        if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<std::int64_t>();
        if (j.contains("num_persons")) cfg.num_persons = j.at("num_persons").get<std::int64_t>();
        if (j.contains("temporal_kernel")) cfg.temporal_kernel = j.at("temporal_kernel").get<std::int64_t>();
        if (j.contains("subsets")) cfg.subsets = j.at("subsets").get<std::int64_t>();
        if (j.contains("embed_factor")) cfg.embed_factor = j.at("embed_factor").get<std::int64_t>();
        if (j.contains("adaptive")) cfg.adaptive = j.at("adaptive").get<bool>();
        if (j.contains("bn_momentum")) cfg.bn_momentum = j.at("bn_momentum").get<double>();
        if (j.contains("bn_eps")) cfg.bn_eps = j.at("bn_eps").get<double>();
        if (j.contains("blocks")) {
            cfg.blocks.clear();
            for (const auto& b : j.at("blocks")) {
                if (!b.is_array() || b.size() != 2) {
                    throw ConfigError("model config: block must be [out_channels, stride]");
                }
                cfg.blocks.push_back({b[0].get<std::int64_t>(), b[1].get<std::int64_t>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["num_nodes"] = cfg.num_nodes;
    j["in_channels"] = cfg.in_channels;
    j["num_classes"] = cfg.num_classes;
    j["num_persons"] = cfg.num_persons;
    auto blocks = nlohmann::json::array();
    for (const auto& b : cfg.blocks) blocks.push_back({b.out_channels, b.temporal_stride});
    j["blocks"] = blocks;
    j["temporal_kernel"] = cfg.temporal_kernel;
    j["subsets"] = cfg.subsets;
    j["embed_factor"] = cfg.embed_factor;
    j["adaptive"] = cfg.adaptive;
    j["bn_momentum"] = cfg.bn_momentum;
    j["bn_eps"] = cfg.bn_eps;
    return j;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, TensorPtr<T>>>;

template <typename T>
struct Conv2dLayer {
    TensorPtr<T> weight;
    TensorPtr<T> bias;
    ConvSpec spec;

    static Conv2dLayer<T> init(std::int64_t cin, std::int64_t cout, std::int64_t kh,
                               std::int64_t kw, ConvSpec spec, Rng& rng) {
        Conv2dLayer<T> l;
        l.spec = spec;
        l.weight = Tensor<T>::zeros({cout, cin, kh, kw}, true);
        l.bias = Tensor<T>::zeros({cout}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kh * kw));
        fill_uniform(*l.weight, rng, -bound, bound);
        fill_uniform(*l.bias, rng, -bound, bound);
        return l;
    }

    TensorPtr<T> forward(const TensorPtr<T>& x) const { return conv2d(x, weight, bias, spec); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct BatchNormLayer {
    TensorPtr<T> gamma, beta;
    TensorPtr<T> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormLayer<T> init(std::int64_t features, double momentum, double eps) {
        BatchNormLayer<T> l;
        l.momentum = momentum;
        l.eps = eps;
        l.gamma = Tensor<T>::full({features}, T(1), true);
        l.beta = Tensor<T>::zeros({features}, true);
        l.running_mean = Tensor<T>::zeros({features});
        l.running_var = Tensor<T>::full({features}, T(1));
        return l;
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }

    void collect_buffers(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".running_mean", running_mean);
        out.emplace_back(prefix + ".running_var", running_var);
    }
};

// Spatial graph convolution with adaptive adjacency: for each subset k the
// aggregation matrix is fixed_k + B_k + C_k, where B_k is a learned offset
// (zero initialized) and C_k is the softmax-normalized embedded similarity
// of the current features (normalized over the source-node axis).
template <typename T>
struct GcnUnit {
    std::vector<TensorPtr<T>> fixed;     // K_s x (N,N) buffers
    std::vector<TensorPtr<T>> adaptive;  // K_s x (N,N) params when enabled
    std::vector<Conv2dLayer<T>> theta, phi, spatial_w;
    std::optional<Conv2dLayer<T>> down_conv;
    std::optional<BatchNormLayer<T>> down_bn;
    BatchNormLayer<T> bn;
    std::int64_t embed_channels = 1;
    bool adaptive_enabled = true;

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        const std::int64_t BM = x->dims[0], C = x->dims[1], Tt = x->dims[2], N = x->dims[3];
        if (N != fixed[0]->dims[0]) {
            throw ShapeError("gcn: input node count " + std::to_string(N) +
                             " does not match adjacency node count " +
                             std::to_string(fixed[0]->dims[0]));
        }
        TensorPtr<T> y;
        auto x_flat = reshape(x, {BM, C * Tt, N});
        const T scale = T(1) / static_cast<T>(embed_channels * Tt);
        for (std::size_t k = 0; k < fixed.size(); ++k) {
            auto th = theta[k].forward(x);  // (BM, Ce, T, N)
            auto ph = phi[k].forward(x);
            auto th2 = reshape(permute(th, {0, 3, 1, 2}), {BM, N, embed_channels * Tt});
            auto ph2 = reshape(ph, {BM, embed_channels * Tt, N});
            auto sim = softmax(scalar_mul(bmm(th2, ph2), scale), 1);  // (BM, N, N)
            auto base = adaptive_enabled ? add(fixed[k], adaptive[k]) : fixed[k];
            auto agg = add(broadcast_repeat(reshape(base, {1, N, N}), 0, BM), sim);
            auto z = reshape(bmm(x_flat, agg), {BM, C, Tt, N});
            auto zk = spatial_w[k].forward(z);
            y = k == 0 ? zk : add(y, zk);
        }
        y = bn.forward(y, training);
        auto res = down_conv ? down_bn->forward(down_conv->forward(x), training) : x;
        return relu(add(y, res));
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        if (adaptive_enabled) {
            for (std::size_t k = 0; k < adaptive.size(); ++k) {
                out.emplace_back(prefix + ".adaptive." + std::to_string(k), adaptive[k]);
            }
        }
        for (std::size_t k = 0; k < theta.size(); ++k) {
            theta[k].collect(out, prefix + ".theta." + std::to_string(k));
            phi[k].collect(out, prefix + ".phi." + std::to_string(k));
            spatial_w[k].collect(out, prefix + ".w." + std::to_string(k));
        }
        if (down_conv) {
            down_conv->collect(out, prefix + ".down.conv");
            down_bn->collect(out, prefix + ".down.bn");
        }
        bn.collect(out, prefix + ".bn");
    }

    void collect_buffers(NamedTensors<T>& out, const std::string& prefix) const {
        if (down_bn) down_bn->collect_buffers(out, prefix + ".down.bn");
        bn.collect_buffers(out, prefix + ".bn");
    }
};

template <typename T>
struct TcnUnit {
    Conv2dLayer<T> conv;
    BatchNormLayer<T> bn;

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        return bn.forward(conv.forward(x), training);
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        conv.collect(out, prefix + ".conv");
        bn.collect(out, prefix + ".bn");
    }

    void collect_buffers(NamedTensors<T>& out, const std::string& prefix) const {
        bn.collect_buffers(out, prefix + ".bn");
    }
};

enum class ResidualKind { none, identity, projection };

template <typename T>
struct AgcnBlock {
    GcnUnit<T> gcn;
    TcnUnit<T> tcn;
    ResidualKind residual_kind = ResidualKind::identity;
    std::optional<TcnUnit<T>> residual;

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        auto y = tcn.forward(gcn.forward(x, training), training);
        switch (residual_kind) {
            case ResidualKind::none:
                return relu(y);
            case ResidualKind::identity:
                return relu(add(y, x));
            case ResidualKind::projection:
                return relu(add(y, residual->forward(x, training)));
        }
        throw UsageError("unreachable residual kind");
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        gcn.collect(out, prefix + ".gcn");
        tcn.collect(out, prefix + ".tcn");
        if (residual) residual->collect(out, prefix + ".residual");
    }

    void collect_buffers(NamedTensors<T>& out, const std::string& prefix) const {
        gcn.collect_buffers(out, prefix + ".gcn");
        tcn.collect_buffers(out, prefix + ".tcn");
        if (residual) residual->collect_buffers(out, prefix + ".residual");
    }
};

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename T>
struct AgcnModel {
    ModelConfig cfg;
    BatchNormLayer<T> data_bn;  // M*C*N features per time step
    std::vector<AgcnBlock<T>> blocks;
    TensorPtr<T> fc_weight;  // (C_last, K)
    TensorPtr<T> fc_bias;    // (K)

    static AgcnModel<T> build(const ModelConfig& cfg, const AdjacencyStack& adj,
                              std::uint64_t seed) {
        cfg.validate();
        if (cfg.num_nodes < 1 || cfg.in_channels < 1) {
            throw ConfigError("model: num_nodes/in_channels unresolved; derive them from a "
                              "fusion plan or set them explicitly");
        }
        if (adj.n != cfg.num_nodes) {
            throw ConfigError("model: adjacency is " + std::to_string(adj.n) + " nodes, config " +
                              std::to_string(cfg.num_nodes));
        }
        if (static_cast<std::int64_t>(adj.subsets.size()) != cfg.subsets) {
            throw ConfigError("model: adjacency stack has " + std::to_string(adj.subsets.size()) +
                              " subsets, config wants " + std::to_string(cfg.subsets));
        }
        Rng rng(mix_seed(seed, 0x6d6f64656cull));
        AgcnModel<T> m;
        m.cfg = cfg;
        m.data_bn = BatchNormLayer<T>::init(cfg.num_persons * cfg.in_channels * cfg.num_nodes,
                                            cfg.bn_momentum, cfg.bn_eps);
        std::int64_t cin = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
            const auto& bs = cfg.blocks[i];
            AgcnBlock<T> block;
            // gcn unit
            GcnUnit<T>& g = block.gcn;
            g.adaptive_enabled = cfg.adaptive;
            g.embed_channels = cfg.embed_channels(bs.out_channels);
            for (std::int64_t k = 0; k < cfg.subsets; ++k) {
                g.fixed.push_back(adjacency_subset_tensor<T>(adj, k));
                if (cfg.adaptive) {
                    g.adaptive.push_back(Tensor<T>::zeros({adj.n, adj.n}, true));
                }
                g.theta.push_back(Conv2dLayer<T>::init(cin, g.embed_channels, 1, 1, {}, rng));
                g.phi.push_back(Conv2dLayer<T>::init(cin, g.embed_channels, 1, 1, {}, rng));
                g.spatial_w.push_back(Conv2dLayer<T>::init(cin, bs.out_channels, 1, 1, {}, rng));
            }
            if (cin != bs.out_channels) {
                g.down_conv = Conv2dLayer<T>::init(cin, bs.out_channels, 1, 1, {}, rng);
                g.down_bn = BatchNormLayer<T>::init(bs.out_channels, cfg.bn_momentum, cfg.bn_eps);
            }
            g.bn = BatchNormLayer<T>::init(bs.out_channels, cfg.bn_momentum, cfg.bn_eps);
            // tcn unit
            ConvSpec tspec;
            tspec.stride_h = bs.temporal_stride;
            tspec.pad_h = (cfg.temporal_kernel - 1) / 2;
            block.tcn.conv = Conv2dLayer<T>::init(bs.out_channels, bs.out_channels,
                                                  cfg.temporal_kernel, 1, tspec, rng);
            block.tcn.bn = BatchNormLayer<T>::init(bs.out_channels, cfg.bn_momentum, cfg.bn_eps);
            // residual
            if (i == 0) {
                block.residual_kind = ResidualKind::none;
            } else if (cin == bs.out_channels && bs.temporal_stride == 1) {
                block.residual_kind = ResidualKind::identity;
            } else {
                block.residual_kind = ResidualKind::projection;
                ConvSpec rspec;
                rspec.stride_h = bs.temporal_stride;
                TcnUnit<T> res;
                res.conv = Conv2dLayer<T>::init(cin, bs.out_channels, 1, 1, rspec, rng);
                res.bn = BatchNormLayer<T>::init(bs.out_channels, cfg.bn_momentum, cfg.bn_eps);
                block.residual = std::move(res);
            }
            m.blocks.push_back(std::move(block));
            cin = bs.out_channels;
        }
        m.fc_weight = Tensor<T>::zeros({cin, cfg.num_classes}, true);
        m.fc_bias = Tensor<T>::zeros({cfg.num_classes}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
        fill_uniform(*m.fc_weight, rng, -bound, bound);
        fill_uniform(*m.fc_bias, rng, -bound, bound);
        return m;
    }

    // (B, M, C, T, N) -> logits (B, K)
    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        if (x->ndim() != 5) {
            throw ShapeError("model: input must be (B,M,C,T,N), got " + dims_to_string(x->dims));
        }
        const std::int64_t B = x->dims[0], M = x->dims[1], C = x->dims[2], Tt = x->dims[3],
                           N = x->dims[4];
        if (M != cfg.num_persons || C != cfg.in_channels || N != cfg.num_nodes) {
            throw ShapeError("model: input " + dims_to_string(x->dims) + " does not match config (M=" +
                             std::to_string(cfg.num_persons) + ", C=" +
                             std::to_string(cfg.in_channels) + ", N=" +
                             std::to_string(cfg.num_nodes) + ")");
        }
        // data BN over M*C*N features per time step
        auto xt = permute(x, {0, 1, 2, 4, 3});              // (B,M,C,N,T)
        auto flat = reshape(xt, {B, M * C * N, Tt});
        auto normed = data_bn.forward(flat, training);
        auto back = permute(reshape(normed, {B, M, C, N, Tt}), {0, 1, 2, 4, 3});
        auto h = reshape(back, {B * M, C, Tt, N});
        for (const auto& block : blocks) h = block.forward(h, training);
        auto pooled = global_avg_pool(h, 2);                // (B*M, C_last)
        auto per_person = reshape(pooled, {B, M, h->dims[1]});
        auto feat = reduce_mean(per_person, {1});           // (B, C_last)
        return add_bias(matmul(feat, fc_weight), fc_bias);
    }

    NamedTensors<T> named_parameters() const {
        NamedTensors<T> out;
        data_bn.collect(out, "data_bn");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect(out, "blocks." + std::to_string(i));
        }
        out.emplace_back("fc.weight", fc_weight);
        out.emplace_back("fc.bias", fc_bias);
        return out;
    }

    NamedTensors<T> named_buffers() const {
        NamedTensors<T> out;
        data_bn.collect_buffers(out, "data_bn");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect_buffers(out, "blocks." + std::to_string(i));
        }
        return out;
    }
};

// Serializes parameters and buffers into "param/<name>" and "buffer/<name>"
// archive entries.
template <typename T, typename Module>
void write_module_tensors(Archive& archive, const Module& m) {
    for (const auto& [name, t] : m.named_parameters()) archive.put_tensor("param/" + name, *t);
    for (const auto& [name, t] : m.named_buffers()) archive.put_tensor("buffer/" + name, *t);
}

// Loads tensors back into an already-built module of identical geometry.
template <typename T, typename Module>
void read_module_tensors(const Archive& archive, Module& m) {
    auto restore = [&](const std::string& key, const TensorPtr<T>& dst) {
        auto src = archive.template get_tensor<T>(key);
        if (src->dims != dst->dims) {
            throw DataError("checkpoint: " + key + " has dims " + dims_to_string(src->dims) +
                            ", model expects " + dims_to_string(dst->dims));
        }
        dst->data = src->data;
    };
    for (const auto& [name, t] : m.named_parameters()) restore("param/" + name, t);
    for (const auto& [name, t] : m.named_buffers()) restore("buffer/" + name, t);
}

// ---------------------------------------------------------------------------
// parameter counting
// ---------------------------------------------------------------------------

struct BlockParameterBreakdown {
    std::int64_t adaptive = 0;        // B_k offsets
    std::int64_t embed = 0;           // theta/phi projections
    std::int64_t spatial = 0;         // per-subset output convs
    std::int64_t gcn_bn = 0;
    std::int64_t gcn_residual = 0;    // in-unit down projection
    std::int64_t temporal = 0;        // temporal conv + bn
    std::int64_t block_residual = 0;  // cross-block projection

    std::int64_t total() const {
        return adaptive + embed + spatial + gcn_bn + gcn_residual + temporal + block_residual;
    }
};

struct ParameterBreakdown {
    std::int64_t data_bn = 0;
    std::vector<BlockParameterBreakdown> blocks;
    std::int64_t classifier = 0;
    std::int64_t total = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["data_bn"] = data_bn;
        auto arr = nlohmann::json::array();
        for (const auto& b : blocks) {
            arr.push_back({{"adaptive", b.adaptive},
                           {"embed", b.embed},
                           {"spatial", b.spatial},
                           {"gcn_bn", b.gcn_bn},
                           {"gcn_residual", b.gcn_residual},
                           {"temporal", b.temporal},
                           {"block_residual", b.block_residual},
                           {"total", b.total()}});
        }
        j["blocks"] = arr;
        j["classifier"] = classifier;
        j["total"] = total;
        return j;
    }
};

// Closed-form trainable parameter count; the reflection walk over an
// instantiated model must agree (tested).
inline ParameterBreakdown count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.num_nodes < 1 || cfg.in_channels < 1) {
        throw ConfigError("count_parameters: num_nodes/in_channels unresolved");
    }
    ParameterBreakdown out;
    const std::int64_t n = cfg.num_nodes, ks = cfg.subsets;
    out.data_bn = 2 * cfg.num_persons * cfg.in_channels * cfg.num_nodes;
    std::int64_t cin = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& bs = cfg.blocks[i];
        const std::int64_t cout = bs.out_channels;
        const std::int64_t ce = cfg.embed_channels(cout);
        BlockParameterBreakdown b;
        if (cfg.adaptive) b.adaptive = ks * n * n;
        b.embed = 2 * ks * (cin * ce + ce);
        b.spatial = ks * (cin * cout + cout);
        b.gcn_bn = 2 * cout;
        if (cin != cout) b.gcn_residual = (cin * cout + cout) + 2 * cout;
        b.temporal = (cout * cout * cfg.temporal_kernel + cout) + 2 * cout;
        const bool needs_projection = cin != cout || bs.temporal_stride != 1;
        if (i > 0 && needs_projection) b.block_residual = (cin * cout + cout) + 2 * cout;
        out.blocks.push_back(b);
        cin = cout;
    }
    out.classifier = cin * cfg.num_classes + cfg.num_classes;
    out.total = out.data_bn + out.classifier;
    for (const auto& b : out.blocks) out.total += b.total();
    return out;
}

// ---------------------------------------------------------------------------
// fusion-aware classifier (model + optional learned RGB projection)
// ---------------------------------------------------------------------------

template <typename T>
struct FusionClassifier {
    FusionPlan plan;
    SkeletonGraph base_graph;
    FusionOutputSpec fused;  // geometry the net was built for
    AgcnModel<T> net;
    std::optional<RgbProjection<T>> rgb_proj;

    // base_cfg.num_nodes / in_channels may be 0 to derive them from the
    // plan; explicit values must match the fused geometry.
    static FusionClassifier<T> build(ModelConfig base_cfg, const FusionPlan& plan,
                                     const SkeletonGraph& base_graph,
                                     const FusionInputShapes& in, std::int64_t rgb_flat_features,
                                     std::uint64_t seed, Warnings* warnings = nullptr) {
        FusionClassifier<T> fc;
        fc.plan = plan;
        fc.base_graph = base_graph;
        fc.fused = predict_fusion_output(plan, base_graph, in, warnings);
        if (base_cfg.num_nodes == 0) {
            base_cfg.num_nodes = fc.fused.nodes;
        } else if (base_cfg.num_nodes != fc.fused.nodes) {
            throw ConfigError("model num_nodes " + std::to_string(base_cfg.num_nodes) +
                              " != fused node count " + std::to_string(fc.fused.nodes));
        }
        if (base_cfg.in_channels == 0) {
            base_cfg.in_channels = fc.fused.channels;
        } else if (base_cfg.in_channels != fc.fused.channels) {
            throw ConfigError("model in_channels " + std::to_string(base_cfg.in_channels) +
                              " != fused channel count " + std::to_string(fc.fused.channels));
        }
        auto adj = build_adjacency(fc.fused.graph);
        fc.net = AgcnModel<T>::build(base_cfg, adj, seed);
        if (plan.rgb_mode == RgbMode::channel_per_node && rgb_flat_features > 0) {
            Rng rng(mix_seed(seed, 0x7267625full));
            fc.rgb_proj = RgbProjection<T>::init(rgb_flat_features, base_cfg.num_persons,
                                                 plan.rgb_embed_dim, in.skeleton_nodes, rng);
        }
        return fc;
    }

    // Fuses and stacks a batch of aligned samples, then runs the net.
    TensorPtr<T> forward_batch(const std::vector<const SampleBlocks<T>*>& batch,
                               bool training) const {
        if (batch.empty()) throw UsageError("forward_batch: empty batch");
        std::vector<TensorPtr<T>> fused_tensors;
        fused_tensors.reserve(batch.size());
        for (const auto* s : batch) {
            auto f = fuse_sample<T>(*s, plan, base_graph, rgb_proj ? &*rgb_proj : nullptr);
            fused_tensors.push_back(f.tensor);
        }
        return net.forward(stack(fused_tensors), training);
    }

    NamedTensors<T> named_parameters() const {
        NamedTensors<T> out = net.named_parameters();
        if (rgb_proj) {
            out.emplace_back("rgb_proj.weight", rgb_proj->weight);
            out.emplace_back("rgb_proj.bias", rgb_proj->bias);
        }
        return out;
    }

    NamedTensors<T> named_buffers() const { return net.named_buffers(); }
};

}  // namespace graphfuse
