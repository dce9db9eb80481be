#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphfuse/graph.hpp"
#include "graphfuse/nn_ops.hpp"
#include "graphfuse/tensor.hpp"

namespace graphfuse {

// ---------------------------------------------------------------------------
// modality blocks
// ---------------------------------------------------------------------------

enum class ModalityKind { skeleton, imu, rgb_features };

// One modality of one recording, shape-tagged:
//   skeleton     (M, C, T, N)
//   imu          (M, C, S, T)
//   rgb_features (M, C, T, N) per node, or (T, F) per frame when rgb_flat
template <typename T>
struct ModalityBlock {
    ModalityKind kind = ModalityKind::skeleton;
    bool rgb_flat = false;
    TensorPtr<T> tensor;

    void validate() const {
        if (!tensor) throw UsageError("modality block has no tensor");
        const std::size_t want = (kind == ModalityKind::rgb_features && rgb_flat) ? 2 : 4;
        if (tensor->ndim() != want) {
            throw ShapeError("modality block expects rank " + std::to_string(want) + ", got " +
                             dims_to_string(tensor->dims));
        }
    }

    std::int64_t persons() const { return rgb_flat ? 1 : tensor->dims[0]; }
    std::int64_t channels() const { return rgb_flat ? tensor->dims[1] : tensor->dims[1]; }
    std::int64_t frames() const {
        if (rgb_flat) return tensor->dims[0];
        return kind == ModalityKind::imu ? tensor->dims[3] : tensor->dims[2];
    }
    std::int64_t sensors() const {
        if (kind != ModalityKind::imu) throw UsageError("sensors() on non-imu block");
        return tensor->dims[2];
    }
    std::int64_t nodes() const {
        if (kind == ModalityKind::imu || rgb_flat) {
            throw UsageError("nodes() on a block without a node axis");
        }
        return tensor->dims[3];
    }
};

template <typename T>
ModalityBlock<T> skeleton_block(TensorPtr<T> t) {
    ModalityBlock<T> b{ModalityKind::skeleton, false, std::move(t)};
    b.validate();
    return b;
}

template <typename T>
ModalityBlock<T> imu_block(TensorPtr<T> t) {
    ModalityBlock<T> b{ModalityKind::imu, false, std::move(t)};
    b.validate();
    return b;
}

template <typename T>
ModalityBlock<T> rgb_node_block(TensorPtr<T> t) {
    ModalityBlock<T> b{ModalityKind::rgb_features, false, std::move(t)};
    b.validate();
    return b;
}

template <typename T>
ModalityBlock<T> rgb_flat_block(TensorPtr<T> t) {
    ModalityBlock<T> b{ModalityKind::rgb_features, true, std::move(t)};
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// fusion plan
// ---------------------------------------------------------------------------

enum class ImuMode { off, channel_broadcast, spatial_nodes };
enum class RgbMode { off, channel_per_node, spatial_nodes };

inline std::string to_string(ImuMode m) {
    switch (m) {
        case ImuMode::off: return "off";
        case ImuMode::channel_broadcast: return "channel_broadcast";
        case ImuMode::spatial_nodes: return "spatial_nodes";
    }
    return "?";
}

inline std::string to_string(RgbMode m) {
    switch (m) {
        case RgbMode::off: return "off";
        case RgbMode::channel_per_node: return "channel_per_node";
        case RgbMode::spatial_nodes: return "spatial_nodes";
    }
    return "?";
}

// Declarative description of which modalities fuse, on which dimension, and
// where spatial nodes attach. Channel order is fixed: skeleton, RGB, IMU.
struct FusionPlan {
    ImuMode imu_mode = ImuMode::off;
    AttachmentSpec attachment;
    RgbMode rgb_mode = RgbMode::off;
    std::int64_t rgb_embed_dim = 0;  // C_E for the learned flat projection
    std::int64_t frame_stride = 1;

    void validate() const {
        if (frame_stride < 1) throw ConfigError("fusion plan: frame_stride must be >= 1");
        if (rgb_embed_dim < 0) throw ConfigError("fusion plan: rgb_embed_dim must be >= 0");
    }
};

inline ImuMode imu_mode_from_string(const std::string& s) {
    if (s == "off") return ImuMode::off;
    if (s == "channel_broadcast") return ImuMode::channel_broadcast;
    if (s == "spatial_nodes") return ImuMode::spatial_nodes;
    throw ConfigError("fusion plan: unknown imu_mode \"" + s + "\"");
}

inline RgbMode rgb_mode_from_string(const std::string& s) {
    if (s == "off") return RgbMode::off;
    if (s == "channel_per_node") return RgbMode::channel_per_node;
    if (s == "spatial_nodes") return RgbMode::spatial_nodes;
    throw ConfigError("fusion plan: unknown rgb_mode \"" + s + "\"");
}

inline FusionPlan fusion_plan_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("fusion plan: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "imu_mode" && key != "attachment" && key != "rgb_mode" &&
            key != "rgb_embed_dim" && key != "frame_stride") {
            throw ConfigError("fusion plan: unknown key \"" + key + "\"");
        }
    }
    FusionPlan plan;
    try {
        if (j.contains("imu_mode")) plan.imu_mode = imu_mode_from_string(j.at("imu_mode"));
        if (j.contains("rgb_mode")) plan.rgb_mode = rgb_mode_from_string(j.at("rgb_mode"));
        if (j.contains("rgb_embed_dim")) plan.rgb_embed_dim = j.at("rgb_embed_dim").get<std::int64_t>();
        if (j.contains("frame_stride")) plan.frame_stride = j.at("frame_stride").get<std::int64_t>();
        if (j.contains("attachment")) {
            const auto& a = j.at("attachment");
            for (const auto& [key, _] : a.items()) {
                if (key != "count" && key != "attach_to" && key != "interconnect") {
                    throw ConfigError("fusion plan attachment: unknown key \"" + key + "\"");
                }
            }
            if (a.contains("count")) plan.attachment.count = a.at("count").get<std::int64_t>();
            if (a.contains("attach_to")) {
                plan.attachment.attach_to = a.at("attach_to").get<std::vector<std::int64_t>>();
            }
            if (a.contains("interconnect")) {
                plan.attachment.interconnect = a.at("interconnect").get<bool>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("fusion plan: ") + e.what());
    }
    plan.validate();
    return plan;
}

inline nlohmann::json fusion_plan_to_json(const FusionPlan& plan) {
    nlohmann::json j;
    j["imu_mode"] = to_string(plan.imu_mode);
    j["rgb_mode"] = to_string(plan.rgb_mode);
    j["rgb_embed_dim"] = plan.rgb_embed_dim;
    j["frame_stride"] = plan.frame_stride;
    j["attachment"] = {{"count", plan.attachment.count},
                       {"attach_to", plan.attachment.attach_to},
                       {"interconnect", plan.attachment.interconnect}};
    return j;
}

// A fused, graph-structured training sample.
template <typename T>
struct FusedSample {
    TensorPtr<T> tensor;  // (M, C, T, N_total)
    SkeletonGraph graph;
    std::int64_t label = -1;
};

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

// Linear interpolation along `axis` at uniformly spaced sample points
// (endpoints preserved). t_dst == t_src returns the values unchanged.
template <typename T>
TensorPtr<T> resample_time(const TensorPtr<T>& x, std::size_t axis, std::int64_t t_dst) {
    if (axis >= x->ndim()) throw UsageError("resample_time: axis out of range");
    const std::int64_t t_src = x->dims[axis];
    if (t_src < 1) throw DataError("resample_time: empty sequence");
    if (t_dst < 1) throw UsageError("resample_time: target length must be >= 1");

    std::int64_t outer, len, inner;
    detail::axis_split(x->dims, axis, outer, len, inner);
    Dims out_dims = x->dims;
    out_dims[axis] = t_dst;

    // per destination index: source pair and weight
    std::vector<std::int64_t> lo(t_dst), hi(t_dst);
    std::vector<T> w(t_dst);
    for (std::int64_t i = 0; i < t_dst; ++i) {
        double pos = 0.0;
        if (t_dst > 1 && t_src > 1) {
            pos = static_cast<double>(i) * static_cast<double>(t_src - 1) /
                  static_cast<double>(t_dst - 1);
        }
        const auto base = static_cast<std::int64_t>(pos);
        lo[i] = std::min(base, t_src - 1);
        hi[i] = std::min(lo[i] + 1, t_src - 1);
        w[i] = static_cast<T>(pos - static_cast<double>(lo[i]));
    }

    std::vector<T> v(static_cast<std::size_t>(outer * t_dst * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < t_dst; ++i) {
            const T* a = x->data.data() + (o * len + lo[i]) * inner;
            const T* b = x->data.data() + (o * len + hi[i]) * inner;
            T* dst = v.data() + (o * t_dst + i) * inner;
            const T wi = w[i];
            for (std::int64_t k = 0; k < inner; ++k) dst[k] = a[k] + (b[k] - a[k]) * wi;
        }
    }
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {x},
        [x, lo, hi, w, outer, len, inner, t_dst](Tensor<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i = 0; i < t_dst; ++i) {
                    const T* g = self.grad.data() + (o * t_dst + i) * inner;
                    T* ga = x->grad.data() + (o * len + lo[i]) * inner;
                    T* gb = x->grad.data() + (o * len + hi[i]) * inner;
                    const T wi = w[i];
                    for (std::int64_t k = 0; k < inner; ++k) {
                        ga[k] += g[k] * (T(1) - wi);
                        gb[k] += g[k] * wi;
                    }
                }
            }
        });
}

// Keeps time indices 0, k, 2k, ... along `axis`.
template <typename T>
TensorPtr<T> subsample_frames(const TensorPtr<T>& x, std::size_t axis, std::int64_t stride) {
    if (axis >= x->ndim()) throw UsageError("subsample_frames: axis out of range");
    if (stride < 1) throw UsageError("subsample_frames: stride must be >= 1");
    if (stride == 1) {
        return detail::make_result<T>(
            x->dims, std::vector<T>(x->data), {x}, [x](Tensor<T>& self) {
                if (!x->requires_grad) return;
                x->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
            });
    }
    std::int64_t outer, len, inner;
    detail::axis_split(x->dims, axis, outer, len, inner);
    const std::int64_t kept = len == 0 ? 0 : (len - 1) / stride + 1;
    Dims out_dims = x->dims;
    out_dims[axis] = kept;
    std::vector<T> v(static_cast<std::size_t>(outer * kept * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < kept; ++i) {
            const T* src = x->data.data() + (o * len + i * stride) * inner;
            std::copy(src, src + inner, v.data() + (o * kept + i) * inner);
        }
    }
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {x},
        [x, outer, len, inner, kept, stride](Tensor<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i = 0; i < kept; ++i) {
                    const T* g = self.grad.data() + (o * kept + i) * inner;
                    T* dst = x->grad.data() + (o * len + i * stride) * inner;
                    for (std::int64_t k = 0; k < inner; ++k) dst[k] += g[k];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// IMU restructuring
// ---------------------------------------------------------------------------

// Sensors become graph nodes: (M, C, S, T) -> (M, C, T, S).
template <typename T>
TensorPtr<T> imu_to_nodes(const ModalityBlock<T>& imu) {
    if (imu.kind != ModalityKind::imu) throw UsageError("imu_to_nodes: block is not IMU");
    imu.validate();
    return permute(imu.tensor, {0, 1, 3, 2});
}

// Sensor-major channel flattening broadcast to every node:
// (M, C, S, T) -> (M, S*C, T, N), channel s*C + c carries sensor s, axis c.
template <typename T>
TensorPtr<T> imu_broadcast_channels(const ModalityBlock<T>& imu, std::int64_t n_nodes) {
    if (imu.kind != ModalityKind::imu) throw UsageError("imu_broadcast_channels: block is not IMU");
    imu.validate();
    if (n_nodes <= 0) throw UsageError("imu_broadcast_channels: node count must be positive");
    const std::int64_t M = imu.persons(), C = imu.channels(), S = imu.sensors(), T_len = imu.frames();
    auto sensor_major = permute(imu.tensor, {0, 2, 1, 3});           // (M,S,C,T)
    auto flat = reshape(sensor_major, {M, S * C, T_len, 1});         // (M,S*C,T,1)
    return broadcast_repeat(flat, 3, n_nodes);
}

// ---------------------------------------------------------------------------
// fusion ops
// ---------------------------------------------------------------------------

// Channel-dimension fusion: concatenation along the channel axis in the
// given order (skeleton first by convention).
template <typename T>
TensorPtr<T> fuse_channel(const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw UsageError("fuse_channel: no inputs");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i]->ndim() != 4) {
            throw ShapeError("fuse_channel: part " + std::to_string(i) + " is not rank 4: " +
                             dims_to_string(parts[i]->dims));
        }
        for (std::size_t ax : {std::size_t(0), std::size_t(2), std::size_t(3)}) {
            if (parts[i]->dims[ax] != parts[0]->dims[ax]) {
                throw ShapeError("fuse_channel: part " + std::to_string(i) + " has shape " +
                                 dims_to_string(parts[i]->dims) + ", expected M/T/N of " +
                                 dims_to_string(parts[0]->dims));
            }
        }
    }
    if (parts.size() == 1) return parts[0];
    return concat(parts, 1);
}

// Spatial-dimension fusion: appended nodes must carry the same channel
// count; the graph gains spec.count nodes and the adjacency has to be
// rebuilt by the caller.
template <typename T>
FusedSample<T> fuse_spatial(const TensorPtr<T>& skel, const TensorPtr<T>& extra,
                            const SkeletonGraph& g, const AttachmentSpec& spec,
                            Warnings* warnings = nullptr) {
    if (skel->ndim() != 4 || extra->ndim() != 4) {
        throw ShapeError("fuse_spatial: expects rank-4 inputs, got " + dims_to_string(skel->dims) +
                         " and " + dims_to_string(extra->dims));
    }
    if (skel->dims[1] != extra->dims[1]) {
        throw ShapeError("fuse_spatial: channel mismatch " + dims_to_string(skel->dims) + " vs " +
                         dims_to_string(extra->dims) +
                         "; unequal channel counts fuse via the combined mode's zero-fill");
    }
    if (skel->dims[0] != extra->dims[0] || skel->dims[2] != extra->dims[2]) {
        throw ShapeError("fuse_spatial: M/T mismatch " + dims_to_string(skel->dims) + " vs " +
                         dims_to_string(extra->dims));
    }
    if (spec.count != extra->dims[3]) {
        throw ConfigError("fuse_spatial: attachment count " + std::to_string(spec.count) +
                          " != appended node count " + std::to_string(extra->dims[3]));
    }
    if (skel->dims[3] != g.num_nodes) {
        throw ShapeError("fuse_spatial: skeleton tensor has " + std::to_string(skel->dims[3]) +
                         " nodes, graph has " + std::to_string(g.num_nodes));
    }
    FusedSample<T> out;
    out.graph = append_nodes(g, spec, warnings);
    out.tensor = spec.count == 0 ? skel : concat<T>({skel, extra}, 3);
    return out;
}

// Learned per-frame projection of flat RGB features (T, F) onto the per-node
// layout (M, C_E, T, N). Weights live in the model's parameter set and are
// trained with it.
template <typename T>
struct RgbProjection {
    std::int64_t in_features = 0;
    std::int64_t persons = 1;
    std::int64_t embed_dim = 0;
    std::int64_t nodes = 0;
    TensorPtr<T> weight;  // (F, M*C_E*N)
    TensorPtr<T> bias;    // (M*C_E*N)

    static RgbProjection<T> init(std::int64_t in_features, std::int64_t persons,
                                 std::int64_t embed_dim, std::int64_t nodes, Rng& rng) {
        if (in_features <= 0 || persons <= 0 || embed_dim <= 0 || nodes <= 0) {
            throw ConfigError("rgb projection: all dims must be positive");
        }
        RgbProjection<T> p;
        p.in_features = in_features;
        p.persons = persons;
        p.embed_dim = embed_dim;
        p.nodes = nodes;
        const std::int64_t out = persons * embed_dim * nodes;
        p.weight = Tensor<T>::zeros({in_features, out}, true);
        p.bias = Tensor<T>::zeros({out}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
        fill_uniform(*p.weight, rng, -bound, bound);
        fill_uniform(*p.bias, rng, -bound, bound);
        return p;
    }

    std::int64_t parameter_count() const {
        return in_features * persons * embed_dim * nodes + persons * embed_dim * nodes;
    }

    TensorPtr<T> forward(const TensorPtr<T>& flat) const {
        if (flat->ndim() != 2 || flat->dims[1] != in_features) {
            throw ShapeError("rgb projection: input " + dims_to_string(flat->dims) +
                             " does not match stored in_features " + std::to_string(in_features));
        }
        const std::int64_t t_len = flat->dims[0];
        auto rows = add_bias(matmul(flat, weight), bias);            // (T, M*C_E*N)
        auto shaped = reshape(rows, {t_len, persons, embed_dim, nodes});
        return permute(shaped, {1, 2, 0, 3});                        // (M, C_E, T, N)
    }
};

// p x p patches cropped around projected joint pixel positions, clamped at
// image borders by edge replication. Joints with non-finite coordinates
// produce a zero patch and set their flag.
template <typename T>
struct JointPatches {
    TensorPtr<T> patches;  // (N, C, p, p)
    std::vector<std::uint8_t> invalid;
};

template <typename T>
JointPatches<T> crop_joint_patches(const TensorPtr<T>& frame,
                                   const std::vector<std::pair<double, double>>& joints,
                                   std::int64_t p) {
    if (frame->ndim() != 3) {
        throw ShapeError("crop_joint_patches: frame must be (C,H,W), got " +
                         dims_to_string(frame->dims));
    }
    if (p < 1 || p % 2 == 0) throw UsageError("crop_joint_patches: patch size must be odd and >= 1");
    const std::int64_t C = frame->dims[0], H = frame->dims[1], W = frame->dims[2];
    const std::int64_t n = static_cast<std::int64_t>(joints.size());
    const std::int64_t half = p / 2;

    JointPatches<T> out;
    out.invalid.assign(n, 0);
    std::vector<T> v(static_cast<std::size_t>(n * C * p * p), T(0));
    for (std::int64_t j = 0; j < n; ++j) {
        const auto [jx, jy] = joints[j];
        if (!std::isfinite(jx) || !std::isfinite(jy)) {
            out.invalid[j] = 1;
            continue;
        }
        const std::int64_t cx = std::llround(jx);
        const std::int64_t cy = std::llround(jy);
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t r = 0; r < p; ++r) {
                const std::int64_t iy = std::clamp<std::int64_t>(cy - half + r, 0, H - 1);
                for (std::int64_t q = 0; q < p; ++q) {
                    const std::int64_t ix = std::clamp<std::int64_t>(cx - half + q, 0, W - 1);
                    v[((j * C + c) * p + r) * p + q] = frame->data[(c * H + iy) * W + ix];
                }
            }
        }
    }
    out.patches = Tensor<T>::create({n, C, p, p}, std::move(v));
    return out;
}

// ---------------------------------------------------------------------------
// combined fusion
// ---------------------------------------------------------------------------

// Closed-form output geometry of a plan.
struct FusionInputShapes {
    std::int64_t skeleton_channels = 0;
    std::int64_t skeleton_nodes = 0;
    std::int64_t imu_sensors = 0;
    std::int64_t imu_channels = 0;
    std::int64_t rgb_channels = 0;  // per-node C (or rgb_embed_dim for flat inputs)
    std::int64_t rgb_nodes = 0;     // node count when rgb_mode == spatial_nodes
};

struct FusionOutputSpec {
    std::int64_t channels = 0;
    std::int64_t nodes = 0;
    SkeletonGraph graph;
};

inline FusionOutputSpec predict_fusion_output(const FusionPlan& plan, const SkeletonGraph& base,
                                              const FusionInputShapes& in,
                                              Warnings* warnings = nullptr) {
    plan.validate();
    const std::int64_t ch_rgb = plan.rgb_mode == RgbMode::channel_per_node ? in.rgb_channels : 0;
    const std::int64_t ch_imu =
        plan.imu_mode == ImuMode::channel_broadcast ? in.imu_sensors * in.imu_channels : 0;
    const std::int64_t n_rgb = plan.rgb_mode == RgbMode::spatial_nodes ? in.rgb_nodes : 0;
    const std::int64_t n_imu = plan.imu_mode == ImuMode::spatial_nodes ? in.imu_sensors : 0;

    FusionOutputSpec out;
    out.channels = in.skeleton_channels + ch_rgb + ch_imu;
    out.nodes = in.skeleton_nodes + n_rgb + n_imu;
    if (n_rgb + n_imu > 0) {
        if (plan.attachment.count != n_rgb + n_imu) {
            throw ConfigError("fusion plan: attachment count " +
                              std::to_string(plan.attachment.count) + " != appended nodes " +
                              std::to_string(n_rgb + n_imu));
        }
        out.graph = append_nodes(base, plan.attachment, warnings);
    } else {
        out.graph = base;
    }
    return out;
}

// Fuses one sample's modality blocks per the plan. All blocks must already
// be aligned to a common T. Appended nodes carry their own values in the
// skeleton channel range and zeros elsewhere (the combined mode's
// zero-fill). `proj` is required for flat RGB features.
template <typename T>
FusedSample<T> fuse_combined(const ModalityBlock<T>& skel, const ModalityBlock<T>* rgb,
                             const ModalityBlock<T>* imu, const FusionPlan& plan,
                             const SkeletonGraph& base_graph,
                             const RgbProjection<T>* proj = nullptr,
                             Warnings* warnings = nullptr) {
    plan.validate();
    if (skel.kind != ModalityKind::skeleton) throw UsageError("fuse_combined: first block must be skeleton");
    skel.validate();
    const std::int64_t M = skel.persons(), C_SK = skel.channels(), T_len = skel.frames(),
                       N_SK = skel.nodes();
    if (N_SK != base_graph.num_nodes) {
        throw ShapeError("fuse_combined: skeleton has " + std::to_string(N_SK) +
                         " nodes, graph has " + std::to_string(base_graph.num_nodes));
    }

    // skeleton-node channel segments, order: skeleton, RGB, IMU
    std::vector<TensorPtr<T>> skel_channel_parts{skel.tensor};
    TensorPtr<T> rgb_nodes_tensor;  // (M, C_SK, T, N_E) when rgb spatial
    TensorPtr<T> imu_nodes_tensor;  // (M, C_SK, T, S) when imu spatial
    std::int64_t ch_rgb = 0, ch_imu = 0, n_rgb = 0, n_imu = 0;

    if (plan.rgb_mode != RgbMode::off) {
        if (!rgb) throw ConfigError("fusion plan enables RGB but no RGB block was provided");
        if (rgb->kind != ModalityKind::rgb_features) throw UsageError("fuse_combined: rgb block kind mismatch");
        rgb->validate();
        if (rgb->frames() != T_len) {
            throw ConfigError("fuse_combined: RGB frames " + std::to_string(rgb->frames()) +
                              " not aligned to skeleton frames " + std::to_string(T_len));
        }
        TensorPtr<T> per_node;
        if (rgb->rgb_flat) {
            if (plan.rgb_mode != RgbMode::channel_per_node) {
                throw ConfigError("flat per-frame RGB features require rgb_mode=channel_per_node");
            }
            if (!proj) throw ConfigError("flat RGB features need the learned projection");
            if (proj->persons != M || proj->nodes != N_SK ||
                proj->embed_dim != plan.rgb_embed_dim) {
                throw ConfigError("rgb projection target does not match plan/skeleton geometry");
            }
            per_node = proj->forward(rgb->tensor);
        } else {
            if (rgb->persons() != M) {
                throw ShapeError("fuse_combined: RGB persons " + std::to_string(rgb->persons()) +
                                 " != skeleton persons " + std::to_string(M));
            }
            per_node = rgb->tensor;
        }
        if (plan.rgb_mode == RgbMode::channel_per_node) {
            if (per_node->dims[3] != N_SK) {
                throw ShapeError("fuse_combined: per-node RGB nodes " +
                                 std::to_string(per_node->dims[3]) + " != skeleton nodes " +
                                 std::to_string(N_SK));
            }
            if (plan.rgb_embed_dim > 0 && per_node->dims[1] != plan.rgb_embed_dim) {
                throw ConfigError("fuse_combined: RGB channels " + std::to_string(per_node->dims[1]) +
                                  " != plan rgb_embed_dim " + std::to_string(plan.rgb_embed_dim));
            }
            ch_rgb = per_node->dims[1];
            skel_channel_parts.push_back(per_node);
        } else {  // spatial_nodes
            if (per_node->dims[1] != C_SK) {
                throw ShapeError("fuse_combined: RGB node channels " +
                                 std::to_string(per_node->dims[1]) + " != skeleton channels " +
                                 std::to_string(C_SK) +
                                 "; unequal channels fuse on the channel dimension instead");
            }
            n_rgb = per_node->dims[3];
            rgb_nodes_tensor = per_node;
        }
    }

    if (plan.imu_mode != ImuMode::off) {
        if (!imu) throw ConfigError("fusion plan enables IMU but no IMU block was provided");
        if (imu->kind != ModalityKind::imu) throw UsageError("fuse_combined: imu block kind mismatch");
        imu->validate();
        if (imu->persons() != M) {
            throw ShapeError("fuse_combined: IMU persons " + std::to_string(imu->persons()) +
                             " != skeleton persons " + std::to_string(M));
        }
        if (imu->frames() != T_len) {
            throw ConfigError("fuse_combined: IMU frames " + std::to_string(imu->frames()) +
                              " not aligned to skeleton frames " + std::to_string(T_len));
        }
        if (plan.imu_mode == ImuMode::channel_broadcast) {
            ch_imu = imu->sensors() * imu->channels();
            skel_channel_parts.push_back(imu_broadcast_channels(*imu, N_SK));
        } else {  // spatial_nodes
            if (imu->channels() != C_SK) {
                throw ShapeError("fuse_combined: IMU channels " + std::to_string(imu->channels()) +
                                 " != skeleton channels " + std::to_string(C_SK) +
                                 "; unequal channels fuse via channel broadcast instead");
            }
            n_imu = imu->sensors();
            imu_nodes_tensor = imu_to_nodes(*imu);
        }
    }

    // node group for the original skeleton nodes
    auto skel_group = fuse_channel(skel_channel_parts);  // (M, C_total, T, N_SK)
    const std::int64_t C_total = C_SK + ch_rgb + ch_imu;

    std::vector<TensorPtr<T>> node_groups{skel_group};
    if (n_rgb > 0) {
        std::vector<TensorPtr<T>> parts{rgb_nodes_tensor};
        if (ch_rgb > 0) parts.push_back(Tensor<T>::zeros({M, ch_rgb, T_len, n_rgb}));
        if (ch_imu > 0) parts.push_back(Tensor<T>::zeros({M, ch_imu, T_len, n_rgb}));
        node_groups.push_back(fuse_channel(parts));
    }
    if (n_imu > 0) {
        std::vector<TensorPtr<T>> parts{imu_nodes_tensor};
        if (ch_rgb > 0) parts.push_back(Tensor<T>::zeros({M, ch_rgb, T_len, n_imu}));
        if (ch_imu > 0) parts.push_back(Tensor<T>::zeros({M, ch_imu, T_len, n_imu}));
        node_groups.push_back(fuse_channel(parts));
    }

    FusedSample<T> out;
    if (n_rgb + n_imu > 0) {
        if (plan.attachment.count != n_rgb + n_imu) {
            throw ConfigError("fusion plan: attachment count " +
                              std::to_string(plan.attachment.count) + " != appended nodes " +
                              std::to_string(n_rgb + n_imu));
        }
        out.graph = append_nodes(base_graph, plan.attachment, warnings);
        out.tensor = concat(node_groups, 3);
    } else {
        out.graph = base_graph;
        out.tensor = skel_group;
    }
    if (out.tensor->dims != Dims{M, C_total, T_len, out.graph.num_nodes}) {
        throw ShapeError("fuse_combined: internal shape mismatch " + dims_to_string(out.tensor->dims));
    }
    return out;
}

// ---------------------------------------------------------------------------
// per-sample alignment
// ---------------------------------------------------------------------------

template <typename T>
struct SampleBlocks {
    ModalityBlock<T> skeleton;
    std::optional<ModalityBlock<T>> imu;
    std::optional<ModalityBlock<T>> rgb;
    std::int64_t label = -1;
    std::int64_t subject = -1;
    std::string id;
};

// Applies the plan's frame stride to skeleton and RGB, resamples IMU (and
// RGB, if needed) to the skeleton clock, then pads/crops everything to
// max_t when set. Zero padding extends the tail.
template <typename T>
void align_sample_blocks(SampleBlocks<T>& s, const FusionPlan& plan, std::int64_t max_t = 0) {
    plan.validate();
    s.skeleton.validate();
    if (plan.frame_stride > 1) {
        s.skeleton.tensor = subsample_frames(s.skeleton.tensor, 2, plan.frame_stride);
        if (s.rgb) {
            s.rgb->tensor = subsample_frames(s.rgb->tensor, s.rgb->rgb_flat ? 0 : 2,
                                             plan.frame_stride);
        }
    }
    std::int64_t t_target = s.skeleton.frames();
    if (max_t > 0 && t_target > max_t) {
        s.skeleton.tensor = slice(s.skeleton.tensor, 2, 0, max_t);
        t_target = max_t;
    }
    if (s.imu && s.imu->frames() != t_target) {
        s.imu->tensor = resample_time(s.imu->tensor, 3, t_target);
    }
    if (s.rgb && s.rgb->frames() != t_target) {
        s.rgb->tensor = resample_time(s.rgb->tensor, s.rgb->rgb_flat ? 0 : 2, t_target);
    }
    if (max_t > 0 && t_target < max_t) {
        auto pad = [&](TensorPtr<T> t, std::size_t axis) {
            Dims zdims = t->dims;
            zdims[axis] = max_t - t_target;
            return concat<T>({t, Tensor<T>::zeros(zdims)}, axis);
        };
        s.skeleton.tensor = pad(s.skeleton.tensor, 2);
        if (s.imu) s.imu->tensor = pad(s.imu->tensor, 3);
        if (s.rgb) s.rgb->tensor = pad(s.rgb->tensor, s.rgb->rgb_flat ? 0 : 2);
    }
}

template <typename T>
FusedSample<T> fuse_sample(const SampleBlocks<T>& s, const FusionPlan& plan,
                           const SkeletonGraph& base_graph, const RgbProjection<T>* proj = nullptr,
                           Warnings* warnings = nullptr) {
    auto fused = fuse_combined<T>(s.skeleton, s.rgb ? &*s.rgb : nullptr,
                                  s.imu ? &*s.imu : nullptr, plan, base_graph, proj, warnings);
    fused.label = s.label;
    return fused;
}

}  // namespace graphfuse
