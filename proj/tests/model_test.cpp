#include <gtest/gtest.h>

#include <cmath>

#include "graphfuse/gradcheck.hpp"
#include "graphfuse/graph.hpp"
#include "graphfuse/gtn.hpp"
#include "graphfuse/model.hpp"
#include "test_util.hpp"

using namespace graphfuse;
using gftest::random_tensor;

namespace {

const char* kUtdTopology = GF_SOURCE_DIR "/configs/utd_mhad_topology.json";

ModelConfig utd_base_config() {
    ModelConfig cfg;  // defaults are the UTD-MHAD base model
    return cfg;
}

SkeletonGraph line_graph(std::int64_t n) {
    SkeletonGraph g;
    g.num_nodes = n;
    g.center = 0;
    for (std::int64_t i = 1; i < n; ++i) g.edges.emplace_back(i - 1, i);
    return g;
}

template <typename T>
void zero_biases(AgcnModel<T>& m) {
    for (auto& [name, t] : m.named_parameters()) {
        if (name.ends_with(".bias") || name.ends_with(".beta")) {
            std::fill(t->data.begin(), t->data.end(), T(0));
        }
    }
}

TensorPtr<double> fixed_readout(const TensorPtr<double>& y) {
    Rng rng(777);
    auto r = Tensor<double>::zeros(y->dims);
    fill_uniform(*r, rng, 0.2, 1.0);
    return sum_all(mul(y, r));
}

}  // namespace

TEST(CountParameters, UtdBaseConfigMatchesPublishedFigure) {
    auto breakdown = count_parameters(utd_base_config());
    EXPECT_EQ(breakdown.total, 3454099);
}

TEST(CountParameters, TwoImuNodesAddExactly2532) {
    auto cfg = utd_base_config();
    cfg.num_nodes = 22;
    auto breakdown = count_parameters(cfg);
    EXPECT_EQ(breakdown.total, 3456631);
    EXPECT_EQ(breakdown.total - count_parameters(utd_base_config()).total, 2532);
}

TEST(CountParameters, DeltaDecomposition) {
    // 3 subsets x 10 blocks x (22^2 - 20^2) from B_k, plus 2*(66-60) from
    // the data BN; nothing else depends on N
    auto base = count_parameters(utd_base_config());
    auto cfg = utd_base_config();
    cfg.num_nodes = 22;
    auto wide = count_parameters(cfg);
    std::int64_t adaptive_delta = 0;
    for (std::size_t i = 0; i < base.blocks.size(); ++i) {
        adaptive_delta += wide.blocks[i].adaptive - base.blocks[i].adaptive;
        EXPECT_EQ(wide.blocks[i].embed, base.blocks[i].embed);
        EXPECT_EQ(wide.blocks[i].spatial, base.blocks[i].spatial);
        EXPECT_EQ(wide.blocks[i].temporal, base.blocks[i].temporal);
    }
    EXPECT_EQ(adaptive_delta, 3 * 10 * (22 * 22 - 20 * 20));
    EXPECT_EQ(adaptive_delta, 2520);
    EXPECT_EQ(wide.data_bn - base.data_bn, 12);
    EXPECT_EQ(wide.classifier, base.classifier);
}

TEST(CountParameters, MatchesReflectionWalk) {
    auto g = load_topology(kUtdTopology);
    auto adj = build_adjacency(g);
    auto cfg = utd_base_config();
    auto model = AgcnModel<float>::build(cfg, adj, 1);
    std::int64_t walked = 0;
    for (const auto& [name, t] : model.named_parameters()) walked += t->numel();
    EXPECT_EQ(walked, count_parameters(cfg).total);

    // also on a non-default stack with the adaptive branch off
    ModelConfig small;
    small.num_nodes = 6;
    small.in_channels = 5;
    small.num_classes = 4;
    small.blocks = {{8, 1}, {16, 2}, {16, 1}};
    small.adaptive = false;
    auto adj2 = build_adjacency(line_graph(6));
    auto m2 = AgcnModel<float>::build(small, adj2, 2);
    std::int64_t walked2 = 0;
    for (const auto& [name, t] : m2.named_parameters()) walked2 += t->numel();
    EXPECT_EQ(walked2, count_parameters(small).total);
}

TEST(AgcnBlock, ZeroInputBiasFreeGivesZeroOutput) {
    ModelConfig cfg;
    cfg.num_nodes = 4;
    cfg.in_channels = 3;
    cfg.num_classes = 2;
    cfg.blocks = {{8, 1}};
    auto adj = build_adjacency(line_graph(4));
    auto model = AgcnModel<double>::build(cfg, adj, 3);
    zero_biases(model);
    auto x = Tensor<double>::zeros({2, 3, 8, 4});
    auto y = model.blocks[0].forward(x, false);
    ASSERT_EQ(y->dims, (Dims{2, 8, 8, 4}));
    for (auto v : y->data) EXPECT_EQ(v, 0.0);
}

TEST(AgcnBlock, SingleNodeSingleSubsetReducesToChannelConvs) {
    // N=1 with adjacency [[1]]: similarity softmax is also [[1]], so the
    // aggregation matrix is the scalar 2 and the block collapses to 1x1
    // convolutions over channels.
    ModelConfig cfg;
    cfg.num_nodes = 1;
    cfg.in_channels = 2;
    cfg.num_classes = 2;
    cfg.blocks = {{2, 1}};
    cfg.temporal_kernel = 1;
    cfg.subsets = 1;
    cfg.adaptive = false;
    cfg.bn_eps = 1e-12;
    AdjacencyStack adj;
    adj.n = 1;
    adj.subsets = {{1.0}};
    auto model = AgcnModel<double>::build(cfg, adj, 4);
    zero_biases(model);
    auto& block = model.blocks[0];

    Rng rng(5);
    auto x = random_tensor<double>({1, 2, 3, 1}, rng);
    auto y = block.forward(x, false);

    // hand computation on the 2-channel toy (the gcn unit adds its own
    // identity residual when channel counts match)
    const auto& w_spatial = block.gcn.spatial_w[0].weight->data;  // (2,2,1,1)
    const auto& w_temporal = block.tcn.conv.weight->data;         // (2,2,1,1)
    for (std::int64_t t = 0; t < 3; ++t) {
        const double x0 = x->data[0 * 3 + t], x1 = x->data[1 * 3 + t];
        const double g0 = std::max(0.0, w_spatial[0] * 2 * x0 + w_spatial[1] * 2 * x1 + x0);
        const double g1 = std::max(0.0, w_spatial[2] * 2 * x0 + w_spatial[3] * 2 * x1 + x1);
        const double t0 = std::max(0.0, w_temporal[0] * g0 + w_temporal[1] * g1);
        const double t1 = std::max(0.0, w_temporal[2] * g0 + w_temporal[3] * g1);
        EXPECT_NEAR(y->data[0 * 3 + t], t0, 1e-8);
        EXPECT_NEAR(y->data[1 * 3 + t], t1, 1e-8);
    }
}

TEST(AgcnBlock, ShapeContract) {
    auto g = load_topology(kUtdTopology);
    AttachmentSpec spec;
    spec.count = 2;
    spec.attach_to = {g.center};
    auto adj = build_adjacency(append_nodes(g, spec));
    ModelConfig cfg;
    cfg.num_nodes = 22;
    cfg.blocks = {{64, 1}};
    auto model = AgcnModel<float>::build(cfg, adj, 5);
    Rng rng(6);
    auto x = random_tensor<float>({2, 3, 16, 22}, rng);
    auto y = model.blocks[0].forward(x, true);
    EXPECT_EQ(y->dims, (Dims{2, 64, 16, 22}));
}

TEST(AgcnBlock, StridedBlockHalvesTime) {
    auto adj = build_adjacency(line_graph(5));
    ModelConfig cfg;
    cfg.num_nodes = 5;
    cfg.in_channels = 4;
    cfg.blocks = {{8, 2}};
    auto model = AgcnModel<float>::build(cfg, adj, 7);
    Rng rng(8);
    auto x = random_tensor<float>({1, 4, 16, 5}, rng);
    EXPECT_EQ(model.blocks[0].forward(x, true)->dims, (Dims{1, 8, 8, 5}));
    // ceil contract on odd lengths
    auto x2 = random_tensor<float>({1, 4, 9, 5}, rng);
    EXPECT_EQ(model.blocks[0].forward(x2, true)->dims, (Dims{1, 8, 5, 5}));
}

TEST(AgcnBlock, NodeCountMismatchNamesBoth) {
    auto adj = build_adjacency(line_graph(5));
    ModelConfig cfg;
    cfg.num_nodes = 5;
    cfg.blocks = {{8, 1}};
    auto model = AgcnModel<float>::build(cfg, adj, 9);
    auto x = Tensor<float>::zeros({1, 3, 8, 7});
    try {
        model.blocks[0].forward(x, true);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("7"), std::string::npos) << msg;
        EXPECT_NE(msg.find("5"), std::string::npos) << msg;
    }
}

TEST(ModelForward, UtdLogitsShapeAndDeterminism) {
    auto g = load_topology(kUtdTopology);
    auto adj = build_adjacency(g);
    auto model = AgcnModel<float>::build(utd_base_config(), adj, 11);
    Rng rng(12);
    auto x = random_tensor<float>({1, 1, 3, 20, 20}, rng);
    auto logits = model.forward(x, false);
    ASSERT_EQ(logits->dims, (Dims{1, 27}));
    EXPECT_TRUE(all_finite(*logits));

    // two identical samples in an eval batch produce identical logits
    auto x2 = concat<float>({x, x}, 0);
    auto logits2 = model.forward(x2, false);
    for (std::int64_t k = 0; k < 27; ++k) {
        EXPECT_EQ(logits2->data[k], logits2->data[27 + k]);
        EXPECT_NEAR(logits2->data[k], logits->data[k], 1e-5);
    }
}

TEST(ModelForward, InputDimMismatchRejected) {
    auto adj = build_adjacency(line_graph(4));
    ModelConfig cfg;
    cfg.num_nodes = 4;
    cfg.blocks = {{8, 1}};
    auto model = AgcnModel<float>::build(cfg, adj, 13);
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 1, 3, 8, 5}), true), ShapeError);
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 2, 3, 8, 4}), true), ShapeError);
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 3, 8, 4}), true), ShapeError);
}

TEST(ModelForward, NodePermutationLeavesLogitsInvariant) {
    // permuting input nodes, the adjacency, and the B_k values jointly must
    // not change logits (single precision, < 1e-5)
    Rng rng(14);
    SkeletonGraph g;
    g.num_nodes = 6;
    g.center = 2;
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {2, 5}};
    std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};

    ModelConfig cfg;
    cfg.num_nodes = 6;
    cfg.in_channels = 3;
    cfg.num_classes = 4;
    cfg.blocks = {{8, 1}, {16, 2}};
    auto model_a = AgcnModel<float>::build(cfg, build_adjacency(g), 15);
    auto model_b = AgcnModel<float>::build(cfg, build_adjacency(permute_nodes(g, perm)), 15);

    // give the adaptive offsets nonzero values and copy them permuted
    const std::int64_t n = 6;
    for (std::size_t bi = 0; bi < model_a.blocks.size(); ++bi) {
        for (std::int64_t k = 0; k < cfg.subsets; ++k) {
            auto& src = model_a.blocks[bi].gcn.adaptive[k];
            fill_uniform(*src, rng, -0.3, 0.3);
            auto& dst = model_b.blocks[bi].gcn.adaptive[k];
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    dst->data[perm[i] * n + perm[j]] = src->data[i * n + j];
        }
    }

    auto x = random_tensor<float>({2, 1, 3, 10, 6}, rng);
    auto xp = Tensor<float>::zeros({2, 1, 3, 10, 6});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t t = 0; t < 10; ++t)
                for (std::int64_t v = 0; v < 6; ++v) {
                    xp->data[((b * 3 + c) * 10 + t) * 6 + perm[v]] =
                        x->data[((b * 3 + c) * 10 + t) * 6 + v];
                }

    auto la = model_a.forward(x, false);
    auto lb = model_b.forward(xp, false);
    for (std::size_t i = 0; i < la->data.size(); ++i) {
        EXPECT_NEAR(la->data[i], lb->data[i], 1e-5);
    }
}

TEST(ModelForward, ZeroAdaptiveEqualsAdaptiveFreeBitwise) {
    // B_k starts at zero, so at step 0 the adaptive model must match the
    // model with the B_k branch removed, bitwise in double precision.
    SkeletonGraph g = line_graph(5);
    ModelConfig with_b;
    with_b.num_nodes = 5;
    with_b.in_channels = 3;
    with_b.num_classes = 3;
    with_b.blocks = {{8, 1}, {16, 2}};
    ModelConfig without_b = with_b;
    without_b.adaptive = false;

    auto adj = build_adjacency(g);
    auto model_a = AgcnModel<double>::build(with_b, adj, 21);
    auto model_b = AgcnModel<double>::build(without_b, adj, 21);

    Rng rng(22);
    auto x = random_tensor<double>({2, 1, 3, 12, 5}, rng);
    auto la = model_a.forward(x, false);
    auto lb = model_b.forward(x, false);
    ASSERT_EQ(la->data.size(), lb->data.size());
    for (std::size_t i = 0; i < la->data.size(); ++i) EXPECT_EQ(la->data[i], lb->data[i]);

    auto lat = model_a.forward(x, true);
    auto lbt = model_b.forward(x, true);
    for (std::size_t i = 0; i < lat->data.size(); ++i) EXPECT_EQ(lat->data[i], lbt->data[i]);
}

TEST(ModelGradCheck, FullBlockOnRandomInput) {
    auto g = load_topology(kUtdTopology);
    auto adj = build_adjacency(g);
    ModelConfig cfg;
    cfg.num_nodes = 20;
    cfg.in_channels = 3;
    cfg.blocks = {{8, 1}};
    auto model = AgcnModel<double>::build(cfg, adj, 23);
    Rng rng(24);
    auto x = random_tensor<double>({1, 3, 16, 20}, rng);
    const double err = grad_check(
        [&](const TensorPtr<double>& t) {
            return fixed_readout(model.blocks[0].forward(t, true));
        },
        x, 1e-6);
    EXPECT_LT(err, 1e-4);
}

TEST(ModelGradCheck, TinyEndToEnd) {
    // N=4, 2 blocks, T=8, double precision
    auto adj = build_adjacency(line_graph(4));
    ModelConfig cfg;
    cfg.num_nodes = 4;
    cfg.in_channels = 3;
    cfg.num_classes = 3;
    cfg.blocks = {{8, 1}, {16, 2}};
    auto model = AgcnModel<double>::build(cfg, adj, 25);
    Rng rng(26);
    auto x = random_tensor<double>({2, 1, 3, 8, 4}, rng);
    const std::vector<std::int64_t> labels{0, 2};
    const double err = grad_check(
        [&](const TensorPtr<double>& t) {
            return softmax_cross_entropy(model.forward(t, true), labels);
        },
        x, 1e-6);
    EXPECT_LT(err, 1e-4);
}

TEST(Checkpoint, ModelTensorsRoundTripBitExact) {
    auto adj = build_adjacency(line_graph(4));
    ModelConfig cfg;
    cfg.num_nodes = 4;
    cfg.in_channels = 2;
    cfg.num_classes = 3;
    cfg.blocks = {{8, 1}, {16, 2}};
    auto model = AgcnModel<float>::build(cfg, adj, 31);

    // dirty the running stats so buffers carry real state
    Rng rng(32);
    auto x = random_tensor<float>({2, 1, 2, 8, 4}, rng);
    model.forward(x, true);

    Archive a;
    write_module_tensors<float>(a, model);
    auto model2 = AgcnModel<float>::build(cfg, adj, 99);  // different init
    read_module_tensors<float>(a, model2);

    auto y1 = model.forward(x, false);
    auto y2 = model2.forward(x, false);
    for (std::size_t i = 0; i < y1->data.size(); ++i) ASSERT_EQ(y1->data[i], y2->data[i]);

    Archive b;
    write_module_tensors<float>(b, model2);
    EXPECT_EQ(a.encode(), b.encode());
}

TEST(FusionClassifierTest, DerivesGeometryFromPlan) {
    auto g = load_topology(kUtdTopology);
    FusionPlan plan;
    plan.imu_mode = ImuMode::spatial_nodes;
    plan.attachment.count = 2;
    plan.attachment.attach_to = {g.center};
    FusionInputShapes in;
    in.skeleton_channels = 3;
    in.skeleton_nodes = 20;
    in.imu_sensors = 2;
    in.imu_channels = 3;
    ModelConfig cfg;
    cfg.num_nodes = 0;  // derive
    cfg.in_channels = 0;
    cfg.num_classes = 27;
    auto fc = FusionClassifier<float>::build(cfg, plan, g, in, 0, 41);
    EXPECT_EQ(fc.net.cfg.num_nodes, 22);
    EXPECT_EQ(fc.net.cfg.in_channels, 3);
    std::int64_t total = 0;
    for (const auto& [name, t] : fc.named_parameters()) total += t->numel();
    EXPECT_EQ(total, 3456631);

    // explicit mismatched geometry is rejected
    ModelConfig bad = cfg;
    bad.num_nodes = 20;
    EXPECT_THROW(FusionClassifier<float>::build(bad, plan, g, in, 0, 41), ConfigError);
}

TEST(FusionClassifierTest, ForwardBatchFusesAndClassifies) {
    auto g = load_topology(kUtdTopology);
    FusionPlan plan;
    plan.imu_mode = ImuMode::channel_broadcast;
    FusionInputShapes in;
    in.skeleton_channels = 3;
    in.skeleton_nodes = 20;
    in.imu_sensors = 2;
    in.imu_channels = 3;
    ModelConfig cfg;
    cfg.num_nodes = 0;
    cfg.in_channels = 0;
    cfg.num_classes = 5;
    cfg.blocks = {{8, 1}, {16, 2}};
    auto fc = FusionClassifier<float>::build(cfg, plan, g, in, 0, 43);
    EXPECT_EQ(fc.net.cfg.in_channels, 9);

    Rng rng(44);
    SampleBlocks<float> s1, s2;
    s1.skeleton = skeleton_block(random_tensor<float>({1, 3, 12, 20}, rng));
    s1.imu = imu_block(random_tensor<float>({1, 3, 2, 12}, rng));
    s2.skeleton = skeleton_block(random_tensor<float>({1, 3, 12, 20}, rng));
    s2.imu = imu_block(random_tensor<float>({1, 3, 2, 12}, rng));
    auto logits = fc.forward_batch({&s1, &s2}, true);
    EXPECT_EQ(logits->dims, (Dims{2, 5}));
    EXPECT_TRUE(all_finite(*logits));
}

TEST(FusionClassifierTest, LearnedProjectionGradientsFlow) {
    auto g = line_graph(4);
    FusionPlan plan;
    plan.rgb_mode = RgbMode::channel_per_node;
    plan.rgb_embed_dim = 2;
    FusionInputShapes in;
    in.skeleton_channels = 3;
    in.skeleton_nodes = 4;
    in.rgb_channels = 2;
    ModelConfig cfg;
    cfg.num_nodes = 0;
    cfg.in_channels = 0;
    cfg.num_classes = 3;
    cfg.blocks = {{8, 1}};
    auto fc = FusionClassifier<double>::build(cfg, plan, g, in, 6, 47);
    ASSERT_TRUE(fc.rgb_proj.has_value());

    Rng rng(48);
    SampleBlocks<double> s;
    s.skeleton = skeleton_block(random_tensor<double>({1, 3, 5, 4}, rng));
    s.rgb = rgb_flat_block(random_tensor<double>({5, 6}, rng));
    auto loss = softmax_cross_entropy(fc.forward_batch({&s}, true), {1});
    backward(loss);
    ASSERT_EQ(fc.rgb_proj->weight->grad.size(), fc.rgb_proj->weight->data.size());
    double gnorm = 0;
    for (auto v : fc.rgb_proj->weight->grad) gnorm += v * v;
    EXPECT_GT(gnorm, 0.0);

    // and the projection gradient itself is correct
    const double err = grad_check(
        [&](const TensorPtr<double>& t) {
            return softmax_cross_entropy(fc.forward_batch({&s}, true), {1});
        },
        fc.rgb_proj->weight, 1e-5);
    EXPECT_LT(err, 1e-4);
}
