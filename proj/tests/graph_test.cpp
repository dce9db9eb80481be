#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "graphfuse/graph.hpp"
#include "test_util.hpp"

using namespace graphfuse;

namespace {

const char* kUtdTopology = GF_SOURCE_DIR "/configs/utd_mhad_topology.json";

// Dense oracle: D^(-1/2) (A+I) D^(-1/2) computed straight from the edge
// list, independent of build_adjacency's partition logic.
std::vector<double> normalized_adjacency_oracle(const SkeletonGraph& g) {
    const std::int64_t n = g.num_nodes;
    std::vector<double> a(n * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    for (const auto& [p, q] : g.edges) a[p * n + q] = a[q * n + p] = 1.0;
    std::vector<double> deg(n, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    std::vector<double> out(n * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out[i * n + j] = a[i * n + j] / std::sqrt(deg[i] * deg[j]);
    return out;
}

SkeletonGraph random_connected_graph(Rng& rng) {
    SkeletonGraph g;
    g.num_nodes = 2 + rng.uniform_int(10);
    for (std::int64_t v = 1; v < g.num_nodes; ++v) {
        g.edges.emplace_back(v, rng.uniform_int(v));  // random tree
    }
    const std::int64_t extra = rng.uniform_int(3);
    for (std::int64_t e = 0; e < extra; ++e) {
        const std::int64_t a = rng.uniform_int(g.num_nodes);
        const std::int64_t b = rng.uniform_int(g.num_nodes);
        if (a != b) g.edges.emplace_back(a, b);
    }
    g.center = rng.uniform_int(g.num_nodes);
    return g;
}

std::vector<double> apply_permutation(const std::vector<double>& m, std::int64_t n,
                                      const std::vector<std::int64_t>& perm) {
    // (P M P^T)[perm[i], perm[j]] = M[i, j]
    std::vector<double> out(n * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[perm[i] * n + perm[j]] = m[i * n + j];
    return out;
}

}  // namespace

TEST(Adjacency, SingleNode) {
    SkeletonGraph g;
    g.num_nodes = 1;
    g.center = 0;
    auto stack = build_adjacency(g);
    ASSERT_EQ(stack.subsets.size(), 3u);
    auto total = stack.total();
    ASSERT_EQ(total.size(), 1u);
    EXPECT_NEAR(total[0], 1.0, 1e-12);
}

TEST(Adjacency, TwoNodePathHandValues) {
    SkeletonGraph g;
    g.num_nodes = 2;
    g.center = 0;
    g.edges = {{0, 1}};
    auto stack = build_adjacency(g);
    auto total = stack.total();
    for (double v : total) EXPECT_NEAR(v, 0.5, 1e-12);
    // self subset carries the diagonal
    EXPECT_NEAR(stack.subsets[0][0], 0.5, 1e-12);
    EXPECT_NEAR(stack.subsets[0][3], 0.5, 1e-12);
    // entry (u=0 closer, v=1): subset 1; entry (u=1 farther, v=0): subset 2
    EXPECT_NEAR(stack.subsets[1][0 * 2 + 1], 0.5, 1e-12);
    EXPECT_NEAR(stack.subsets[2][1 * 2 + 0], 0.5, 1e-12);
}

TEST(Adjacency, Utd20JointSkeleton) {
    auto g = load_topology(kUtdTopology);
    ASSERT_EQ(g.num_nodes, 20);
    ASSERT_EQ(g.names[g.center], "shoulder_center");
    auto stack = build_adjacency(g);
    ASSERT_EQ(stack.subsets.size(), 3u);
    for (const auto& s : stack.subsets) {
        ASSERT_EQ(s.size(), 400u);
        for (double v : s) EXPECT_GE(v, 0.0);
    }
    auto oracle = normalized_adjacency_oracle(g);
    auto total = stack.total();
    for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], oracle[i], 1e-6);
    // row sums of the subset total match the oracle's row sums
    for (std::int64_t r = 0; r < 20; ++r) {
        double a = 0, b = 0;
        for (std::int64_t c = 0; c < 20; ++c) {
            a += total[r * 20 + c];
            b += oracle[r * 20 + c];
        }
        EXPECT_NEAR(a, b, 1e-9);
    }
}

TEST(Adjacency, TotalIsSymmetric) {
    Rng rng(211);
    for (int it = 0; it < 50; ++it) {
        auto g = random_connected_graph(rng);
        auto total = build_adjacency(g).total();
        const std::int64_t n = g.num_nodes;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                EXPECT_NEAR(total[i * n + j], total[j * n + i], 1e-12);
    }
}

TEST(Adjacency, SubsetsPartitionNormalizedMatrix) {
    Rng rng(223);
    for (int it = 0; it < 50; ++it) {
        auto g = random_connected_graph(rng);
        auto stack = build_adjacency(g);
        auto oracle = normalized_adjacency_oracle(g);
        auto total = stack.total();
        for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], oracle[i], 1e-6);
        // entries never shared between subsets
        for (std::size_t i = 0; i < total.size(); ++i) {
            int nonzero = 0;
            for (const auto& s : stack.subsets) nonzero += s[i] != 0.0 ? 1 : 0;
            EXPECT_LE(nonzero, 1);
        }
    }
}

TEST(AppendNodes, CenterAttachment) {
    auto g = load_topology(kUtdTopology);
    AttachmentSpec spec;
    spec.count = 2;
    spec.attach_to = {g.center};
    auto out = append_nodes(g, spec);
    EXPECT_EQ(out.num_nodes, 22);
    EXPECT_EQ(out.edges.size(), g.edges.size() + 2);
    EXPECT_EQ(out.center, g.center);

    spec.interconnect = true;
    auto out2 = append_nodes(g, spec);
    EXPECT_EQ(out2.edges.size(), g.edges.size() + 3);
}

TEST(AppendNodes, ZeroCountIsIdentity) {
    auto g = load_topology(kUtdTopology);
    AttachmentSpec spec;
    auto out = append_nodes(g, spec);
    EXPECT_EQ(out.num_nodes, g.num_nodes);
    EXPECT_EQ(out.edges, g.edges);
}

TEST(AppendNodes, WristHipAttachment) {
    auto g = load_topology(kUtdTopology);
    AttachmentSpec spec;
    spec.count = 2;
    spec.attach_to = {10, 16};  // right wrist, right hip
    auto out = append_nodes(g, spec);
    EXPECT_EQ(out.num_nodes, 22);
    const std::pair<std::int64_t, std::int64_t> last{21, 16};
    EXPECT_EQ(out.edges.back(), last);
}

TEST(AppendNodes, InvalidAttachIndex) {
    auto g = load_topology(kUtdTopology);
    AttachmentSpec spec;
    spec.count = 1;
    spec.attach_to = {99};
    EXPECT_THROW(append_nodes(g, spec), ConfigError);
}

TEST(AppendNodes, TopologyPreservation) {
    // top-left N x N block of (A'+I) equals (A+I) of the original
    Rng rng(227);
    for (int it = 0; it < 20; ++it) {
        auto g = random_connected_graph(rng);
        AttachmentSpec spec;
        spec.count = 1 + rng.uniform_int(3);
        spec.attach_to = {rng.uniform_int(g.num_nodes)};
        spec.interconnect = rng.uniform() < 0.5;
        auto out = append_nodes(g, spec);
        const std::int64_t n = g.num_nodes, n2 = out.num_nodes;
        std::vector<int> a(n * n, 0), b(n2 * n2, 0);
        for (std::int64_t i = 0; i < n; ++i) a[i * n + i] = 1;
        for (const auto& [p, q] : g.edges) a[p * n + q] = a[q * n + p] = 1;
        for (std::int64_t i = 0; i < n2; ++i) b[i * n2 + i] = 1;
        for (const auto& [p, q] : out.edges) b[p * n2 + q] = b[q * n2 + p] = 1;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) EXPECT_EQ(a[i * n + j], b[i * n2 + j]);
    }
}

TEST(AppendNodes, DisconnectedWarnsNotThrows) {
    SkeletonGraph g;
    g.num_nodes = 3;  // no edges: already disconnected
    g.center = 0;
    AttachmentSpec spec;
    spec.count = 1;
    spec.attach_to = {0};
    Warnings warnings;
    auto out = append_nodes(g, spec, &warnings);
    EXPECT_EQ(out.num_nodes, 4);
    ASSERT_FALSE(warnings.empty());
    EXPECT_NE(warnings[0].find("disconnected"), std::string::npos);
}

TEST(PermuteNodes, IdentityAndSwap) {
    SkeletonGraph g;
    g.num_nodes = 2;
    g.center = 0;
    g.edges = {{0, 1}};
    auto same = permute_nodes(g, {0, 1});
    EXPECT_EQ(same.edges, g.edges);
    EXPECT_EQ(same.center, 0);

    auto swapped = permute_nodes(g, {1, 0});
    EXPECT_EQ(swapped.center, 1);
    std::set<std::pair<std::int64_t, std::int64_t>> norm;
    for (auto [a, b] : swapped.edges) norm.insert({std::min(a, b), std::max(a, b)});
    EXPECT_TRUE(norm.count({0, 1}));
}

TEST(PermuteNodes, NonBijectiveRejected) {
    SkeletonGraph g;
    g.num_nodes = 3;
    g.center = 0;
    EXPECT_THROW(permute_nodes(g, {0, 0, 1}), UsageError);
    EXPECT_THROW(permute_nodes(g, {0, 1}), UsageError);
}

TEST(PermuteNodes, AdjacencyCovariance) {
    // build_adjacency(permute(g)) == P A P^T subset-wise
    Rng rng(229);
    for (int it = 0; it < 30; ++it) {
        auto g = random_connected_graph(rng);
        const std::int64_t n = g.num_nodes;
        std::vector<std::int64_t> perm(n);
        for (std::int64_t i = 0; i < n; ++i) perm[i] = i;
        for (std::int64_t i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
        }
        auto base = build_adjacency(g);
        auto permuted = build_adjacency(permute_nodes(g, perm));
        for (std::size_t k = 0; k < 3; ++k) {
            auto expected = apply_permutation(base.subsets[k], n, perm);
            for (std::size_t i = 0; i < expected.size(); ++i) {
                ASSERT_NEAR(permuted.subsets[k][i], expected[i], 1e-12)
                    << "subset " << k << " case " << it;
            }
        }
    }
}

TEST(Topology, JsonRoundTripAndValidation) {
    auto g = load_topology(kUtdTopology);
    auto j = topology_to_json(g);
    auto back = topology_from_json(j);
    EXPECT_EQ(back.num_nodes, g.num_nodes);
    EXPECT_EQ(back.edges, g.edges);
    EXPECT_EQ(back.center, g.center);
    EXPECT_EQ(back.names, g.names);

    auto bad = j;
    bad["extra_key"] = 1;
    EXPECT_THROW(topology_from_json(bad), ConfigError);

    auto bad2 = j;
    bad2["edges"].push_back({0, 99});
    EXPECT_THROW(topology_from_json(bad2), ConfigError);

    auto bad3 = j;
    bad3["edges"].push_back({3, 3});
    EXPECT_THROW(topology_from_json(bad3), ConfigError);
}

TEST(Topology, Body25ConfigLoads) {
    auto g = load_topology(GF_SOURCE_DIR "/configs/mmact_body25_topology.json");
    EXPECT_EQ(g.num_nodes, 25);
    EXPECT_EQ(g.names[g.center], "neck");
    EXPECT_TRUE(is_connected(g));
    auto stack = build_adjacency(g);
    EXPECT_EQ(stack.n, 25);
}
