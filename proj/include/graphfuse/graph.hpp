#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graphfuse/tensor.hpp"

namespace graphfuse {

// Undirected skeleton graph: joints as nodes, bones as edges. Self-loops
// stay out of the edge list; they enter through the identity subset of the
// adjacency stack.
struct SkeletonGraph {
    std::int64_t num_nodes = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> edges;
    std::int64_t center = 0;
    std::vector<std::string> names;  // optional, per node

    void validate() const {
        if (num_nodes <= 0) throw ConfigError("graph: num_nodes must be positive");
        if (center < 0 || center >= num_nodes) {
            throw ConfigError("graph: center " + std::to_string(center) + " outside [0," +
                              std::to_string(num_nodes) + ")");
        }
        for (const auto& [a, b] : edges) {
            if (a < 0 || a >= num_nodes || b < 0 || b >= num_nodes) {
                throw ConfigError("graph: edge (" + std::to_string(a) + "," + std::to_string(b) +
                                  ") outside [0," + std::to_string(num_nodes) + ")");
            }
            if (a == b) {
                throw ConfigError("graph: self-loop at node " + std::to_string(a));
            }
        }
        if (!names.empty() && static_cast<std::int64_t>(names.size()) != num_nodes) {
            throw ConfigError("graph: names list length does not match num_nodes");
        }
    }
};

// S extra sensor/feature nodes: where they attach and whether they are
// pairwise interconnected.
struct AttachmentSpec {
    std::int64_t count = 0;
    std::vector<std::int64_t> attach_to;
    bool interconnect = false;

    void validate(const SkeletonGraph& g) const {
        if (count < 0) throw ConfigError("attachment: count must be >= 0");
        if (count > 0 && attach_to.empty()) {
            throw ConfigError("attachment: attach_to must name at least one node");
        }
        if (count > 0 && attach_to.size() != 1 &&
            static_cast<std::int64_t>(attach_to.size()) != count) {
            throw ConfigError("attachment: attach_to must have length 1 or count");
        }
        for (auto a : attach_to) {
            if (a < 0 || a >= g.num_nodes) {
                throw ConfigError("attachment: attach index " + std::to_string(a) +
                                  " outside [0," + std::to_string(g.num_nodes) + ")");
            }
        }
    }
};

// K_s nonnegative N x N matrices partitioning the symmetric-normalized
// adjacency-with-self-loops. Stored double; cast at model build.
struct AdjacencyStack {
    std::int64_t n = 0;
    std::vector<std::vector<double>> subsets;

    std::vector<double> total() const {
        std::vector<double> s(static_cast<std::size_t>(n * n), 0.0);
        for (const auto& m : subsets) {
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += m[i];
        }
        return s;
    }
};

// BFS hop distance from the center; -1 where unreachable.
inline std::vector<std::int64_t> hop_distances(const SkeletonGraph& g) {
    std::vector<std::vector<std::int64_t>> adj(g.num_nodes);
    for (const auto& [a, b] : g.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<std::int64_t> dist(g.num_nodes, -1);
    std::deque<std::int64_t> queue{g.center};
    dist[g.center] = 0;
    while (!queue.empty()) {
        const std::int64_t u = queue.front();
        queue.pop_front();
        for (auto v : adj[u]) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

inline bool is_connected(const SkeletonGraph& g) {
    auto d = hop_distances(g);
    return std::none_of(d.begin(), d.end(), [](std::int64_t x) { return x < 0; });
}

// Symmetric normalization D^(-1/2) (A+I) D^(-1/2), split into three spatial
// subsets relative to the center: (0) self connections, (1) source node at
// most as far from the center as the target (ties land here), (2) source
// node farther. Entry (u,v) aggregates source u into target v.
inline AdjacencyStack build_adjacency(const SkeletonGraph& g) {
    g.validate();
    const std::int64_t n = g.num_nodes;
    std::vector<double> a(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    for (const auto& [p, q] : g.edges) {
        a[p * n + q] = 1.0;
        a[q * n + p] = 1.0;
    }
    std::vector<double> deg(n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    }
    std::vector<double> norm(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            if (a[i * n + j] != 0.0) norm[i * n + j] = a[i * n + j] / std::sqrt(deg[i] * deg[j]);
        }
    }

    auto hops = hop_distances(g);
    const std::int64_t inf = std::numeric_limits<std::int64_t>::max();
    auto hop_of = [&](std::int64_t i) { return hops[i] < 0 ? inf : hops[i]; };

    AdjacencyStack stack;
    stack.n = n;
    stack.subsets.assign(3, std::vector<double>(static_cast<std::size_t>(n * n), 0.0));
    for (std::int64_t u = 0; u < n; ++u) {
        for (std::int64_t v = 0; v < n; ++v) {
            const double val = norm[u * n + v];
            if (val == 0.0) continue;
            if (u == v) {
                stack.subsets[0][u * n + v] = val;
            } else if (hop_of(u) <= hop_of(v)) {
                stack.subsets[1][u * n + v] = val;
            } else {
                stack.subsets[2][u * n + v] = val;
            }
        }
    }
    return stack;
}

// Appends spec.count nodes; node N+i attaches to attach_to[i mod len], new
// nodes pairwise connected when interconnect is set. The caller rebuilds the
// adjacency. Warns (never errors) when the result is disconnected.
inline SkeletonGraph append_nodes(const SkeletonGraph& g, const AttachmentSpec& spec,
                                  Warnings* warnings = nullptr) {
    g.validate();
    spec.validate(g);
    SkeletonGraph out = g;
    if (spec.count == 0) return out;
    out.num_nodes = g.num_nodes + spec.count;
    for (std::int64_t i = 0; i < spec.count; ++i) {
        const std::int64_t target = spec.attach_to[i % spec.attach_to.size()];
        out.edges.emplace_back(g.num_nodes + i, target);
    }
    if (spec.interconnect) {
        for (std::int64_t i = 0; i < spec.count; ++i) {
            for (std::int64_t j = i + 1; j < spec.count; ++j) {
                out.edges.emplace_back(g.num_nodes + i, g.num_nodes + j);
            }
        }
    }
    if (!out.names.empty()) {
        for (std::int64_t i = 0; i < spec.count; ++i) {
            out.names.push_back("attached_" + std::to_string(i));
        }
    }
    if (!is_connected(out)) {
        warn(warnings, "graph disconnected after appending " + std::to_string(spec.count) +
                           " nodes");
    }
    return out;
}

// Relabels nodes: node i becomes perm[i].
inline SkeletonGraph permute_nodes(const SkeletonGraph& g, const std::vector<std::int64_t>& perm) {
    g.validate();
    if (static_cast<std::int64_t>(perm.size()) != g.num_nodes) {
        throw UsageError("permute_nodes: permutation length mismatch");
    }
    std::vector<bool> seen(g.num_nodes, false);
    for (auto p : perm) {
        if (p < 0 || p >= g.num_nodes || seen[p]) {
            throw UsageError("permute_nodes: not a bijection on [0,N)");
        }
        seen[p] = true;
    }
    SkeletonGraph out;
    out.num_nodes = g.num_nodes;
    out.center = perm[g.center];
    out.edges.reserve(g.edges.size());
    for (const auto& [a, b] : g.edges) out.edges.emplace_back(perm[a], perm[b]);
    if (!g.names.empty()) {
        out.names.resize(g.num_nodes);
        for (std::int64_t i = 0; i < g.num_nodes; ++i) out.names[perm[i]] = g.names[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON topology config: { "num_nodes", "edges": [[a,b],...], "center",
// optional "names" }
// ---------------------------------------------------------------------------

inline SkeletonGraph topology_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("topology: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "num_nodes" && key != "edges" && key != "center" && key != "names") {
            throw ConfigError("topology: unknown key \"" + key + "\"");
        }
    }
    SkeletonGraph g;
    try {
        g.num_nodes = j.at("num_nodes").get<std::int64_t>();
        g.center = j.at("center").get<std::int64_t>();
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw ConfigError("topology: edge must be [a,b]");
            g.edges.emplace_back(e[0].get<std::int64_t>(), e[1].get<std::int64_t>());
        }
        if (j.contains("names")) g.names = j.at("names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("topology: ") + e.what());
    }
    g.validate();
    return g;
}

inline nlohmann::json topology_to_json(const SkeletonGraph& g) {
    nlohmann::json j;
    j["num_nodes"] = g.num_nodes;
    j["center"] = g.center;
    auto edges = nlohmann::json::array();
    for (const auto& [a, b] : g.edges) edges.push_back({a, b});
    j["edges"] = edges;
    if (!g.names.empty()) j["names"] = g.names;
    return j;
}

inline SkeletonGraph load_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open topology file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("topology " + path + ": " + e.what());
    }
    return topology_from_json(j);
}

template <typename T>
TensorPtr<T> adjacency_subset_tensor(const AdjacencyStack& stack, std::size_t k) {
    const auto& m = stack.subsets.at(k);
    std::vector<T> v(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = static_cast<T>(m[i]);
    return Tensor<T>::create({stack.n, stack.n}, std::move(v));
}

}  // namespace graphfuse
