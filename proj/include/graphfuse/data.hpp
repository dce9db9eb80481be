#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphfuse/fusion.hpp"
#include "graphfuse/gtn.hpp"
#include "graphfuse/training.hpp"

namespace graphfuse {

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct Recording {
    std::string id;
    std::int64_t subject = -1;
    std::int64_t label = -1;
    std::string skeleton_path;
    std::string imu_path;  // optional
    std::string rgb_path;  // optional, GTN tensor
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<Recording> recordings;
    std::string base_dir;  // resolved at load; relative paths hang off this

    std::string resolve(const std::string& rel) const {
        if (rel.empty() || rel.front() == '/' || base_dir.empty()) return rel;
        return (std::filesystem::path(base_dir) / rel).string();
    }
};

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("manifest: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "classes" && key != "recordings") {
            throw ConfigError("manifest: unknown key \"" + key + "\"");
        }
    }
    DatasetManifest m;
    try {
        m.classes = j.at("classes").get<std::vector<std::string>>();
        for (const auto& r : j.at("recordings")) {
            for (const auto& [key, _] : r.items()) {
                if (key != "id" && key != "subject" && key != "label" && key != "skeleton" &&
                    key != "imu" && key != "rgb_features") {
                    throw ConfigError("manifest recording: unknown key \"" + key + "\"");
                }
            }
            Recording rec;
            rec.id = r.at("id").get<std::string>();
            rec.subject = r.at("subject").get<std::int64_t>();
            rec.label = r.at("label").get<std::int64_t>();
            rec.skeleton_path = r.at("skeleton").get<std::string>();
            if (r.contains("imu")) rec.imu_path = r.at("imu").get<std::string>();
            if (r.contains("rgb_features")) rec.rgb_path = r.at("rgb_features").get<std::string>();
            if (rec.label < 0 || rec.label >= static_cast<std::int64_t>(m.classes.size())) {
                throw ConfigError("manifest: recording " + rec.id + " label " +
                                  std::to_string(rec.label) + " outside class list");
            }
            m.recordings.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    return m;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["classes"] = m.classes;
    auto recs = nlohmann::json::array();
    for (const auto& r : m.recordings) {
        nlohmann::json e{{"id", r.id}, {"subject", r.subject}, {"label", r.label},
                         {"skeleton", r.skeleton_path}};
        if (!r.imu_path.empty()) e["imu"] = r.imu_path;
        if (!r.rgb_path.empty()) e["rgb_features"] = r.rgb_path;
        recs.push_back(e);
    }
    j["recordings"] = recs;
    return j;
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest " + path + ": " + e.what());
    }
    auto m = manifest_from_json(j);
    m.base_dir = std::filesystem::path(path).parent_path().string();
    return m;
}

// ---------------------------------------------------------------------------
// cross-subject split
// ---------------------------------------------------------------------------

struct SplitSpec {
    std::vector<std::int64_t> train_subjects;
    std::vector<std::int64_t> test_subjects;
};

inline SplitSpec split_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("split: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "protocol" && key != "train_subjects" && key != "test_subjects") {
            throw ConfigError("split: unknown key \"" + key + "\"");
        }
    }
    try {
        if (j.contains("protocol") && j.at("protocol").get<std::string>() != "cross_subject") {
            throw ConfigError("split: only the cross_subject protocol is supported");
        }
        SplitSpec s;
        s.train_subjects = j.at("train_subjects").get<std::vector<std::int64_t>>();
        s.test_subjects = j.at("test_subjects").get<std::vector<std::int64_t>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("split: ") + e.what());
    }
}

inline nlohmann::json split_to_json(const SplitSpec& s) {
    return {{"protocol", "cross_subject"},
            {"train_subjects", s.train_subjects},
            {"test_subjects", s.test_subjects}};
}

// Partition by subject. Subject sets must be disjoint and cover every
// referenced subject; a listed subject with no samples warns.
inline std::pair<std::vector<Recording>, std::vector<Recording>> apply_split(
    const std::vector<Recording>& recordings, const SplitSpec& spec,
    Warnings* warnings = nullptr) {
    std::set<std::int64_t> train(spec.train_subjects.begin(), spec.train_subjects.end());
    std::set<std::int64_t> test(spec.test_subjects.begin(), spec.test_subjects.end());
    for (auto s : test) {
        if (train.count(s)) {
            throw ConfigError("split: subject " + std::to_string(s) + " in both subject sets");
        }
    }
    std::pair<std::vector<Recording>, std::vector<Recording>> out;
    std::set<std::int64_t> seen;
    for (const auto& r : recordings) {
        seen.insert(r.subject);
        if (train.count(r.subject)) {
            out.first.push_back(r);
        } else if (test.count(r.subject)) {
            out.second.push_back(r);
        } else {
            throw ConfigError("split: subject " + std::to_string(r.subject) +
                              " of recording " + r.id + " appears in neither subject set");
        }
    }
    for (auto s : train) {
        if (!seen.count(s)) warn(warnings, "split: train subject " + std::to_string(s) + " has no samples");
    }
    for (auto s : test) {
        if (!seen.count(s)) warn(warnings, "split: test subject " + std::to_string(s) + " has no samples");
    }
    if (out.second.empty()) throw ConfigError("split: empty test set");
    return out;
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
    }
    return fields;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

inline bool parse_int(const std::string& s, std::int64_t& out) {
    double d;
    if (!parse_double(s, d)) return false;
    out = static_cast<std::int64_t>(d);
    return static_cast<double>(out) == d;
}

inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// skeleton CSV: frame, person, joint, <C coordinate columns>
// ---------------------------------------------------------------------------

template <typename T>
ModalityBlock<T> load_skeleton_csv(const std::string& path, Warnings* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open skeleton csv: " + path);
    struct Row {
        std::int64_t frame, person, joint;
        std::vector<double> coords;
    };
    std::vector<Row> rows;
    std::int64_t channels = -1;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        std::int64_t frame;
        if (line_no == 1 && !detail::parse_int(fields[0], frame)) continue;  // header
        if (fields.size() < 4) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected frame,person,joint,coords");
        }
        Row r;
        if (!detail::parse_int(fields[0], r.frame) || !detail::parse_int(fields[1], r.person) ||
            !detail::parse_int(fields[2], r.joint)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed index field");
        }
        if (r.frame < 0 || r.person < 0 || r.joint < 0) {
            throw DataError(path + ":" + std::to_string(line_no) + ": negative index");
        }
        for (std::size_t k = 3; k < fields.size(); ++k) {
            double v;
            if (!detail::parse_double(fields[k], v)) {
                throw DataError(path + ":" + std::to_string(line_no) + ": malformed coordinate \"" +
                                fields[k] + "\"");
            }
            r.coords.push_back(v);
        }
        if (channels < 0) channels = static_cast<std::int64_t>(r.coords.size());
        if (static_cast<std::int64_t>(r.coords.size()) != channels) {
            throw DataError(path + ":" + std::to_string(line_no) + ": inconsistent coordinate count");
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError(path + ": no skeleton rows");

    // re-index non-contiguous frames
    std::set<std::int64_t> frames;
    std::int64_t max_person = 0, max_joint = 0;
    for (const auto& r : rows) {
        frames.insert(r.frame);
        max_person = std::max(max_person, r.person);
        max_joint = std::max(max_joint, r.joint);
    }
    std::map<std::int64_t, std::int64_t> frame_index;
    std::int64_t next = 0;
    for (auto f : frames) frame_index[f] = next++;
    if (*frames.rbegin() != next - 1) {
        warn(warnings, path + ": non-contiguous frame indices re-indexed to 0.." +
                           std::to_string(next - 1));
    }

    const std::int64_t M = max_person + 1, N = max_joint + 1, Tn = next, C = channels;
    auto tensor = Tensor<T>::zeros({M, C, Tn, N});
    std::set<std::int64_t> seen;
    for (const auto& r : rows) {
        const std::int64_t t = frame_index[r.frame];
        const std::int64_t key = (r.person * Tn + t) * N + r.joint;
        if (!seen.insert(key).second) {
            throw DataError(path + ": duplicate (frame,person,joint) = (" +
                            std::to_string(r.frame) + "," + std::to_string(r.person) + "," +
                            std::to_string(r.joint) + ")");
        }
        for (std::int64_t c = 0; c < C; ++c) {
            tensor->data[((r.person * C + c) * Tn + t) * N + r.joint] = static_cast<T>(r.coords[c]);
        }
    }
    const std::int64_t missing = M * Tn * N - static_cast<std::int64_t>(rows.size());
    if (missing > 0) {
        warn(warnings, path + ": " + std::to_string(missing) + " missing (frame,person,joint) slots zero-filled");
    }
    return skeleton_block(tensor);
}

template <typename T>
void write_skeleton_csv(const std::string& path, const ModalityBlock<T>& block) {
    if (block.kind != ModalityKind::skeleton) throw UsageError("write_skeleton_csv: not a skeleton block");
    block.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write skeleton csv: " + path);
    const std::int64_t M = block.persons(), C = block.channels(), Tn = block.frames(),
                       N = block.nodes();
    out << "frame,person,joint";
    for (std::int64_t c = 0; c < C; ++c) out << ",c" << c;
    out << "\n";
    for (std::int64_t t = 0; t < Tn; ++t) {
        for (std::int64_t m = 0; m < M; ++m) {
            for (std::int64_t n = 0; n < N; ++n) {
                out << t << "," << m << "," << n;
                for (std::int64_t c = 0; c < C; ++c) {
                    out << ","
                        << detail::format_value(
                               static_cast<double>(block.tensor->data[((m * C + c) * Tn + t) * N + n]));
                }
                out << "\n";
            }
        }
    }
}

// ---------------------------------------------------------------------------
// IMU CSV: t_index, sensor_id, x, y, z
// ---------------------------------------------------------------------------

// `sensor_order` selects and orders sensors; empty keeps first-appearance
// order. Requested sensors missing from the file are data errors; unlisted
// file sensors are skipped. Streams are resampled to the longest stream.
template <typename T>
ModalityBlock<T> load_imu_csv(const std::string& path, std::vector<std::string> sensor_order = {},
                              Warnings* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open imu csv: " + path);
    struct Entry {
        double t;
        double x, y, z;
    };
    std::map<std::string, std::vector<Entry>> streams;
    std::vector<std::string> appearance;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        double t;
        if (line_no == 1 && !detail::parse_double(fields[0], t)) continue;  // header
        if (fields.size() != 5) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected t,sensor,x,y,z");
        }
        Entry e;
        if (!detail::parse_double(fields[0], e.t) || !detail::parse_double(fields[2], e.x) ||
            !detail::parse_double(fields[3], e.y) || !detail::parse_double(fields[4], e.z)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed numeric field");
        }
        const std::string& sensor = fields[1];
        if (sensor.empty()) throw DataError(path + ":" + std::to_string(line_no) + ": empty sensor id");
        if (!streams.count(sensor)) appearance.push_back(sensor);
        streams[sensor].push_back(e);
    }
    if (streams.empty()) throw DataError(path + ": no imu rows");

    if (sensor_order.empty()) sensor_order = appearance;
    std::int64_t t_max = 0;
    for (const auto& name : sensor_order) {
        auto it = streams.find(name);
        if (it == streams.end()) {
            throw DataError(path + ": unknown sensor_id \"" + name + "\"");
        }
        auto& entries = it->second;
        bool sorted = std::is_sorted(entries.begin(), entries.end(),
                                     [](const Entry& a, const Entry& b) { return a.t < b.t; });
        if (!sorted) {
            std::stable_sort(entries.begin(), entries.end(),
                             [](const Entry& a, const Entry& b) { return a.t < b.t; });
            warn(warnings, path + ": sensor \"" + name + "\" timestamps misordered; sorted");
        }
        t_max = std::max<std::int64_t>(t_max, static_cast<std::int64_t>(entries.size()));
    }

    const std::int64_t S = static_cast<std::int64_t>(sensor_order.size());
    auto tensor = Tensor<T>::zeros({1, 3, S, t_max});
    for (std::int64_t s = 0; s < S; ++s) {
        const auto& entries = streams[sensor_order[s]];
        const std::int64_t len = static_cast<std::int64_t>(entries.size());
        auto stream = Tensor<T>::zeros({3, len});
        for (std::int64_t i = 0; i < len; ++i) {
            stream->data[0 * len + i] = static_cast<T>(entries[i].x);
            stream->data[1 * len + i] = static_cast<T>(entries[i].y);
            stream->data[2 * len + i] = static_cast<T>(entries[i].z);
        }
        auto aligned = len == t_max ? stream : resample_time(stream, 1, t_max);
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t t = 0; t < t_max; ++t) {
                tensor->data[((c * S) + s) * t_max + t] = aligned->data[c * t_max + t];
            }
        }
    }
    return imu_block(tensor);
}

template <typename T>
void write_imu_csv(const std::string& path, const ModalityBlock<T>& block,
                   const std::vector<std::string>& sensor_names) {
    if (block.kind != ModalityKind::imu) throw UsageError("write_imu_csv: not an imu block");
    block.validate();
    if (block.channels() != 3) throw UsageError("write_imu_csv: expects 3 channels");
    if (static_cast<std::int64_t>(sensor_names.size()) != block.sensors()) {
        throw UsageError("write_imu_csv: sensor name count mismatch");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write imu csv: " + path);
    out << "t,sensor,x,y,z\n";
    const std::int64_t S = block.sensors(), Tn = block.frames();
    auto value = [&](std::int64_t c, std::int64_t s, std::int64_t t) {
        return static_cast<double>(block.tensor->data[(c * S + s) * Tn + t]);
    };
    for (std::int64_t t = 0; t < Tn; ++t) {
        for (std::int64_t s = 0; s < S; ++s) {
            out << t << "," << sensor_names[s] << "," << detail::format_value(value(0, s, t)) << ","
                << detail::format_value(value(1, s, t)) << "," << detail::format_value(value(2, s, t))
                << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic multimodal dataset
// ---------------------------------------------------------------------------

// Class identity is encoded twice: a class-specific oscillation frequency in
// the skeleton and a class-specific constant offset in the IMU channels.
// Classes 0 and 1 share one skeleton stream (byte-identical skeletons pair
// by sample index), so only their IMU offsets separate them.
struct SynthSpec {
    std::int64_t classes = 3;
    std::int64_t samples_per_class = 20;
    std::int64_t nodes = 8;
    std::int64_t frames = 32;
    std::int64_t sensors = 2;
    std::int64_t subjects = 4;
    std::uint64_t seed = 7;

    void validate() const {
        if (classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (samples_per_class < 1 || nodes < 2 || frames < 2 || sensors < 1 || subjects < 1) {
            throw ConfigError("synth: nonpositive dimension");
        }
    }
};

inline SkeletonGraph synthetic_topology(std::int64_t nodes) {
    SkeletonGraph g;
    g.num_nodes = nodes;
    g.center = nodes / 2;
    for (std::int64_t i = 1; i < nodes; ++i) g.edges.emplace_back(i - 1, i);
    return g;
}

template <typename T>
FusionDataset<T> synthesize_dataset(const SynthSpec& spec) {
    spec.validate();
    FusionDataset<T> ds;
    ds.base_graph = synthetic_topology(spec.nodes);
    for (std::int64_t c = 0; c < spec.classes; ++c) {
        ds.classes.push_back("class_" + std::to_string(c));
    }
    const double tau = 6.28318530717958647692;
    for (std::int64_t c = 0; c < spec.classes; ++c) {
        // classes 0 and 1 form the IMU-only-separable pair
        const std::int64_t group = c <= 1 ? 0 : c - 1;
        const double freq = static_cast<double>(group + 1);
        const double offset = 0.6 * static_cast<double>(c + 1);
        for (std::int64_t i = 0; i < spec.samples_per_class; ++i) {
            Rng skel_rng(mix_seed(spec.seed, 0x736b656cull + group * 1000003ull, i));
            Rng imu_rng(mix_seed(spec.seed, 0x696d7575ull + group * 1000003ull, i));
            auto skel = Tensor<T>::zeros({1, 3, spec.frames, spec.nodes});
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                for (std::int64_t t = 0; t < spec.frames; ++t) {
                    for (std::int64_t n = 0; n < spec.nodes; ++n) {
                        const double base = 0.3 * static_cast<double>((n + 2 * ch) % 5);
                        const double phase = 0.7 * static_cast<double>(n) + 0.3 * static_cast<double>(ch);
                        const double wave =
                            0.25 * std::sin(tau * freq * static_cast<double>(t) /
                                                static_cast<double>(spec.frames) +
                                            phase);
                        skel->data[((ch * spec.frames) + t) * spec.nodes + n] =
                            static_cast<T>(base + wave + 0.02 * skel_rng.uniform(-1.0, 1.0));
                    }
                }
            }
            auto imu = Tensor<T>::zeros({1, 3, spec.sensors, spec.frames});
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                for (std::int64_t s = 0; s < spec.sensors; ++s) {
                    for (std::int64_t t = 0; t < spec.frames; ++t) {
                        const double level =
                            offset * (1.0 + 0.1 * static_cast<double>(ch) + 0.05 * static_cast<double>(s));
                        imu->data[(ch * spec.sensors + s) * spec.frames + t] =
                            static_cast<T>(level + 0.02 * imu_rng.uniform(-1.0, 1.0));
                    }
                }
            }
            SampleBlocks<T> sample;
            sample.skeleton = skeleton_block(skel);
            sample.imu = imu_block(imu);
            sample.label = c;
            sample.subject = i % spec.subjects + 1;
            sample.id = "c" + std::to_string(c) + "_s" + std::to_string(i);
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

// Writes the synthetic set as CSV files plus manifest and topology configs;
// byte-deterministic for a given spec.
inline DatasetManifest write_synth_dataset(const std::string& dir, const SynthSpec& spec) {
    auto ds = synthesize_dataset<float>(spec);
    std::filesystem::create_directories(dir);
    DatasetManifest manifest;
    manifest.classes = ds.classes;
    manifest.base_dir = dir;
    std::vector<std::string> sensor_names;
    for (std::int64_t s = 0; s < spec.sensors; ++s) {
        sensor_names.push_back("imu" + std::to_string(s));
    }
    for (const auto& sample : ds.samples) {
        Recording rec;
        rec.id = sample.id;
        rec.subject = sample.subject;
        rec.label = sample.label;
        rec.skeleton_path = sample.id + "_skeleton.csv";
        rec.imu_path = sample.id + "_imu.csv";
        write_skeleton_csv((std::filesystem::path(dir) / rec.skeleton_path).string(),
                           sample.skeleton);
        write_imu_csv((std::filesystem::path(dir) / rec.imu_path).string(), *sample.imu,
                      sensor_names);
        manifest.recordings.push_back(std::move(rec));
    }
    {
        std::ofstream out(std::filesystem::path(dir) / "topology.json", std::ios::trunc);
        out << topology_to_json(ds.base_graph).dump(2) << "\n";
    }
    {
        std::ofstream out(std::filesystem::path(dir) / "manifest.json", std::ios::trunc);
        out << manifest_to_json(manifest).dump(2) << "\n";
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

template <typename T>
SampleBlocks<T> load_recording(const DatasetManifest& manifest, const Recording& rec,
                               const std::vector<std::string>& sensor_order = {},
                               Warnings* warnings = nullptr) {
    SampleBlocks<T> s;
    s.skeleton = load_skeleton_csv<T>(manifest.resolve(rec.skeleton_path), warnings);
    if (!rec.imu_path.empty()) {
        s.imu = load_imu_csv<T>(manifest.resolve(rec.imu_path), sensor_order, warnings);
    }
    if (!rec.rgb_path.empty()) {
        auto t = load_gtn<T>(manifest.resolve(rec.rgb_path));
        s.rgb = t->ndim() == 2 ? rgb_flat_block(t) : rgb_node_block(t);
    }
    s.label = rec.label;
    s.subject = rec.subject;
    s.id = rec.id;
    return s;
}

// Loads, aligns, and bundles a recording subset for the trainer.
template <typename T>
FusionDataset<T> build_fusion_dataset(const DatasetManifest& manifest,
                                      const std::vector<Recording>& recordings,
                                      const SkeletonGraph& topology, const FusionPlan& plan,
                                      std::int64_t max_t = 0,
                                      const std::vector<std::string>& sensor_order = {},
                                      Warnings* warnings = nullptr) {
    FusionDataset<T> ds;
    ds.base_graph = topology;
    ds.plan = plan;
    ds.classes = manifest.classes;
    for (const auto& rec : recordings) {
        auto s = load_recording<T>(manifest, rec, sensor_order, warnings);
        align_sample_blocks(s, plan, max_t);
        ds.samples.push_back(std::move(s));
    }
    if (!ds.samples.empty()) ds.validate();
    return ds;
}

}  // namespace graphfuse
