#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "graphfuse/data.hpp"
#include "graphfuse/gradcheck.hpp"
#include "graphfuse/model.hpp"
#include "graphfuse/training.hpp"

namespace graphfuse::cli {

// ---------------------------------------------------------------------------
// config plumbing
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string config;
    std::vector<std::string> sets;
    std::string out = "runs";
    std::int64_t seed = -1;  // <0: not given
};

inline nlohmann::json parse_override_value(const std::string& raw) {
    try {
        return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        return nlohmann::json(raw);  // plain string
    }
}

// --set a.b.c=value
inline void apply_set(nlohmann::json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    }
    const std::string path = kv.substr(0, eq);
    nlohmann::json* node = &cfg;
    std::size_t begin = 0;
    while (true) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot - begin);
        if (key.empty()) throw ConfigError("--set: empty key segment in \"" + path + "\"");
        if (dot == std::string::npos) {
            (*node)[key] = parse_override_value(kv.substr(eq + 1));
            return;
        }
        if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
        node = &(*node)[key];
        begin = dot + 1;
    }
}

inline nlohmann::json load_config_json(const CommonOpts& opts) {
    nlohmann::json cfg = nlohmann::json::object();
    if (!opts.config.empty()) {
        std::ifstream in(opts.config);
        if (!in) throw ConfigError("cannot open config: " + opts.config);
        try {
            in >> cfg;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + opts.config + ": " + e.what());
        }
        if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    }
    for (const auto& kv : opts.sets) apply_set(cfg, kv);
    return cfg;
}

inline void check_allowed_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                               const std::string& context) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(context + ": unknown key \"" + key + "\"");
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string config_hash(const nlohmann::json& cfg, const std::string& tag) {
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0')
       << static_cast<std::uint32_t>(fnv1a(tag + cfg.dump()));
    return os.str();
}

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return os.str();
}

// Run directory named by config hash + timestamp under the --out parent.
inline std::string make_run_dir(const CommonOpts& opts, const std::string& tag,
                                const nlohmann::json& cfg) {
    const std::string base = config_hash(cfg, tag) + "-" + timestamp_utc();
    std::filesystem::path dir = std::filesystem::path(opts.out) / base;
    int suffix = 1;
    while (std::filesystem::exists(dir)) {
        dir = std::filesystem::path(opts.out) / (base + "-" + std::to_string(++suffix));
    }
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline void print_warnings(const Warnings& warnings, std::ostream& err) {
    for (const auto& w : warnings) err << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// data section shared by train/eval/preprocess
// ---------------------------------------------------------------------------

struct DataSection {
    std::string manifest;
    std::string fused_dir;
    std::string topology;
    FusionPlan plan;
    std::optional<SplitSpec> split;
    std::int64_t max_t = 0;
    std::vector<std::string> sensors;
};

inline DataSection parse_data_section(const nlohmann::json& j, bool allow_fusion_keys,
                                      const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected an object");
    if (allow_fusion_keys) {
        check_allowed_keys(j, {"manifest", "fused_dir", "topology", "plan", "split", "max_t",
                               "sensors"}, context);
    } else {
        check_allowed_keys(j, {"manifest", "fused_dir", "split", "max_t", "sensors"}, context);
    }
    DataSection d;
    try {
        if (j.contains("manifest")) d.manifest = j.at("manifest").get<std::string>();
        if (j.contains("fused_dir")) d.fused_dir = j.at("fused_dir").get<std::string>();
        if (j.contains("topology")) d.topology = j.at("topology").get<std::string>();
        if (j.contains("max_t")) d.max_t = j.at("max_t").get<std::int64_t>();
        if (j.contains("sensors")) d.sensors = j.at("sensors").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(context + ": " + e.what());
    }
    if (j.contains("plan")) d.plan = fusion_plan_from_json(j.at("plan"));
    if (j.contains("split")) d.split = split_from_json(j.at("split"));
    if (d.manifest.empty() == d.fused_dir.empty()) {
        throw ConfigError(context + ": exactly one of \"manifest\" or \"fused_dir\" is required");
    }
    if (!d.manifest.empty() && allow_fusion_keys && d.topology.empty()) {
        throw ConfigError(context + ": \"topology\" is required with \"manifest\"");
    }
    return d;
}

// Loads a directory of preprocessed fused samples (see cmd_preprocess).
inline FusionDataset<float> dataset_from_fused_dir(const std::string& dir) {
    const auto index_path = std::filesystem::path(dir) / "index.json";
    std::ifstream in(index_path);
    if (!in) throw DataError("cannot open fused index: " + index_path.string());
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("fused index: " + std::string(e.what()));
    }
    FusionDataset<float> ds;
    try {
        ds.classes = index.at("classes").get<std::vector<std::string>>();
        ds.base_graph = topology_from_json(index.at("graph"));
        for (const auto& s : index.at("samples")) {
            SampleBlocks<float> blocks;
            auto tensor = load_gtn<float>(
                (std::filesystem::path(dir) / s.at("tensor").get<std::string>()).string());
            blocks.skeleton = skeleton_block(tensor);
            blocks.label = s.at("label").get<std::int64_t>();
            if (s.contains("subject")) blocks.subject = s.at("subject").get<std::int64_t>();
            if (s.contains("id")) blocks.id = s.at("id").get<std::string>();
            ds.samples.push_back(std::move(blocks));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("fused index: " + std::string(e.what()));
    }
    return ds;
}

struct LoadedSplits {
    FusionDataset<float> train;
    std::optional<FusionDataset<float>> test;
};

// subset: which side to place in `train` when no training is intended.
inline LoadedSplits load_datasets(const DataSection& d, Warnings* warnings) {
    LoadedSplits out;
    if (!d.fused_dir.empty()) {
        auto all = dataset_from_fused_dir(d.fused_dir);
        if (d.split) {
            auto ds_train = all, ds_test = all;
            ds_train.samples.clear();
            ds_test.samples.clear();
            std::set<std::int64_t> train_set(d.split->train_subjects.begin(),
                                             d.split->train_subjects.end());
            std::set<std::int64_t> test_set(d.split->test_subjects.begin(),
                                            d.split->test_subjects.end());
            for (auto& s : all.samples) {
                if (train_set.count(s.subject)) {
                    ds_train.samples.push_back(s);
                } else if (test_set.count(s.subject)) {
                    ds_test.samples.push_back(s);
                } else {
                    throw ConfigError("split: subject " + std::to_string(s.subject) +
                                      " appears in neither subject set");
                }
            }
            if (ds_test.samples.empty()) throw ConfigError("split: empty test set");
            out.train = std::move(ds_train);
            out.test = std::move(ds_test);
        } else {
            out.train = std::move(all);
        }
        return out;
    }
    auto manifest = load_manifest(d.manifest);
    auto topology = load_topology(d.topology);
    std::vector<Recording> train_recs = manifest.recordings, test_recs;
    if (d.split) {
        auto [tr, te] = apply_split(manifest.recordings, *d.split, warnings);
        train_recs = std::move(tr);
        test_recs = std::move(te);
    }
    out.train = build_fusion_dataset<float>(manifest, train_recs, topology, d.plan, d.max_t,
                                            d.sensors, warnings);
    if (!test_recs.empty()) {
        out.test = build_fusion_dataset<float>(manifest, test_recs, topology, d.plan, d.max_t,
                                               d.sensors, warnings);
    }
    return out;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline int cmd_param_count(const nlohmann::json& cfg, const CommonOpts&, std::ostream& out,
                           std::ostream&) {
    check_allowed_keys(cfg, {"model"}, "param-count config");
    if (!cfg.contains("model")) throw ConfigError("param-count: config needs a \"model\" section");
    auto model_cfg = model_config_from_json(cfg.at("model"));
    auto breakdown = count_parameters(model_cfg);
    nlohmann::json result;
    result["total"] = breakdown.total;
    result["breakdown"] = breakdown.to_json();
    out << result.dump(2) << "\n";
    return 0;
}

inline int cmd_synth(nlohmann::json cfg, const CommonOpts& opts, std::ostream& out,
                     std::ostream& err) {
    check_allowed_keys(cfg, {"classes", "samples_per_class", "nodes", "frames", "sensors",
                             "subjects", "seed"}, "synth config");
    SynthSpec spec;
    try {
        if (cfg.contains("classes")) spec.classes = cfg.at("classes").get<std::int64_t>();
        if (cfg.contains("samples_per_class")) {
            spec.samples_per_class = cfg.at("samples_per_class").get<std::int64_t>();
        }
        if (cfg.contains("nodes")) spec.nodes = cfg.at("nodes").get<std::int64_t>();
        if (cfg.contains("frames")) spec.frames = cfg.at("frames").get<std::int64_t>();
        if (cfg.contains("sensors")) spec.sensors = cfg.at("sensors").get<std::int64_t>();
        if (cfg.contains("subjects")) spec.subjects = cfg.at("subjects").get<std::int64_t>();
        if (cfg.contains("seed")) spec.seed = cfg.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    if (opts.seed >= 0) spec.seed = static_cast<std::uint64_t>(opts.seed);
    spec.validate();

    const std::string run_dir = make_run_dir(opts, "synth", cfg);
    const auto dataset_dir = std::filesystem::path(run_dir) / "dataset";
    write_synth_dataset(dataset_dir.string(), spec);
    nlohmann::json result;
    result["run_dir"] = run_dir;
    result["manifest"] = (dataset_dir / "manifest.json").string();
    result["topology"] = (dataset_dir / "topology.json").string();
    result["samples"] = spec.classes * spec.samples_per_class;
    out << result.dump(2) << "\n";
    (void)err;
    return 0;
}

inline int cmd_fuse(const nlohmann::json& cfg, const CommonOpts& opts, std::ostream& out,
                    std::ostream& err) {
    check_allowed_keys(cfg, {"skeleton", "imu", "rgb_features", "sensors", "topology", "plan",
                             "label"}, "fuse config");
    for (const char* required : {"skeleton", "topology"}) {
        if (!cfg.contains(required)) {
            throw ConfigError(std::string("fuse: config needs \"") + required + "\"");
        }
    }
    Warnings warnings;
    auto topology = load_topology(cfg.at("topology").get<std::string>());
    FusionPlan plan;
    if (cfg.contains("plan")) plan = fusion_plan_from_json(cfg.at("plan"));
    SampleBlocks<float> s;
    s.skeleton = load_skeleton_csv<float>(cfg.at("skeleton").get<std::string>(), &warnings);
    if (cfg.contains("imu")) {
        std::vector<std::string> sensors;
        if (cfg.contains("sensors")) sensors = cfg.at("sensors").get<std::vector<std::string>>();
        s.imu = load_imu_csv<float>(cfg.at("imu").get<std::string>(), sensors, &warnings);
    }
    if (cfg.contains("rgb_features")) {
        auto t = load_gtn<float>(cfg.at("rgb_features").get<std::string>());
        s.rgb = t->ndim() == 2 ? rgb_flat_block(t) : rgb_node_block(t);
        if (s.rgb->rgb_flat) {
            throw ConfigError("fuse: flat RGB features need the learned projection; "
                              "fuse them during training instead");
        }
    }
    s.label = cfg.contains("label") ? cfg.at("label").get<std::int64_t>() : -1;
    align_sample_blocks(s, plan, 0);
    auto fused = fuse_sample<float>(s, plan, topology, nullptr, &warnings);
    print_warnings(warnings, err);

    const std::string run_dir = make_run_dir(opts, "fuse", cfg);
    const auto gtn_path = std::filesystem::path(run_dir) / "fused.gtn";
    save_gtn(gtn_path.string(), *fused.tensor);
    nlohmann::json sidecar;
    sidecar["graph"] = topology_to_json(fused.graph);
    sidecar["label"] = fused.label;
    sidecar["plan"] = fusion_plan_to_json(plan);
    sidecar["dims"] = fused.tensor->dims;
    const auto sidecar_path = std::filesystem::path(run_dir) / "fused.json";
    {
        std::ofstream sj(sidecar_path);
        sj << sidecar.dump(2) << "\n";
    }
    nlohmann::json result;
    result["run_dir"] = run_dir;
    result["fused_gtn"] = gtn_path.string();
    result["sidecar"] = sidecar_path.string();
    result["dims"] = fused.tensor->dims;
    out << result.dump(2) << "\n";
    return 0;
}

inline int cmd_preprocess(const nlohmann::json& cfg, const CommonOpts& opts, std::ostream& out,
                          std::ostream& err) {
    check_allowed_keys(cfg, {"data"}, "preprocess config");
    if (!cfg.contains("data")) throw ConfigError("preprocess: config needs a \"data\" section");
    auto d = parse_data_section(cfg.at("data"), true, "preprocess data");
    if (d.manifest.empty()) throw ConfigError("preprocess: requires \"manifest\" input");
    Warnings warnings;
    auto manifest = load_manifest(d.manifest);
    auto topology = load_topology(d.topology);

    const std::string run_dir = make_run_dir(opts, "preprocess", cfg);
    const auto fused_dir = std::filesystem::path(run_dir) / "fused";
    std::filesystem::create_directories(fused_dir);

    nlohmann::json index;
    index["classes"] = manifest.classes;
    auto samples = nlohmann::json::array();
    SkeletonGraph fused_graph;
    for (std::size_t i = 0; i < manifest.recordings.size(); ++i) {
        const auto& rec = manifest.recordings[i];
        auto blocks = load_recording<float>(manifest, rec, d.sensors, &warnings);
        if (blocks.rgb && blocks.rgb->rgb_flat) {
            throw ConfigError("preprocess: flat RGB features fuse during training (learned "
                              "projection); preprocess supports static fusion only");
        }
        align_sample_blocks(blocks, d.plan, d.max_t);
        auto fused = fuse_sample<float>(blocks, d.plan, topology, nullptr, &warnings);
        fused_graph = fused.graph;
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04zu", i);
        save_gtn((fused_dir / (std::string(name) + ".gtn")).string(), *fused.tensor);
        nlohmann::json sidecar;
        sidecar["graph"] = topology_to_json(fused.graph);
        sidecar["label"] = fused.label;
        sidecar["subject"] = rec.subject;
        sidecar["id"] = rec.id;
        {
            std::ofstream sj(fused_dir / (std::string(name) + ".json"));
            sj << sidecar.dump(2) << "\n";
        }
        samples.push_back({{"tensor", std::string(name) + ".gtn"},
                           {"sidecar", std::string(name) + ".json"},
                           {"label", rec.label},
                           {"subject", rec.subject},
                           {"id", rec.id}});
    }
    index["graph"] = topology_to_json(fused_graph);
    index["plan"] = fusion_plan_to_json(d.plan);
    index["samples"] = samples;
    {
        std::ofstream ij(fused_dir / "index.json");
        ij << index.dump(2) << "\n";
    }
    print_warnings(warnings, err);
    nlohmann::json result;
    result["run_dir"] = run_dir;
    result["fused_dir"] = fused_dir.string();
    result["index"] = (fused_dir / "index.json").string();
    result["count"] = manifest.recordings.size();
    out << result.dump(2) << "\n";
    return 0;
}

inline int cmd_train(nlohmann::json cfg, const CommonOpts& opts, std::ostream& out,
                     std::ostream& err) {
    check_allowed_keys(cfg, {"data", "model", "train"}, "train config");
    if (!cfg.contains("data")) throw ConfigError("train: config needs a \"data\" section");
    auto d = parse_data_section(cfg.at("data"), true, "train data");

    nlohmann::json model_json =
        cfg.contains("model") ? cfg.at("model") : nlohmann::json::object();
    // absent geometry means: derive from the fusion plan
    if (!model_json.contains("num_nodes")) model_json["num_nodes"] = 0;
    if (!model_json.contains("in_channels")) model_json["in_channels"] = 0;
    auto model_cfg = model_config_from_json(model_json);
    auto train_cfg = cfg.contains("train") ? train_config_from_json(cfg.at("train")) : TrainConfig{};
    if (opts.seed >= 0) train_cfg.seed = static_cast<std::uint64_t>(opts.seed);

    Warnings warnings;
    auto splits = load_datasets(d, &warnings);
    if (splits.train.samples.empty()) throw ConfigError("train: empty training set");
    if (model_cfg.num_classes !=
        static_cast<std::int64_t>(splits.train.classes.size())) {
        if (cfg.contains("model") && cfg.at("model").contains("num_classes")) {
            throw ConfigError("train: model num_classes " + std::to_string(model_cfg.num_classes) +
                              " != dataset classes " + std::to_string(splits.train.classes.size()));
        }
        model_cfg.num_classes = static_cast<std::int64_t>(splits.train.classes.size());
    }

    auto clf = FusionClassifier<float>::build(model_cfg, splits.train.plan,
                                              splits.train.base_graph,
                                              splits.train.input_shapes(),
                                              splits.train.rgb_flat_features(), train_cfg.seed,
                                              &warnings);
    print_warnings(warnings, err);

    const std::string run_dir = make_run_dir(opts, "train", cfg);
    const auto log_path = std::filesystem::path(run_dir) / "log.jsonl";
    std::ofstream log_stream(log_path);
    AdamState<float> state;
    auto result = train(clf, splits.train, splits.test ? &*splits.test : nullptr, train_cfg,
                        &state, &log_stream);
    log_stream.close();

    const auto ckpt_path = std::filesystem::path(run_dir) / "checkpoint.gta";
    save_checkpoint(ckpt_path.string(), clf, state, result.epochs_run, splits.train.classes,
                    splits.train.input_shapes(), splits.train.rgb_flat_features());

    nlohmann::json summary;
    summary["run_dir"] = run_dir;
    summary["checkpoint"] = ckpt_path.string();
    summary["log"] = log_path.string();
    summary["epochs_run"] = result.epochs_run;
    summary["final_train_acc"] = result.final_train_acc;
    if (splits.test) {
        auto report = evaluate(clf, *splits.test, train_cfg.batch_size);
        summary["test_top1"] = report.top1_accuracy;
        summary["test_macro_f1"] = report.macro_f1;
    }
    {
        std::ofstream rj(std::filesystem::path(run_dir) / "result.json");
        rj << summary.dump(2) << "\n";
    }
    out << summary.dump(2) << "\n";
    return 0;
}

inline int cmd_eval(const nlohmann::json& cfg, const CommonOpts& opts, std::ostream& out,
                    std::ostream& err) {
    check_allowed_keys(cfg, {"checkpoint", "data", "batch_size"}, "eval config");
    if (!cfg.contains("checkpoint")) throw ConfigError("eval: config needs \"checkpoint\"");
    if (!cfg.contains("data")) throw ConfigError("eval: config needs a \"data\" section");
    auto ckpt = load_checkpoint<float>(cfg.at("checkpoint").get<std::string>());
    auto d = parse_data_section(cfg.at("data"), false, "eval data");
    std::int64_t batch_size = 16;
    if (cfg.contains("batch_size")) batch_size = cfg.at("batch_size").get<std::int64_t>();

    // the checkpoint owns plan and topology
    d.plan = ckpt.clf.plan;
    Warnings warnings;
    FusionDataset<float> ds;
    if (!d.fused_dir.empty()) {
        auto splits = load_datasets(d, &warnings);
        ds = splits.test ? std::move(*splits.test) : std::move(splits.train);
    } else {
        auto manifest = load_manifest(d.manifest);
        std::vector<Recording> recs = manifest.recordings;
        if (d.split) {
            auto [tr, te] = apply_split(manifest.recordings, *d.split, &warnings);
            recs = std::move(te);  // evaluation targets the held-out subjects
        }
        ds = build_fusion_dataset<float>(manifest, recs, ckpt.clf.base_graph, d.plan, d.max_t,
                                         d.sensors, &warnings);
    }
    if (ds.classes != ckpt.classes) {
        throw ConfigError("eval: dataset classes do not match the checkpoint's class list");
    }
    print_warnings(warnings, err);

    auto report = evaluate(ckpt.clf, ds, batch_size);
    const std::string run_dir = make_run_dir(opts, "eval", cfg);
    {
        std::ofstream rj(std::filesystem::path(run_dir) / "report.json");
        rj << report.to_json(ds.classes).dump(2) << "\n";
    }
    {
        std::ofstream cc(std::filesystem::path(run_dir) / "confusion.csv");
        cc << report.confusion_csv(ds.classes);
    }
    nlohmann::json result = report.to_json(ds.classes);
    result["run_dir"] = run_dir;
    result["report"] = (std::filesystem::path(run_dir) / "report.json").string();
    result["confusion_csv"] = (std::filesystem::path(run_dir) / "confusion.csv").string();
    out << result.dump(2) << "\n";
    return 0;
}

// Finite-difference verification of every layer type plus a tiny
// end-to-end model; --tiny restricts to the model check.
inline int cmd_gradcheck(const nlohmann::json& cfg, const CommonOpts& opts, bool tiny_only,
                         std::ostream& out, std::ostream& err) {
    check_allowed_keys(cfg, {"h", "seed"}, "gradcheck config");
    double h = 1e-6;
    std::uint64_t seed = 97;
    if (cfg.contains("h")) h = cfg.at("h").get<double>();
    if (cfg.contains("seed")) seed = cfg.at("seed").get<std::uint64_t>();
    if (opts.seed >= 0) seed = static_cast<std::uint64_t>(opts.seed);

    auto fixed_readout = [](const TensorPtr<double>& y) {
        Rng rng(4242);
        auto r = Tensor<double>::zeros(y->dims);
        fill_uniform(*r, rng, 0.2, 1.0);
        return sum_all(mul(y, r));
    };
    auto random_tensor = [&](Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
        auto t = Tensor<double>::zeros(std::move(dims));
        fill_uniform(*t, rng, lo, hi);
        return t;
    };

    std::vector<std::pair<std::string, double>> checks;
    Rng rng(seed);

    if (!tiny_only) {
        {
            auto b = random_tensor({4, 5}, rng);
            auto x = random_tensor({3, 4}, rng);
            checks.emplace_back("matmul", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(matmul(t, b));
                                }, x, h));
        }
        {
            ConvSpec spec;
            spec.pad_h = 1;
            spec.stride_h = 2;
            auto x = random_tensor({2, 3, 6, 5}, rng);
            auto w = random_tensor({4, 3, 3, 1}, rng);
            checks.emplace_back("conv2d", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(conv2d(t, w, spec));
                                }, x, h));
        }
        {
            auto x = random_tensor({3, 4, 5}, rng);
            auto gamma = random_tensor({4}, rng, 0.5, 1.5);
            auto beta = random_tensor({4}, rng, -0.5, 0.5);
            auto rm = Tensor<double>::zeros({4});
            auto rv = Tensor<double>::full({4}, 1.0);
            checks.emplace_back("batch_norm", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(
                                        batch_norm(t, gamma, beta, rm, rv, true, 0.1, 1e-5));
                                }, x, h));
        }
        {
            auto x = random_tensor({2, 4, 3}, rng, -2.0, 2.0);
            checks.emplace_back("softmax", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(softmax(t, 1));
                                }, x, h));
        }
        {
            auto logits = random_tensor({3, 5}, rng, -2.0, 2.0);
            const std::vector<std::int64_t> labels{1, 4, 0};
            checks.emplace_back("softmax_cross_entropy",
                                grad_check([&](const TensorPtr<double>& t) {
                                    return softmax_cross_entropy(t, labels);
                                }, logits, h));
        }
        {
            auto x = Tensor<double>::zeros({12});
            for (auto& v : x->data) {
                const double mag = rng.uniform(0.1, 1.0);
                v = rng.uniform() < 0.5 ? -mag : mag;
            }
            checks.emplace_back("relu", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(relu(t));
                                }, x, h));
        }
        {
            auto x = random_tensor({1, 2, 7, 3}, rng);
            checks.emplace_back("resample_time", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(resample_time(t, 2, 11));
                                }, x, h));
        }
        {
            Rng proj_rng(seed + 1);
            auto proj = RgbProjection<double>::init(6, 1, 2, 4, proj_rng);
            auto flat = random_tensor({5, 6}, rng);
            checks.emplace_back("rgb_projection", grad_check([&](const TensorPtr<double>& t) {
                                    return fixed_readout(proj.forward(t));
                                }, flat, h));
        }
    }
    {
        // tiny end-to-end model: N=4, 2 blocks, T=8, double precision
        SkeletonGraph g;
        g.num_nodes = 4;
        g.center = 0;
        g.edges = {{0, 1}, {1, 2}, {2, 3}};
        ModelConfig mcfg;
        mcfg.num_nodes = 4;
        mcfg.in_channels = 3;
        mcfg.num_classes = 3;
        mcfg.blocks = {{8, 1}, {16, 2}};
        auto model = AgcnModel<double>::build(mcfg, build_adjacency(g), seed);
        auto x = random_tensor({2, 1, 3, 8, 4}, rng);
        const std::vector<std::int64_t> labels{0, 2};
        auto f = [&](const TensorPtr<double>& t) {
            return softmax_cross_entropy(model.forward(t, true), labels);
        };
        checks.emplace_back("tiny_model_input", grad_check(f, x, h));
        auto params = model.named_parameters();
        // spot-check a few parameter tensors end to end
        for (const auto& name : {"blocks.0.gcn.adaptive.0", "blocks.1.tcn.conv.weight",
                                 "data_bn.gamma", "fc.weight"}) {
            for (const auto& [pname, p] : params) {
                if (pname != name) continue;
                checks.emplace_back(std::string("tiny_model/") + name,
                                    grad_check([&](const TensorPtr<double>&) {
                                        return softmax_cross_entropy(model.forward(x, true), labels);
                                    }, p, h));
            }
        }
    }

    double max_err = 0.0;
    nlohmann::json listing = nlohmann::json::array();
    for (const auto& [name, e] : checks) {
        listing.push_back({{"name", name}, {"max_rel_error", e}});
        max_err = std::max(max_err, e);
    }
    const bool pass = max_err < 1e-4;
    nlohmann::json result;
    result["checks"] = listing;
    result["max_rel_error"] = max_err;
    result["tolerance"] = 1e-4;
    result["pass"] = pass;
    out << result.dump(2) << "\n";
    if (!pass) err << "gradcheck failed: max relative error " << max_err << "\n";
    return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_command(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"multimodal skeleton-graph action recognition toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool tiny_only = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "JSON config file");
        sub->add_option("--seed", opts.seed, "override the config seed");
        sub->add_option("--out", opts.out, "parent directory for run artifacts");
        sub->add_option("--set", opts.sets, "config override key=value (repeatable)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic multimodal dataset");
    add_common(synth);
    std::int64_t classes = -1, per_class = -1, nodes = -1, frames = -1, sensors = -1;
    synth->add_option("--classes", classes, "number of classes");
    synth->add_option("--samples-per-class", per_class, "samples per class");
    synth->add_option("--nodes", nodes, "skeleton nodes");
    synth->add_option("--frames", frames, "frames per sample");
    synth->add_option("--sensors", sensors, "IMU sensor count");

    auto* preprocess = app.add_subcommand("preprocess", "fuse a dataset to GTN samples");
    add_common(preprocess);
    auto* fuse = app.add_subcommand("fuse", "fuse one recording to a GTN sample");
    add_common(fuse);
    auto* train_cmd = app.add_subcommand("train", "train a fused classifier");
    add_common(train_cmd);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    auto* param_count = app.add_subcommand("param-count", "trainable parameter count");
    add_common(param_count);
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck_cmd);
    gradcheck_cmd->add_flag("--tiny", tiny_only, "tiny end-to-end model check only");

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    try {
        nlohmann::json cfg = load_config_json(opts);
        if (app.got_subcommand(synth)) {
            if (classes > 0) cfg["classes"] = classes;
            if (per_class > 0) cfg["samples_per_class"] = per_class;
            if (nodes > 0) cfg["nodes"] = nodes;
            if (frames > 0) cfg["frames"] = frames;
            if (sensors > 0) cfg["sensors"] = sensors;
            return cmd_synth(cfg, opts, out, err);
        }
        if (app.got_subcommand(preprocess)) return cmd_preprocess(cfg, opts, out, err);
        if (app.got_subcommand(fuse)) return cmd_fuse(cfg, opts, out, err);
        if (app.got_subcommand(train_cmd)) return cmd_train(cfg, opts, out, err);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg, opts, out, err);
        if (app.got_subcommand(param_count)) return cmd_param_count(cfg, opts, out, err);
        if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(cfg, opts, tiny_only, out, err);
        err << "error: no command\n";
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace graphfuse::cli
