#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "graphfuse/fusion.hpp"
#include "graphfuse/model.hpp"
#include "graphfuse/nn_ops.hpp"

namespace graphfuse {

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    std::int64_t epochs = 60;
    double base_lr = 1e-3;
    std::vector<std::int64_t> restarts = {20, 40};  // warm-restart epochs
    AdamConfig adam;
    std::int64_t batch_size = 16;
    std::uint64_t seed = 1;
    // stop once train accuracy reaches this (0 disables)
    double early_stop_train_acc = 0.0;
    bool eval_each_epoch = false;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (base_lr <= 0) throw ConfigError("train: base_lr must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        std::int64_t prev = 0;
        for (std::size_t i = 0; i < restarts.size(); ++i) {
            if (restarts[i] <= (i == 0 ? 0 : prev) || restarts[i] >= epochs) {
                throw ConfigError("train: restart epochs must be strictly increasing and < epochs");
            }
            prev = restarts[i];
        }
        if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1) {
            throw ConfigError("train: adam betas must lie in [0,1)");
        }
        if (adam.eps <= 0) throw ConfigError("train: adam eps must be positive");
    }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        static const char* known[] = {"epochs",     "base_lr",   "restarts",
                                      "optimizer",  "batch_size", "seed",
                                      "early_stop_train_acc", "eval_each_epoch"};
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("train config: unknown key \"" + key + "\"");
    }
    TrainConfig cfg;
    try {
        if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::int64_t>();
        if (j.contains("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
        if (j.contains("restarts")) cfg.restarts = j.at("restarts").get<std::vector<std::int64_t>>();
        if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::int64_t>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("early_stop_train_acc")) {
            cfg.early_stop_train_acc = j.at("early_stop_train_acc").get<double>();
        }
        if (j.contains("eval_each_epoch")) cfg.eval_each_epoch = j.at("eval_each_epoch").get<bool>();
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            for (const auto& [key, _] : o.items()) {
                if (key != "beta1" && key != "beta2" && key != "eps" && key != "weight_decay") {
                    throw ConfigError("train config optimizer: unknown key \"" + key + "\"");
                }
            }
            if (o.contains("beta1")) cfg.adam.beta1 = o.at("beta1").get<double>();
            if (o.contains("beta2")) cfg.adam.beta2 = o.at("beta2").get<double>();
            if (o.contains("eps")) cfg.adam.eps = o.at("eps").get<double>();
            if (o.contains("weight_decay")) cfg.adam.weight_decay = o.at("weight_decay").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"epochs", cfg.epochs},
            {"base_lr", cfg.base_lr},
            {"restarts", cfg.restarts},
            {"optimizer",
             {{"beta1", cfg.adam.beta1},
              {"beta2", cfg.adam.beta2},
              {"eps", cfg.adam.eps},
              {"weight_decay", cfg.adam.weight_decay}}},
            {"batch_size", cfg.batch_size},
            {"seed", cfg.seed},
            {"early_stop_train_acc", cfg.early_stop_train_acc},
            {"eval_each_epoch", cfg.eval_each_epoch}};
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

// Cosine annealing with warm restarts; lr_min = 0. Within a period,
// lr = 1/2 * base * (1 + cos(pi * t_cur / T_i)).
inline double cosine_lr(std::int64_t epoch, const TrainConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.epochs) {
        throw UsageError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                         std::to_string(cfg.epochs) + ")");
    }
    std::int64_t start = 0, end = cfg.epochs;
    for (auto r : cfg.restarts) {
        if (epoch >= r) {
            start = r;
        } else {
            end = r;
            break;
        }
    }
    const double t_cur = static_cast<double>(epoch - start);
    const double period = static_cast<double>(end - start);
    return 0.5 * cfg.base_lr * (1.0 + std::cos(M_PI * t_cur / period));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::int64_t step = 0;
    std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;  // name -> (m, v)
};

// Bias-corrected Adam over named parameters. Parameters without an
// allocated gradient are treated as zero-gradient. Throws NumericError on
// non-finite gradients (the step is aborted before any update).
template <typename T>
void adam_step(const NamedTensors<T>& params, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
    for (const auto& [name, p] : params) {
        if (p->grad.empty()) continue;
        for (auto g : p->grad) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("adam: non-finite gradient in \"" + name + "\" at step " +
                                   std::to_string(state.step + 1));
            }
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& [name, p] : params) {
        auto& [m, v] = state.moments[name];
        if (m.size() != p->data.size()) m.assign(p->data.size(), T(0));
        if (v.size() != p->data.size()) v.assign(p->data.size(), T(0));
        const bool has_grad = !p->grad.empty();
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            double g = has_grad ? static_cast<double>(p->grad[i]) : 0.0;
            if (cfg.weight_decay != 0.0) g += cfg.weight_decay * static_cast<double>(p->data[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            p->data[i] =
                static_cast<T>(static_cast<double>(p->data[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct EvalReport {
    std::int64_t num_classes = 0;
    std::int64_t total = 0;
    double top1_accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::int64_t> confusion;  // row = true class, col = predicted

    nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const {
        nlohmann::json j;
        j["top1_accuracy"] = top1_accuracy;
        j["macro_f1"] = macro_f1;
        j["per_class_accuracy"] = per_class_accuracy;
        j["total"] = total;
        auto rows = nlohmann::json::array();
        for (std::int64_t r = 0; r < num_classes; ++r) {
            rows.push_back(std::vector<std::int64_t>(confusion.begin() + r * num_classes,
                                                     confusion.begin() + (r + 1) * num_classes));
        }
        j["confusion"] = rows;
        if (!class_names.empty()) j["classes"] = class_names;
        return j;
    }

    std::string confusion_csv(const std::vector<std::string>& class_names = {}) const {
        std::string out = "true\\pred";
        for (std::int64_t c = 0; c < num_classes; ++c) {
            out += "," + (class_names.empty() ? std::to_string(c) : class_names[c]);
        }
        out += "\n";
        for (std::int64_t r = 0; r < num_classes; ++r) {
            out += class_names.empty() ? std::to_string(r) : class_names[r];
            for (std::int64_t c = 0; c < num_classes; ++c) {
                out += "," + std::to_string(confusion[r * num_classes + c]);
            }
            out += "\n";
        }
        return out;
    }
};

// top1 = trace/total; macro F1 is the unweighted mean over classes of
// 2PR/(P+R), skipping classes with neither instances nor predictions.
inline EvalReport metrics_from_confusion(const std::vector<std::int64_t>& confusion,
                                         std::int64_t k) {
    if (k < 1 || static_cast<std::int64_t>(confusion.size()) != k * k) {
        throw UsageError("metrics: confusion must be K x K");
    }
    EvalReport r;
    r.num_classes = k;
    r.confusion = confusion;
    std::int64_t trace = 0;
    for (std::int64_t c = 0; c < k; ++c) trace += confusion[c * k + c];
    for (auto v : confusion) r.total += v;
    r.top1_accuracy = r.total > 0 ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;

    r.per_class_accuracy.assign(k, 0.0);
    double f1_sum = 0.0;
    std::int64_t f1_classes = 0;
    for (std::int64_t c = 0; c < k; ++c) {
        std::int64_t row = 0, col = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            row += confusion[c * k + j];
            col += confusion[j * k + c];
        }
        const std::int64_t tp = confusion[c * k + c];
        r.per_class_accuracy[c] = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        if (row == 0 && col == 0) continue;  // absent class: excluded from macro F1
        const double precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        const double recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        const double f1 =
            precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_sum += f1;
        ++f1_classes;
    }
    r.macro_f1 = f1_classes > 0 ? f1_sum / static_cast<double>(f1_classes) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// dataset container
// ---------------------------------------------------------------------------

// Aligned samples plus the fusion recipe they share. Pre-fused data uses a
// degenerate plan (everything off) with the fused tensor as the skeleton
// block.
template <typename T>
struct FusionDataset {
    std::vector<SampleBlocks<T>> samples;
    SkeletonGraph base_graph;
    FusionPlan plan;
    std::vector<std::string> classes;

    FusionInputShapes input_shapes() const {
        if (samples.empty()) throw UsageError("dataset: no samples");
        const auto& s = samples.front();
        FusionInputShapes in;
        in.skeleton_channels = s.skeleton.channels();
        in.skeleton_nodes = s.skeleton.nodes();
        if (s.imu) {
            in.imu_sensors = s.imu->sensors();
            in.imu_channels = s.imu->channels();
        }
        if (s.rgb) {
            if (s.rgb->rgb_flat) {
                in.rgb_channels = plan.rgb_embed_dim;
            } else if (plan.rgb_mode == RgbMode::spatial_nodes) {
                in.rgb_nodes = s.rgb->nodes();
            } else {
                in.rgb_channels = s.rgb->channels();
            }
        }
        return in;
    }

    std::int64_t rgb_flat_features() const {
        if (samples.empty() || !samples.front().rgb || !samples.front().rgb->rgb_flat) return 0;
        return samples.front().rgb->channels();
    }

    // every sample must share block geometry so batches stack
    void validate() const {
        if (samples.empty()) throw UsageError("dataset: no samples");
        const auto& first = samples.front();
        for (std::size_t i = 1; i < samples.size(); ++i) {
            const auto& s = samples[i];
            if (s.skeleton.tensor->dims != first.skeleton.tensor->dims ||
                s.imu.has_value() != first.imu.has_value() ||
                (s.imu && s.imu->tensor->dims != first.imu->tensor->dims) ||
                s.rgb.has_value() != first.rgb.has_value() ||
                (s.rgb && s.rgb->tensor->dims != first.rgb->tensor->dims)) {
                throw ShapeError("dataset: sample " + std::to_string(i) +
                                 " does not match the first sample's block shapes");
            }
        }
        for (const auto& s : samples) {
            if (s.label < 0 || s.label >= static_cast<std::int64_t>(classes.size())) {
                throw DataError("dataset: label " + std::to_string(s.label) +
                                " outside class list of size " + std::to_string(classes.size()));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> val_acc;
    std::optional<double> val_f1;

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss},
                         {"train_acc", train_acc}};
        if (val_acc) j["val_acc"] = *val_acc;
        if (val_f1) j["val_f1"] = *val_f1;
        return j;
    }
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::int64_t epochs_run = 0;
    double final_train_acc = 0.0;
};

template <typename T>
EvalReport evaluate(const FusionClassifier<T>& clf, const FusionDataset<T>& ds,
                    std::int64_t batch_size = 16) {
    if (ds.samples.empty()) throw UsageError("evaluate: empty dataset");
    ds.validate();
    const std::int64_t k = static_cast<std::int64_t>(ds.classes.size());
    std::vector<std::int64_t> confusion(static_cast<std::size_t>(k * k), 0);
    NoGradGuard no_grad;
    for (std::size_t off = 0; off < ds.samples.size(); off += batch_size) {
        std::vector<const SampleBlocks<T>*> batch;
        std::vector<std::int64_t> labels;
        for (std::size_t i = off; i < std::min(ds.samples.size(), off + batch_size); ++i) {
            batch.push_back(&ds.samples[i]);
            labels.push_back(ds.samples[i].label);
        }
        auto logits = clf.forward_batch(batch, false);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const T* row = logits->data.data() + b * k;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c) {
                if (row[c] > row[best]) best = c;
            }
            confusion[labels[b] * k + best] += 1;
        }
    }
    return metrics_from_confusion(confusion, k);
}

// Deterministic given config.seed: a fixed shuffle stream and init streams,
// serialized optimizer steps. Writes one JSON record per epoch to
// `log_stream` when given.
template <typename T>
TrainResult train(FusionClassifier<T>& clf, const FusionDataset<T>& train_set,
                  const std::type_identity_t<FusionDataset<T>>* val_set, const TrainConfig& cfg,
                  std::type_identity_t<AdamState<T>>* resume_state = nullptr,
                  std::ostream* log_stream = nullptr) {
    cfg.validate();
    train_set.validate();
    if (val_set) val_set->validate();
    const std::int64_t k = static_cast<std::int64_t>(train_set.classes.size());
    if (k != clf.net.cfg.num_classes) {
        throw ConfigError("train: dataset has " + std::to_string(k) + " classes, model expects " +
                          std::to_string(clf.net.cfg.num_classes));
    }
    // fail on geometry mismatch before any training step
    {
        auto in = train_set.input_shapes();
        auto predicted = predict_fusion_output(clf.plan, train_set.base_graph, in);
        if (predicted.nodes != clf.net.cfg.num_nodes ||
            predicted.channels != clf.net.cfg.in_channels) {
            throw ShapeError("train: fused sample geometry (C=" + std::to_string(predicted.channels) +
                             ", N=" + std::to_string(predicted.nodes) + ") does not match model (C=" +
                             std::to_string(clf.net.cfg.in_channels) + ", N=" +
                             std::to_string(clf.net.cfg.num_nodes) + ")");
        }
    }

    auto params = clf.named_parameters();
    AdamState<T> local_state;
    AdamState<T>& state = resume_state ? *resume_state : local_state;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566666c65ull));

    std::vector<std::size_t> order(train_set.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<std::int64_t>(i))]);
        }
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            std::vector<const SampleBlocks<T>*> batch;
            std::vector<std::int64_t> labels;
            for (std::size_t i = off; i < std::min(order.size(), off + cfg.batch_size); ++i) {
                batch.push_back(&train_set.samples[order[i]]);
                labels.push_back(train_set.samples[order[i]].label);
            }
            for (auto& [name, p] : params) {
                p->ensure_grad();
                p->zero_grad();
            }
            auto logits = clf.forward_batch(batch, true);
            auto loss = softmax_cross_entropy(logits, labels);
            backward(loss);
            adam_step(params, state, lr, cfg.adam);
            loss_sum += static_cast<double>(loss->item()) * static_cast<double>(batch.size());
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const T* row = logits->data.data() + b * k;
                std::int64_t best = 0;
                for (std::int64_t c = 1; c < k; ++c) {
                    if (row[c] > row[best]) best = c;
                }
                correct += best == labels[b] ? 1 : 0;
            }
        }
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.train_loss = loss_sum / static_cast<double>(order.size());
        log.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (val_set && cfg.eval_each_epoch) {
            auto report = evaluate(clf, *val_set, cfg.batch_size);
            log.val_acc = report.top1_accuracy;
            log.val_f1 = report.macro_f1;
        }
        if (log_stream) *log_stream << log.to_json().dump() << "\n";
        result.log.push_back(log);
        result.epochs_run = epoch + 1;
        result.final_train_acc = log.train_acc;
        if (cfg.early_stop_train_acc > 0 && log.train_acc >= cfg.early_stop_train_acc) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json input_shapes_to_json(const FusionInputShapes& in) {
    return {{"skeleton_channels", in.skeleton_channels}, {"skeleton_nodes", in.skeleton_nodes},
            {"imu_sensors", in.imu_sensors},             {"imu_channels", in.imu_channels},
            {"rgb_channels", in.rgb_channels},           {"rgb_nodes", in.rgb_nodes}};
}

inline FusionInputShapes input_shapes_from_json(const nlohmann::json& j) {
    FusionInputShapes in;
    in.skeleton_channels = j.at("skeleton_channels").get<std::int64_t>();
    in.skeleton_nodes = j.at("skeleton_nodes").get<std::int64_t>();
    in.imu_sensors = j.at("imu_sensors").get<std::int64_t>();
    in.imu_channels = j.at("imu_channels").get<std::int64_t>();
    in.rgb_channels = j.at("rgb_channels").get<std::int64_t>();
    in.rgb_nodes = j.at("rgb_nodes").get<std::int64_t>();
    return in;
}

template <typename T>
struct CheckpointData {
    FusionClassifier<T> clf;
    AdamState<T> adam;
    std::int64_t epoch = 0;
    std::vector<std::string> classes;
    FusionInputShapes input_shapes;
    std::int64_t rgb_flat_features = 0;
};

template <typename T>
Archive encode_checkpoint(const FusionClassifier<T>& clf, const AdamState<T>& adam,
                          std::int64_t epoch, const std::vector<std::string>& classes,
                          const FusionInputShapes& input_shapes,
                          std::int64_t rgb_flat_features) {
    Archive a;
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["model"] = model_config_to_json(clf.net.cfg);
    manifest["plan"] = fusion_plan_to_json(clf.plan);
    manifest["base_graph"] = topology_to_json(clf.base_graph);
    manifest["classes"] = classes;
    manifest["epoch"] = epoch;
    manifest["adam_step"] = adam.step;
    manifest["input_shapes"] = input_shapes_to_json(input_shapes);
    manifest["rgb_flat_features"] = rgb_flat_features;
    a.put_string("manifest.json", manifest.dump(2));
    write_module_tensors<T>(a, clf);
    for (const auto& [name, mv] : adam.moments) {
        const auto& [m, v] = mv;
        a.put_tensor("adam/m/" + name, *Tensor<T>::create({static_cast<std::int64_t>(m.size())},
                                                          std::vector<T>(m)));
        a.put_tensor("adam/v/" + name, *Tensor<T>::create({static_cast<std::int64_t>(v.size())},
                                                          std::vector<T>(v)));
    }
    return a;
}

template <typename T>
void save_checkpoint(const std::string& path, const FusionClassifier<T>& clf,
                     const AdamState<T>& adam, std::int64_t epoch,
                     const std::vector<std::string>& classes,
                     const FusionInputShapes& input_shapes, std::int64_t rgb_flat_features) {
    encode_checkpoint(clf, adam, epoch, classes, input_shapes, rgb_flat_features).save(path);
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    Archive a = Archive::load(path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(a.get_string("manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint manifest: ") + e.what());
    }
    CheckpointData<T> out;
    try {
        out.epoch = manifest.at("epoch").get<std::int64_t>();
        out.classes = manifest.at("classes").get<std::vector<std::string>>();
        out.adam.step = manifest.at("adam_step").get<std::int64_t>();
        out.input_shapes = input_shapes_from_json(manifest.at("input_shapes"));
        out.rgb_flat_features = manifest.at("rgb_flat_features").get<std::int64_t>();
        auto cfg = model_config_from_json(manifest.at("model"));
        auto plan = fusion_plan_from_json(manifest.at("plan"));
        auto graph = topology_from_json(manifest.at("base_graph"));
        out.clf = FusionClassifier<T>::build(cfg, plan, graph, out.input_shapes,
                                             out.rgb_flat_features, 0);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint manifest: ") + e.what());
    }
    read_module_tensors<T>(a, out.clf);
    for (const auto& [name, p] : out.clf.named_parameters()) {
        if (!a.has("adam/m/" + name)) continue;
        auto m = a.get_tensor<T>("adam/m/" + name);
        auto v = a.get_tensor<T>("adam/v/" + name);
        if (m->numel() != p->numel() || v->numel() != p->numel()) {
            throw DataError("checkpoint: optimizer moments for \"" + name + "\" have wrong size");
        }
        out.adam.moments[name] = {m->data, v->data};
    }
    return out;
}

}  // namespace graphfuse
