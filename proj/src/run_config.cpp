#include "ocpl/run_config.hpp"

#include <set>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

namespace {

constexpr std::uint64_t kSaltData = 0x64617461;

// Wraps one JSON object level: typed getters plus unknown-key detection.
class ObjectReader {
  public:
    ObjectReader(const nlohmann::json& j, std::string path)
        : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(path_ + ": expected a JSON object");
        }
    }

    ~ObjectReader() = default;

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError(path_ + ": unknown key '" + key + "'");
            }
        }
    }

    bool has(const std::string& key) {
        return j_.contains(key);
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const nlohmann::json* object(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    const std::string& path() const { return path_; }

  private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

DataConfig::Source parse_source(const std::string& s, const std::string& path) {
    if (s == "blobs") return DataConfig::Source::Blobs;
    if (s == "ring") return DataConfig::Source::Ring;
    if (s == "csv") return DataConfig::Source::Csv;
    throw ConfigError(path + ": source must be one of blobs, ring, csv (got '" +
                      s + "')");
}

ProtoMode parse_proto_mode(const std::string& s, const std::string& path) {
    if (s == "fixed") return ProtoMode::FixedFinetuned;
    if (s == "learnable") return ProtoMode::Learnable;
    throw ConfigError(path + ": proto_mode must be 'fixed' or 'learnable' "
                      "(got '" + s + "')");
}

ClassifierKind parse_classifier(const std::string& s, const std::string& path) {
    if (s == "cosine") return ClassifierKind::Cosine;
    if (s == "inner_product") return ClassifierKind::InnerProduct;
    throw ConfigError(path + ": classifier must be 'cosine' or 'inner_product' "
                      "(got '" + s + "')");
}

}  // namespace

const char* proto_mode_name(ProtoMode mode) {
    return mode == ProtoMode::FixedFinetuned ? "fixed" : "learnable";
}

const char* classifier_kind_name(ClassifierKind kind) {
    return kind == ClassifierKind::Cosine ? "cosine" : "inner_product";
}

void RunConfig::validate() const {
    try {
        train.validate();
        infer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (embed_dim == 0) throw ConfigError("model.embed_dim must be >= 1");
    for (std::size_t h : hidden_dims) {
        if (h == 0) throw ConfigError("model.hidden_dims entries must be >= 1");
    }
    if (data.source != DataConfig::Source::Csv) {
        if (data.num_classes == 0 || data.samples_per_class == 0 ||
            data.feature_dim == 0) {
            throw ConfigError("data: counts must be >= 1");
        }
        if (data.center_spread <= 0 || data.cluster_std <= 0) {
            throw ConfigError("data: center_spread and cluster_std must be > 0");
        }
    } else if (data.path.empty()) {
        throw ConfigError("data.path is required when data.source is 'csv'");
    }
    if (num_tasks == 0) throw ConfigError("protocol.num_tasks must be >= 1");
    if (exemplars_per_class == 0) {
        throw ConfigError("protocol.exemplars_per_class must be >= 1");
    }
    if (!(holdout_fraction > 0 && holdout_fraction < 1)) {
        throw ConfigError("protocol.holdout_fraction must be in (0, 1)");
    }
    if (!(exemplar_epoch_fraction > 0 && exemplar_epoch_fraction <= 1)) {
        throw ConfigError("protocol.exemplar_epoch_fraction must be in (0, 1]");
    }
    if (!(exemplar_lr_scale > 0 && exemplar_lr_scale <= 1)) {
        throw ConfigError("protocol.exemplar_lr_scale must be in (0, 1]");
    }
    if (!(stage_lr_scale > 0 && stage_lr_scale <= 1)) {
        throw ConfigError("protocol.stage_lr_scale must be in (0, 1]");
    }
    if (ablation_seeds == 0) throw ConfigError("ablation.seeds must be >= 1");
    if (known_classes == 0) throw ConfigError("ablation.known_classes >= 1");
    if (gradcheck_trials == 0) throw ConfigError("gradcheck.trials must be >= 1");
    if (!(gradcheck_step > 0)) throw ConfigError("gradcheck.step must be > 0");
    if (!(gradcheck_tolerance > 0)) {
        throw ConfigError("gradcheck.tolerance must be > 0");
    }
}

RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    ObjectReader root(j, "config");
    root.get("seed", cfg.seed);
    root.get("out_dir", cfg.out_dir);

    if (const nlohmann::json* dj = root.object("data")) {
        ObjectReader r(*dj, "config.data");
        std::string source = "blobs";
        r.get("source", source);
        cfg.data.source = parse_source(source, "config.data.source");
        r.get("path", cfg.data.path);
        r.get("num_classes", cfg.data.num_classes);
        r.get("samples_per_class", cfg.data.samples_per_class);
        r.get("feature_dim", cfg.data.feature_dim);
        r.get("center_spread", cfg.data.center_spread);
        r.get("cluster_std", cfg.data.cluster_std);
        r.get("r_inner", cfg.data.r_inner);
        r.get("r_outer", cfg.data.r_outer);
        r.finish();
    }

    if (const nlohmann::json* mj = root.object("model")) {
        ObjectReader r(*mj, "config.model");
        r.get("hidden_dims", cfg.hidden_dims);
        r.get("embed_dim", cfg.embed_dim);
        std::string classifier = classifier_kind_name(cfg.classifier);
        r.get("classifier", classifier);
        cfg.classifier = parse_classifier(classifier, "config.model.classifier");
        r.finish();
    }

    if (const nlohmann::json* tj = root.object("train")) {
        ObjectReader r(*tj, "config.train");
        r.get("epochs", cfg.train.epochs);
        r.get("batch_size", cfg.train.batch_size);
        r.get("learning_rate", cfg.train.learning_rate);
        r.get("momentum", cfg.train.momentum);
        r.get("lambda", cfg.train.lambda);
        r.get("alpha", cfg.train.alpha);
        std::string mode = proto_mode_name(cfg.train.proto_mode);
        r.get("proto_mode", mode);
        cfg.train.proto_mode = parse_proto_mode(mode, "config.train.proto_mode");
        r.get("finetune_period_epochs", cfg.train.finetune_period_epochs);
        r.get("finetune_momentum", cfg.train.finetune_momentum);
        r.get("warmup_epochs", cfg.train.warmup_epochs);
        r.get("freeze_extractor", cfg.train.freeze_extractor);
        r.finish();
    }

    if (const nlohmann::json* ij = root.object("infer")) {
        ObjectReader r(*ij, "config.infer");
        r.get("gamma", cfg.infer.gamma);
        r.get("xi", cfg.infer.xi);
        r.finish();
    }

    if (const nlohmann::json* pj = root.object("protocol")) {
        ObjectReader r(*pj, "config.protocol");
        r.get("num_tasks", cfg.num_tasks);
        r.get("exemplars_per_class", cfg.exemplars_per_class);
        r.get("holdout_fraction", cfg.holdout_fraction);
        r.get("exemplar_epoch_fraction", cfg.exemplar_epoch_fraction);
        r.get("exemplar_lr_scale", cfg.exemplar_lr_scale);
        r.get("stage_lr_scale", cfg.stage_lr_scale);
        r.get("exemplar_finetune", cfg.exemplar_finetune);
        r.finish();
    }

    if (const nlohmann::json* aj = root.object("ablation")) {
        ObjectReader r(*aj, "config.ablation");
        r.get("seeds", cfg.ablation_seeds);
        r.get("known_classes", cfg.known_classes);
        r.get("unknown_classes", cfg.unknown_classes);
        r.finish();
    }

    if (const nlohmann::json* gj = root.object("gradcheck")) {
        ObjectReader r(*gj, "config.gradcheck");
        r.get("trials", cfg.gradcheck_trials);
        r.get("step", cfg.gradcheck_step);
        r.get("tolerance", cfg.gradcheck_tolerance);
        r.finish();
    }

    root.finish();
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    nlohmann::json j;
    const std::string text = read_file(path);
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    nlohmann::ordered_json data;
    switch (cfg.data.source) {
        case DataConfig::Source::Blobs:
            data["source"] = "blobs";
            break;
        case DataConfig::Source::Ring:
            data["source"] = "ring";
            break;
        case DataConfig::Source::Csv:
            data["source"] = "csv";
            data["path"] = cfg.data.path;
            break;
    }
    if (cfg.data.source != DataConfig::Source::Csv) {
        data["num_classes"] = cfg.data.num_classes;
        data["samples_per_class"] = cfg.data.samples_per_class;
        data["feature_dim"] = cfg.data.feature_dim;
        data["center_spread"] = cfg.data.center_spread;
        data["cluster_std"] = cfg.data.cluster_std;
        if (cfg.data.source == DataConfig::Source::Ring) {
            data["r_inner"] = cfg.data.r_inner;
            data["r_outer"] = cfg.data.r_outer;
        }
    }
    j["data"] = std::move(data);
    j["model"] = {{"hidden_dims", cfg.hidden_dims},
                  {"embed_dim", cfg.embed_dim},
                  {"classifier", classifier_kind_name(cfg.classifier)}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"momentum", cfg.train.momentum},
                  {"lambda", cfg.train.lambda},
                  {"alpha", cfg.train.alpha},
                  {"proto_mode", proto_mode_name(cfg.train.proto_mode)},
                  {"finetune_period_epochs", cfg.train.finetune_period_epochs},
                  {"finetune_momentum", cfg.train.finetune_momentum},
                  {"warmup_epochs", cfg.train.warmup_epochs},
                  {"freeze_extractor", cfg.train.freeze_extractor}};
    j["infer"] = {{"gamma", cfg.infer.gamma}, {"xi", cfg.infer.xi}};
    j["protocol"] = {{"num_tasks", cfg.num_tasks},
                     {"exemplars_per_class", cfg.exemplars_per_class},
                     {"holdout_fraction", cfg.holdout_fraction},
                     {"exemplar_epoch_fraction", cfg.exemplar_epoch_fraction},
                     {"exemplar_lr_scale", cfg.exemplar_lr_scale},
                     {"stage_lr_scale", cfg.stage_lr_scale},
                     {"exemplar_finetune", cfg.exemplar_finetune}};
    j["ablation"] = {{"seeds", cfg.ablation_seeds},
                     {"known_classes", cfg.known_classes},
                     {"unknown_classes", cfg.unknown_classes}};
    j["gradcheck"] = {{"trials", cfg.gradcheck_trials},
                      {"step", cfg.gradcheck_step},
                      {"tolerance", cfg.gradcheck_tolerance}};
    return j;
}

FeatureDataset make_dataset(const DataConfig& data, std::uint64_t seed) {
    switch (data.source) {
        case DataConfig::Source::Blobs:
            return gen_gaussian_blobs(data.num_classes, data.samples_per_class,
                                      data.feature_dim, data.center_spread,
                                      data.cluster_std,
                                      mix_seed(seed, kSaltData));
        case DataConfig::Source::Ring:
            return gen_ring_vs_blob(data.samples_per_class, data.feature_dim,
                                    data.r_inner, data.r_outer, data.cluster_std,
                                    mix_seed(seed, kSaltData));
        case DataConfig::Source::Csv:
            if (data.path.empty()) {
                throw ConfigError("data: csv source requires a path");
            }
            return load_csv(data.path);
    }
    throw ConfigError("data: invalid source");
}

ModelConfig make_model_config(const RunConfig& cfg, std::size_t input_dim,
                              std::size_t num_classes) {
    ModelConfig mc;
    mc.input_dim = input_dim;
    mc.hidden_dims = cfg.hidden_dims;
    mc.embed_dim = cfg.embed_dim;
    mc.num_classes = num_classes;
    mc.alpha = cfg.train.alpha;
    mc.classifier_kind = cfg.classifier;
    mc.proto_mode = cfg.train.proto_mode;
    return mc;
}

ProtocolConfig make_protocol_config(const RunConfig& cfg) {
    ProtocolConfig pc;
    pc.model = make_model_config(cfg, cfg.data.feature_dim, 0);
    pc.train = cfg.train;
    pc.infer = cfg.infer;
    pc.num_tasks = cfg.num_tasks;
    pc.exemplars_per_class = cfg.exemplars_per_class;
    pc.holdout_fraction = cfg.holdout_fraction;
    pc.exemplar_epoch_fraction = cfg.exemplar_epoch_fraction;
    pc.exemplar_lr_scale = cfg.exemplar_lr_scale;
    pc.stage_lr_scale = cfg.stage_lr_scale;
    pc.exemplar_finetune = cfg.exemplar_finetune;
    pc.seed = cfg.seed;
    return pc;
}

}  // namespace ocpl
