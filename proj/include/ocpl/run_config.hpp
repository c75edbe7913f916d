#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocpl/data.hpp"
#include "ocpl/model.hpp"
#include "ocpl/protocol.hpp"
#include "ocpl/trainer.hpp"

namespace ocpl {

struct DataConfig {
    enum class Source { Blobs, Ring, Csv };
    Source source = Source::Blobs;
    std::string path;  // csv source only
    std::size_t num_classes = 8;
    std::size_t samples_per_class = 200;
    std::size_t feature_dim = 8;
    double center_spread = 3.0;
    double cluster_std = 0.3;
    double r_inner = 2.0;  // ring source only
    double r_outer = 3.0;
};

// The one JSON document every command consumes. Parsing rejects unknown keys
// at every level so config typos fail loudly instead of silently using a
// default.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    DataConfig data;

    std::vector<std::size_t> hidden_dims = {32, 16};
    std::size_t embed_dim = 8;
    ClassifierKind classifier = ClassifierKind::Cosine;

    TrainConfig train;       // train.seed is always synced to the master seed
    InferenceConfig infer;

    std::size_t num_tasks = 4;
    std::size_t exemplars_per_class = 50;
    double holdout_fraction = 0.25;
    double exemplar_epoch_fraction = 0.2;
    double exemplar_lr_scale = 0.1;
    double stage_lr_scale = 0.2;  // later stages train at this lr fraction
    bool exemplar_finetune = true;

    std::size_t ablation_seeds = 5;
    std::size_t known_classes = 5;   // open-set experiment split
    std::size_t unknown_classes = 3;

    std::size_t gradcheck_trials = 100;
    double gradcheck_step = 1e-5;
    double gradcheck_tolerance = 1e-4;

    void validate() const;
};

/// Throws ConfigError on malformed JSON structure, unknown keys, or
/// out-of-range values.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

/// The dataset named by cfg.data; generator sources derive their stream from
/// the master seed.
FeatureDataset make_dataset(const DataConfig& data, std::uint64_t seed);

ModelConfig make_model_config(const RunConfig& cfg, std::size_t input_dim,
                              std::size_t num_classes);
ProtocolConfig make_protocol_config(const RunConfig& cfg);

const char* proto_mode_name(ProtoMode mode);
const char* classifier_kind_name(ClassifierKind kind);

}  // namespace ocpl
