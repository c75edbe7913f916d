#pragma once

#include <string>

#include "ocpl/data.hpp"
#include "ocpl/model.hpp"

namespace ocpl {

struct PlotOptions {
    double width = 640.0;
    double height = 640.0;
    double margin = 48.0;
    double point_radius = 3.0;
};

/// Scatter of the dataset's embeddings on the first two embedding coordinates
/// (all of them when d == 2): points colored by the inference decision (known
/// decisions use the predicted class's palette color), prototype centers
/// drawn as crosses, and one circle per center at Euclidean radius
/// sqrt(d * R), the D_e = R level set. Emission is deterministic, so repeated
/// renders are byte-identical.
std::string render_embedding_svg(const ModelParams& params,
                                 const FeatureDataset& dataset,
                                 const InferenceConfig& infer_cfg,
                                 const PlotOptions& opts = {});

}  // namespace ocpl
