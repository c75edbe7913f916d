#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ocpl/core_math.hpp"

namespace ocpl {

struct Sample {
    Vec feature;
    std::size_t label = 0;
};

// In-memory feature table. Labels are free-form nonnegative integers; modules
// that need contiguous [0, K) ids (the trainer) remap through a label table.
struct FeatureDataset {
    std::vector<Sample> samples;
    std::size_t feature_dim = 0;
    std::set<std::size_t> class_labels;

    std::size_t size() const { return samples.size(); }
    void add(Vec feature, std::size_t label);
    std::vector<std::size_t> labels_sorted() const {
        return {class_labels.begin(), class_labels.end()};
    }
    void validate() const;  // uniform finite features, label set consistent
};

/// Well-separated Gaussian clusters: centers drawn uniformly in
/// [-center_spread, center_spread]^feature_dim, redrawn until all pairwise
/// center distances are >= 2*cluster_std (spread-too-small error after 10000
/// attempts), then samples_per_class Gaussian draws per class. Per-class
/// sample streams are seeded with mix_seed(seed, class_salt + class index).
FeatureDataset gen_gaussian_blobs(std::size_t num_classes,
                                  std::size_t samples_per_class,
                                  std::size_t feature_dim, double center_spread,
                                  double cluster_std, std::uint64_t seed);

/// Non-Gaussian stressor: class 0 is an annulus in the first two feature
/// coordinates (in-plane radius uniform in [r_inner, r_outer], remaining
/// coordinates Gaussian), class 1 a Gaussian blob inside the hole at the
/// origin. A single center cannot summarize the ring, which is the point.
FeatureDataset gen_ring_vs_blob(std::size_t samples_per_class,
                                std::size_t feature_dim, double r_inner,
                                double r_outer, double blob_std,
                                std::uint64_t seed);

/// CSV with header feature_0,...,feature_{n-1},label; floats rendered with 17
/// significant digits so load(save(D)) == D exactly.
std::string dataset_to_csv(const FeatureDataset& dataset);
FeatureDataset dataset_from_csv_text(const std::string& text,
                                     const std::string& origin = "<string>");
void save_csv(const FeatureDataset& dataset, const std::string& path);
FeatureDataset load_csv(const std::string& path);

/// Keeps exactly the samples whose label is in `labels`. Throws when the
/// result would be empty.
FeatureDataset filter_by_labels(const FeatureDataset& dataset,
                                const std::set<std::size_t>& labels);

/// Deterministic stratified split; second element holds ~fraction of each
/// class (at least 1 and at most n-1 per class when a class has >= 2 samples).
std::pair<FeatureDataset, FeatureDataset> holdout_split(
    const FeatureDataset& dataset, double fraction, std::uint64_t seed);

}  // namespace ocpl
