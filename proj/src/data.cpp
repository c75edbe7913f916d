#include "ocpl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

namespace {

// rng stream salts (see rng.hpp for the mixing rule)
constexpr std::uint64_t kSaltCenters = 0x63656e74;   // center rejection stream
constexpr std::uint64_t kSaltClass = 0x73616d70;     // + class index per class
constexpr std::uint64_t kSaltHoldout = 0x686f6c64;   // + label per class

}  // namespace

void FeatureDataset::add(Vec feature, std::size_t label) {
    if (samples.empty() && feature_dim == 0) {
        feature_dim = feature.size();
    }
    if (feature.size() != feature_dim) {
        throw std::invalid_argument("FeatureDataset: feature size " +
                                    std::to_string(feature.size()) +
                                    " != feature_dim " +
                                    std::to_string(feature_dim));
    }
    class_labels.insert(label);
    samples.push_back(Sample{std::move(feature), label});
}

void FeatureDataset::validate() const {
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        if (s.feature.size() != feature_dim) {
            throw std::invalid_argument("FeatureDataset: sample " +
                                        std::to_string(i) + " has dimension " +
                                        std::to_string(s.feature.size()));
        }
        if (!all_finite(s.feature)) {
            throw NumericError("FeatureDataset: non-finite feature in sample " +
                               std::to_string(i));
        }
        seen.insert(s.label);
    }
    if (seen != class_labels) {
        throw std::invalid_argument(
            "FeatureDataset: class_labels out of sync with samples");
    }
}

FeatureDataset gen_gaussian_blobs(std::size_t num_classes,
                                  std::size_t samples_per_class,
                                  std::size_t feature_dim, double center_spread,
                                  double cluster_std, std::uint64_t seed) {
    if (num_classes < 1 || samples_per_class < 1 || feature_dim < 1) {
        throw std::invalid_argument("gen_gaussian_blobs: counts must be >= 1");
    }
    if (center_spread <= 0.0 || cluster_std <= 0.0) {
        throw std::invalid_argument(
            "gen_gaussian_blobs: center_spread and cluster_std must be > 0");
    }

    std::vector<Vec> centers;
    centers.reserve(num_classes);
    {
        auto eng = make_engine(seed, kSaltCenters);
        std::uniform_real_distribution<double> unif(-center_spread, center_spread);
        const double min_dist = 2.0 * cluster_std;
        std::size_t attempts = 0;
        while (centers.size() < num_classes) {
            if (++attempts > 10000) {
                throw ConfigError(
                    "gen_gaussian_blobs: could not place " +
                    std::to_string(num_classes) +
                    " centers with pairwise distance >= " +
                    format_g17(min_dist) + " after 10000 attempts; "
                    "center_spread " + format_g17(center_spread) +
                    " is too small for cluster_std " + format_g17(cluster_std));
            }
            Vec candidate(feature_dim);
            for (double& v : candidate) v = unif(eng);
            bool ok = true;
            for (const Vec& c : centers) {
                double sq = 0.0;
                for (std::size_t i = 0; i < feature_dim; ++i) {
                    const double diff = candidate[i] - c[i];
                    sq += diff * diff;
                }
                if (std::sqrt(sq) < min_dist) {
                    ok = false;
                    break;
                }
            }
            if (ok) centers.push_back(std::move(candidate));
        }
    }

    FeatureDataset dataset;
    dataset.feature_dim = feature_dim;
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto eng = make_engine(seed, kSaltClass + k);
        std::normal_distribution<double> noise(0.0, cluster_std);
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            Vec f(feature_dim);
            for (std::size_t i = 0; i < feature_dim; ++i) {
                f[i] = centers[k][i] + noise(eng);
            }
            dataset.add(std::move(f), k);
        }
    }
    return dataset;
}

FeatureDataset gen_ring_vs_blob(std::size_t samples_per_class,
                                std::size_t feature_dim, double r_inner,
                                double r_outer, double blob_std,
                                std::uint64_t seed) {
    if (samples_per_class < 1) {
        throw std::invalid_argument("gen_ring_vs_blob: samples_per_class >= 1");
    }
    if (feature_dim < 2) {
        throw std::invalid_argument("gen_ring_vs_blob: feature_dim must be >= 2");
    }
    if (!(0.0 < r_inner && r_inner < r_outer)) {
        throw std::invalid_argument(
            "gen_ring_vs_blob: need 0 < r_inner < r_outer");
    }
    if (blob_std <= 0.0) {
        throw std::invalid_argument("gen_ring_vs_blob: blob_std must be > 0");
    }

    FeatureDataset dataset;
    dataset.feature_dim = feature_dim;
    {
        auto eng = make_engine(seed, kSaltClass + 0);
        std::uniform_real_distribution<double> radius(r_inner, r_outer);
        std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
        std::normal_distribution<double> noise(0.0, blob_std);
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            Vec f(feature_dim, 0.0);
            const double r = radius(eng);
            const double a = angle(eng);
            f[0] = r * std::cos(a);
            f[1] = r * std::sin(a);
            for (std::size_t i = 2; i < feature_dim; ++i) f[i] = noise(eng);
            dataset.add(std::move(f), 0);
        }
    }
    {
        auto eng = make_engine(seed, kSaltClass + 1);
        std::normal_distribution<double> noise(0.0, blob_std);
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            Vec f(feature_dim);
            for (double& v : f) v = noise(eng);
            dataset.add(std::move(f), 1);
        }
    }
    return dataset;
}

std::string dataset_to_csv(const FeatureDataset& dataset) {
    std::string out;
    for (std::size_t i = 0; i < dataset.feature_dim; ++i) {
        out += "feature_" + std::to_string(i) + ",";
    }
    out += "label\n";
    for (const Sample& s : dataset.samples) {
        for (double v : s.feature) {
            out += format_g17(v);
            out += ',';
        }
        out += std::to_string(s.label);
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            cells.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return cells;
}

[[noreturn]] void csv_error(const std::string& origin, std::size_t line_no,
                            const std::string& what) {
    throw IoError(origin + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

FeatureDataset dataset_from_csv_text(const std::string& text,
                                     const std::string& origin) {
    std::vector<std::string_view> lines;
    {
        std::string_view rest = text;
        while (!rest.empty()) {
            const std::size_t nl = rest.find('\n');
            std::string_view line =
                nl == std::string_view::npos ? rest : rest.substr(0, nl);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            lines.push_back(line);
            if (nl == std::string_view::npos) break;
            rest.remove_prefix(nl + 1);
        }
        // A trailing newline yields one empty trailing line; drop it.
        while (!lines.empty() && lines.back().empty()) lines.pop_back();
    }
    if (lines.empty()) {
        throw IoError(origin + ": empty file (missing header)");
    }

    const std::vector<std::string_view> header = split_cells(lines[0]);
    if (header.size() < 2 || header.back() != "label") {
        csv_error(origin, 1, "header must be feature_0,...,feature_{n-1},label");
    }
    const std::size_t feature_dim = header.size() - 1;
    for (std::size_t i = 0; i < feature_dim; ++i) {
        if (header[i] != "feature_" + std::to_string(i)) {
            csv_error(origin, 1,
                      "header cell " + std::to_string(i) + " is '" +
                          std::string(header[i]) + "', expected 'feature_" +
                          std::to_string(i) + "'");
        }
    }

    FeatureDataset dataset;
    dataset.feature_dim = feature_dim;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const std::size_t line_no = li + 1;
        if (lines[li].empty()) {
            csv_error(origin, line_no, "blank row");
        }
        const std::vector<std::string_view> cells = split_cells(lines[li]);
        if (cells.size() != feature_dim + 1) {
            csv_error(origin, line_no,
                      "expected " + std::to_string(feature_dim + 1) +
                          " cells, got " + std::to_string(cells.size()));
        }
        Vec f(feature_dim);
        for (std::size_t c = 0; c < feature_dim; ++c) {
            const std::string_view cell = cells[c];
            double v = 0.0;
            const auto [ptr, ec] =
                std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                csv_error(origin, line_no,
                          "cell " + std::to_string(c) + " ('" +
                              std::string(cell) + "') is not a number");
            }
            if (!std::isfinite(v)) {
                csv_error(origin, line_no,
                          "cell " + std::to_string(c) + " is not finite");
            }
            f[c] = v;
        }
        const std::string_view cell = cells[feature_dim];
        std::size_t label = 0;
        const auto [ptr, ec] =
            std::from_chars(cell.data(), cell.data() + cell.size(), label);
        if (ec != std::errc() || ptr != cell.data() + cell.size()) {
            csv_error(origin, line_no,
                      "label ('" + std::string(cell) +
                          "') is not a nonnegative integer");
        }
        dataset.add(std::move(f), label);
    }
    return dataset;
}

void save_csv(const FeatureDataset& dataset, const std::string& path) {
    atomic_write_file(path, dataset_to_csv(dataset));
}

FeatureDataset load_csv(const std::string& path) {
    return dataset_from_csv_text(read_file(path), path);
}

FeatureDataset filter_by_labels(const FeatureDataset& dataset,
                                const std::set<std::size_t>& labels) {
    FeatureDataset out;
    out.feature_dim = dataset.feature_dim;
    for (const Sample& s : dataset.samples) {
        if (labels.count(s.label)) {
            out.add(s.feature, s.label);
        }
    }
    if (out.samples.empty()) {
        throw std::invalid_argument(
            "filter_by_labels: no sample carries any requested label");
    }
    return out;
}

std::pair<FeatureDataset, FeatureDataset> holdout_split(
    const FeatureDataset& dataset, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("holdout_split: fraction must be in (0, 1)");
    }
    // false = train, true = holdout; decided per class, emitted in input order.
    std::vector<bool> to_holdout(dataset.samples.size(), false);
    for (std::size_t label : dataset.class_labels) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
            if (dataset.samples[i].label == label) idx.push_back(i);
        }
        const std::size_t n = idx.size();
        std::size_t take =
            static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
        if (n >= 2) {
            take = std::clamp<std::size_t>(take, 1, n - 1);
        } else {
            take = 0;  // a singleton class stays in the train side
        }
        auto eng = make_engine(seed, kSaltHoldout + label);
        std::shuffle(idx.begin(), idx.end(), eng);
        for (std::size_t i = 0; i < take; ++i) to_holdout[idx[i]] = true;
    }

    FeatureDataset train, holdout;
    train.feature_dim = dataset.feature_dim;
    holdout.feature_dim = dataset.feature_dim;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        (to_holdout[i] ? holdout : train)
            .add(dataset.samples[i].feature, dataset.samples[i].label);
    }
    return {std::move(train), std::move(holdout)};
}

}  // namespace ocpl
