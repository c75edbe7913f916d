#include "ocpl/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ocpl/errors.hpp"

// All kernels accumulate left to right so that repeated runs on one platform
// are bit-identical.

namespace ocpl {

namespace {

void check_dims(std::span<const double> f, std::span<const double> c,
                std::size_t dim, const char* op) {
    if (f.size() != dim || c.size() != dim) {
        throw std::invalid_argument(std::string(op) + ": dimension mismatch (" +
                                    std::to_string(f.size()) + ", " +
                                    std::to_string(c.size()) + ") vs dim " +
                                    std::to_string(dim));
    }
}

}  // namespace

double euclidean_sq_scaled(std::span<const double> f, std::span<const double> c,
                           std::size_t dim) {
    check_dims(f, c, dim, "euclidean_sq_scaled");
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double diff = f[i] - c[i];
        sum += diff * diff;
    }
    return sum / static_cast<double>(dim);
}

double dot_similarity(std::span<const double> f, std::span<const double> c) {
    if (f.size() != c.size()) {
        throw std::invalid_argument("dot_similarity: dimension mismatch (" +
                                    std::to_string(f.size()) + " vs " +
                                    std::to_string(c.size()) + ")");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        sum += f[i] * c[i];
    }
    return sum;
}

double proto_distance(std::span<const double> f, std::span<const double> c,
                      std::size_t dim) {
    check_dims(f, c, dim, "proto_distance");
    return euclidean_sq_scaled(f, c, dim) - dot_similarity(f, c);
}

Vec softmax_neg_distance(std::span<const double> distances) {
    if (distances.empty()) {
        throw std::invalid_argument("softmax_neg_distance: empty input");
    }
    if (!all_finite(distances)) {
        throw std::invalid_argument("softmax_neg_distance: non-finite entry");
    }
    // softmax(-D) shifted by max(-D) = -min(D).
    const double min_d = *std::min_element(distances.begin(), distances.end());
    Vec out(distances.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        out[i] = std::exp(min_d - distances[i]);
        sum += out[i];
    }
    for (double& p : out) {
        p /= sum;
    }
    return out;
}

Vec softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw std::invalid_argument("softmax: empty input");
    }
    if (!all_finite(logits)) {
        throw std::invalid_argument("softmax: non-finite entry");
    }
    const double max_l = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_l);
        sum += out[i];
    }
    for (double& p : out) {
        p /= sum;
    }
    return out;
}

double cosine_similarity(std::span<const double> f, std::span<const double> w) {
    if (f.size() != w.size()) {
        throw std::invalid_argument("cosine_similarity: dimension mismatch (" +
                                    std::to_string(f.size()) + " vs " +
                                    std::to_string(w.size()) + ")");
    }
    const double nf = l2_norm(f);
    const double nw = l2_norm(w);
    if (nf <= kNormEpsilon || nw <= kNormEpsilon) {
        throw NumericError("cosine_similarity: degenerate vector (norm <= 1e-12)");
    }
    const double cs = dot_similarity(f, w) / (nf * nw);
    return std::clamp(cs, -1.0, 1.0);
}

double l2_norm(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) {
        sum += x * x;
    }
    return std::sqrt(sum);
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace ocpl
