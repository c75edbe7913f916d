#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ocpl {

using Vec = std::vector<double>;

// Dense row-major matrix. The project only needs the shapes below (weight
// matrices, prototype center sets), not general tensor algebra.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Vectors whose Euclidean norm is at or below this are rejected as degenerate
// rather than silently renormalized; silent renormalization would hide a
// collapsed embedding during training.
inline constexpr double kNormEpsilon = 1e-12;

/// (1/dim) * squared Euclidean distance between f and c.
/// Throws std::invalid_argument on dimension mismatch.
double euclidean_sq_scaled(std::span<const double> f, std::span<const double> c,
                           std::size_t dim);

/// Plain dot product; may be negative.
double dot_similarity(std::span<const double> f, std::span<const double> c);

/// euclidean_sq_scaled(f, c, dim) - dot_similarity(f, c). Unbounded below.
double proto_distance(std::span<const double> f, std::span<const double> c,
                      std::size_t dim);

/// Softmax over negated distances with max-shift stabilization, so inputs of
/// arbitrary magnitude do not overflow. Output entries sum to 1 within 1e-9.
/// Throws on empty or non-finite input.
Vec softmax_neg_distance(std::span<const double> distances);

/// Stabilized softmax over raw logits.
Vec softmax(std::span<const double> logits);

/// dot(f, w) / (|f| |w|), clamped to [-1, 1] against rounding. Throws
/// NumericError when either norm is at or below kNormEpsilon.
double cosine_similarity(std::span<const double> f, std::span<const double> w);

double l2_norm(std::span<const double> v);

bool all_finite(std::span<const double> v);

}  // namespace ocpl
