#include "ocpl/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ocpl {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                          "#bcbd22", "#17becf"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);
const char* kUnknownColor = "#555555";
const char* kFilteredColor = "#cccccc";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string render_embedding_svg(const ModelParams& params,
                                 const FeatureDataset& dataset,
                                 const InferenceConfig& infer_cfg,
                                 const PlotOptions& opts) {
    if (dataset.samples.empty()) {
        throw std::invalid_argument("render_embedding_svg: empty dataset");
    }
    const std::size_t d = params.embed_dim();
    if (d < 2) {
        throw std::invalid_argument(
            "render_embedding_svg: needs an embedding dimension of at least 2");
    }

    struct Point {
        double x, y;
        Decision decision;
        std::size_t cls;
    };
    std::vector<Point> points;
    points.reserve(dataset.samples.size());
    for (const Sample& s : dataset.samples) {
        const Prediction pred = infer(params, s.feature, infer_cfg);
        points.push_back(Point{pred.embedding[0], pred.embedding[1],
                               pred.decision, pred.known_class});
    }

    const double circle_r = std::sqrt(static_cast<double>(d) *
                                      params.protos.radius);

    // Data bounds cover every point plus each center's radius circle.
    double min_x = points[0].x, max_x = points[0].x;
    double min_y = points[0].y, max_y = points[0].y;
    for (const Point& p : points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    for (std::size_t k = 0; k < params.num_classes(); ++k) {
        const auto c = params.protos.centers.row(k);
        min_x = std::min(min_x, c[0] - circle_r);
        max_x = std::max(max_x, c[0] + circle_r);
        min_y = std::min(min_y, c[1] - circle_r);
        max_y = std::max(max_y, c[1] + circle_r);
    }
    const double span_x = std::max(max_x - min_x, 1e-9);
    const double span_y = std::max(max_y - min_y, 1e-9);
    const double scale = std::min((opts.width - 2 * opts.margin) / span_x,
                                  (opts.height - 2 * opts.margin) / span_y);
    auto sx = [&](double x) { return opts.margin + (x - min_x) * scale; };
    auto sy = [&](double y) { return opts.height - opts.margin - (y - min_y) * scale; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           fmt(opts.width) + "\" height=\"" + fmt(opts.height) +
           "\" viewBox=\"0 0 " + fmt(opts.width) + " " + fmt(opts.height) +
           "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (std::size_t k = 0; k < params.num_classes(); ++k) {
        const auto c = params.protos.centers.row(k);
        if (circle_r > 0.0) {
            svg += "<circle cx=\"" + fmt(sx(c[0])) + "\" cy=\"" + fmt(sy(c[1])) +
                   "\" r=\"" + fmt(circle_r * scale) + "\" fill=\"none\" stroke=\"" +
                   kPalette[k % kPaletteSize] +
                   "\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";
        }
    }

    for (const Point& p : points) {
        const char* color = kFilteredColor;
        if (p.decision == Decision::Known) {
            color = kPalette[p.cls % kPaletteSize];
        } else if (p.decision == Decision::Unknown) {
            color = kUnknownColor;
        }
        svg += "<circle cx=\"" + fmt(sx(p.x)) + "\" cy=\"" + fmt(sy(p.y)) +
               "\" r=\"" + fmt(opts.point_radius) + "\" fill=\"" + color +
               "\" fill-opacity=\"0.6\"/>\n";
    }

    const double arm = opts.point_radius * 2.5;
    for (std::size_t k = 0; k < params.num_classes(); ++k) {
        const auto c = params.protos.centers.row(k);
        const double cx = sx(c[0]);
        const double cy = sy(c[1]);
        svg += "<path d=\"M " + fmt(cx - arm) + " " + fmt(cy) + " L " +
               fmt(cx + arm) + " " + fmt(cy) + " M " + fmt(cx) + " " +
               fmt(cy - arm) + " L " + fmt(cx) + " " + fmt(cy + arm) +
               "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }

    svg += "</svg>\n";
    return svg;
}

}  // namespace ocpl
