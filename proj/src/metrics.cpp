#include "ocpl/metrics.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string_view>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"

namespace ocpl {

std::size_t ConfusionMatrix::row_sum(std::size_t r) const {
    std::size_t sum = 0;
    for (std::size_t c = 0; c < cols(); ++c) sum += at(r, c);
    return sum;
}

std::size_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::string decision_name(Decision d) {
    switch (d) {
        case Decision::Known:
            return "known";
        case Decision::Unknown:
            return "unknown";
        case Decision::Filtered:
            return "filtered";
    }
    throw std::invalid_argument("decision_name: invalid decision value");
}

Decision decision_from_name(const std::string& name) {
    if (name == "known") return Decision::Known;
    if (name == "unknown") return Decision::Unknown;
    if (name == "filtered") return Decision::Filtered;
    throw std::invalid_argument("unrecognized decision '" + name + "'");
}

std::string dump_to_csv(const PredictionDump& dump) {
    std::string out =
        "sample_id,true_label,decision,top_known_class,top_known_posterior,"
        "max_class_score\n";
    for (const DumpRow& r : dump) {
        out += std::to_string(r.sample_id);
        out += ',';
        out += std::to_string(r.true_label);
        out += ',';
        out += decision_name(r.decision);
        out += ',';
        out += std::to_string(r.top_known_class);
        out += ',';
        out += format_g17(r.top_known_posterior);
        out += ',';
        out += format_g17(r.max_class_score);
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string_view> split_lines(const std::string& text) {
    std::vector<std::string_view> lines;
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
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

std::vector<std::string_view> split_commas(std::string_view line) {
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

template <typename T>
T parse_number(std::string_view cell, const std::string& origin,
               std::size_t line_no, const char* what) {
    T v{};
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw IoError(origin + ":" + std::to_string(line_no) + ": " + what +
                      " ('" + std::string(cell) + "') is not valid");
    }
    return v;
}

}  // namespace

PredictionDump dump_from_csv_text(const std::string& text,
                                  const std::string& origin) {
    const std::vector<std::string_view> lines = split_lines(text);
    if (lines.empty()) {
        throw IoError(origin + ": empty prediction dump");
    }
    const std::string expected_header =
        "sample_id,true_label,decision,top_known_class,top_known_posterior,"
        "max_class_score";
    if (lines[0] != expected_header) {
        throw IoError(origin + ":1: unexpected header '" + std::string(lines[0]) +
                      "'");
    }
    PredictionDump dump;
    dump.reserve(lines.size() - 1);
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const std::size_t line_no = li + 1;
        const auto cells = split_commas(lines[li]);
        if (cells.size() != 6) {
            throw IoError(origin + ":" + std::to_string(line_no) +
                          ": expected 6 cells, got " +
                          std::to_string(cells.size()));
        }
        DumpRow row;
        row.sample_id = parse_number<std::size_t>(cells[0], origin, line_no,
                                                  "sample_id");
        row.true_label = parse_number<std::int64_t>(cells[1], origin, line_no,
                                                    "true_label");
        if (row.true_label < kUnknownLabel) {
            throw IoError(origin + ":" + std::to_string(line_no) +
                          ": true_label below the unknown marker");
        }
        try {
            row.decision = decision_from_name(std::string(cells[2]));
        } catch (const std::invalid_argument& e) {
            throw IoError(origin + ":" + std::to_string(line_no) + ": " +
                          e.what());
        }
        row.top_known_class = parse_number<std::size_t>(cells[3], origin, line_no,
                                                        "top_known_class");
        row.top_known_posterior = parse_number<double>(
            cells[4], origin, line_no, "top_known_posterior");
        row.max_class_score =
            parse_number<double>(cells[5], origin, line_no, "max_class_score");
        dump.push_back(row);
    }
    return dump;
}

void save_dump(const PredictionDump& dump, const std::string& path) {
    atomic_write_file(path, dump_to_csv(dump));
}

PredictionDump load_dump(const std::string& path) {
    return dump_from_csv_text(read_file(path), path);
}

ConfusionMatrix build_confusion(const PredictionDump& dump,
                                std::size_t num_known) {
    ConfusionMatrix m(num_known);
    for (const DumpRow& r : dump) {
        std::size_t row;
        if (r.true_label == kUnknownLabel) {
            row = m.unknown_row();
        } else if (r.true_label >= 0 &&
                   static_cast<std::size_t>(r.true_label) < num_known) {
            row = static_cast<std::size_t>(r.true_label);
        } else {
            throw std::invalid_argument("build_confusion: true label " +
                                        std::to_string(r.true_label) +
                                        " outside [0, " +
                                        std::to_string(num_known) + ")");
        }
        std::size_t col;
        switch (r.decision) {
            case Decision::Known:
                if (r.top_known_class >= num_known) {
                    throw std::invalid_argument(
                        "build_confusion: predicted class " +
                        std::to_string(r.top_known_class) + " outside [0, " +
                        std::to_string(num_known) + ")");
                }
                col = r.top_known_class;
                break;
            case Decision::Unknown:
                col = m.unknown_col();
                break;
            case Decision::Filtered:
                col = m.filtered_col();
                break;
            default:
                throw std::invalid_argument("build_confusion: bad decision");
        }
        ++m.at(row, col);
    }
    return m;
}

std::optional<double> unknown_recall(const ConfusionMatrix& confusion) {
    const std::size_t row = confusion.unknown_row();
    const std::size_t total = confusion.row_sum(row);
    const std::size_t filtered = confusion.at(row, confusion.filtered_col());
    if (total == 0 || total == filtered) {
        return std::nullopt;
    }
    return static_cast<double>(confusion.at(row, confusion.unknown_col())) /
           static_cast<double>(total - filtered);
}

std::size_t a_ose(const ConfusionMatrix& confusion) {
    std::size_t sum = 0;
    for (std::size_t c = 0; c < confusion.num_known; ++c) {
        sum += confusion.at(confusion.unknown_row(), c);
    }
    return sum;
}

namespace {

// Precision of known-class decisions within one pass: correct known
// assignments over all known assignments. nullopt when there are none.
std::optional<double> known_precision(const PredictionDump& dump) {
    std::size_t assigned = 0;
    std::size_t correct = 0;
    for (const DumpRow& r : dump) {
        if (r.decision != Decision::Known) continue;
        ++assigned;
        if (r.true_label >= 0 &&
            static_cast<std::size_t>(r.true_label) == r.top_known_class) {
            ++correct;
        }
    }
    if (assigned == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(assigned);
}

}  // namespace

PredictionDump known_true_subset(const PredictionDump& dump) {
    PredictionDump out;
    for (const DumpRow& r : dump) {
        if (r.true_label != kUnknownLabel) out.push_back(r);
    }
    return out;
}

std::optional<double> wildness_impact(const PredictionDump& closed,
                                      const PredictionDump& open) {
    const std::optional<double> p_closed = known_precision(closed);
    const std::optional<double> p_open = known_precision(open);
    if (!p_closed || !p_open || *p_open == 0.0) {
        return std::nullopt;
    }
    return *p_closed / *p_open - 1.0;
}

GroupedAccuracy grouped_accuracy(const ConfusionMatrix& confusion,
                                 const std::set<std::size_t>& previous,
                                 const std::set<std::size_t>& current) {
    for (std::size_t k : previous) {
        if (current.count(k)) {
            throw std::invalid_argument(
                "grouped_accuracy: class " + std::to_string(k) +
                " appears in both the previous and current group");
        }
    }
    auto macro = [&confusion](const std::set<std::size_t>& group)
        -> std::optional<double> {
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t k : group) {
            if (k >= confusion.num_known) {
                throw std::invalid_argument("grouped_accuracy: class " +
                                            std::to_string(k) +
                                            " outside the confusion matrix");
            }
            const std::size_t denom =
                confusion.row_sum(k) - confusion.at(k, confusion.filtered_col());
            if (denom == 0) continue;
            sum += static_cast<double>(confusion.at(k, k)) /
                   static_cast<double>(denom);
            ++used;
        }
        if (used == 0) return std::nullopt;
        return sum / static_cast<double>(used);
    };

    GroupedAccuracy acc;
    acc.previous = macro(previous);
    acc.current = macro(current);
    std::set<std::size_t> both = previous;
    both.insert(current.begin(), current.end());
    acc.both = macro(both);
    return acc;
}

Compactness compactness(const ModelParams& params,
                        const FeatureDataset& dataset) {
    if (dataset.samples.empty()) {
        throw std::invalid_argument("compactness: empty dataset");
    }
    const std::size_t num_classes = params.num_classes();
    const std::size_t d = params.embed_dim();
    for (std::size_t label : dataset.class_labels) {
        if (label >= num_classes) {
            throw std::invalid_argument("compactness: dataset label " +
                                        std::to_string(label) +
                                        " outside model range");
        }
    }

    Compactness result;
    double de_sum = 0.0;
    for (const Sample& s : dataset.samples) {
        const ForwardResult fwd = forward(params, s.feature);
        de_sum += euclidean_sq_scaled(fwd.embedding,
                                      params.protos.centers.row(s.label), d);
    }
    result.mean_intra_de = de_sum / static_cast<double>(dataset.samples.size());

    double inter_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < num_classes; ++i) {
        for (std::size_t j = i + 1; j < num_classes; ++j) {
            inter_sum += euclidean_sq_scaled(params.protos.centers.row(i),
                                             params.protos.centers.row(j), d);
            ++pairs;
        }
    }
    result.mean_inter_center_dist =
        pairs == 0 ? 0.0 : inter_sum / static_cast<double>(pairs);
    return result;
}

PredictionDump rethreshold(const PredictionDump& dump, double xi) {
    if (!(xi >= 0.0 && xi <= 1.0)) {
        throw std::invalid_argument("rethreshold: xi must be in [0, 1]");
    }
    PredictionDump out = dump;
    for (DumpRow& r : out) {
        if (r.decision == Decision::Filtered) continue;  // gamma already applied
        r.decision = r.top_known_posterior >= xi ? Decision::Known
                                                 : Decision::Unknown;
    }
    return out;
}

MetricsReport make_report(const PredictionDump& dump, std::size_t num_known,
                          const std::set<std::size_t>& previous,
                          const std::set<std::size_t>& current) {
    MetricsReport report;
    report.confusion = build_confusion(dump, num_known);
    report.ur = unknown_recall(report.confusion);
    report.a_ose = a_ose(report.confusion);
    report.wi = wildness_impact(known_true_subset(dump), dump);
    const GroupedAccuracy acc = grouped_accuracy(report.confusion, previous,
                                                 current);
    report.acc_previous = acc.previous;
    report.acc_current = acc.current;
    report.acc_both = acc.both;
    return report;
}

nlohmann::ordered_json report_to_json(const MetricsReport& report) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["ur"] = opt(report.ur);
    j["wi"] = opt(report.wi);
    j["a_ose"] = report.a_ose;
    j["acc_previous"] = opt(report.acc_previous);
    j["acc_current"] = opt(report.acc_current);
    j["acc_both"] = opt(report.acc_both);
    j["mean_intra_de"] = report.mean_intra_de;
    j["mean_inter_center_dist"] = report.mean_inter_center_dist;

    nlohmann::ordered_json confusion;
    confusion["num_known"] = report.confusion.num_known;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < report.confusion.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t c = 0; c < report.confusion.cols(); ++c) {
            row.push_back(report.confusion.at(r, c));
        }
        rows.push_back(std::move(row));
    }
    confusion["rows"] = std::move(rows);
    j["confusion"] = std::move(confusion);
    return j;
}

}  // namespace ocpl
