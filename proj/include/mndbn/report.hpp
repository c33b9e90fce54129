#pragma once

// File outputs: weight tiles as binary PGM, activation histograms and
// densities as CSV, and accuracy / CPU-time tables as CSV plus aligned text.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mndbn/dbn.hpp"
#include "mndbn/error.hpp"
#include "mndbn/math.hpp"
#include "mndbn/rbm.hpp"

namespace mndbn {

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline std::string format_fixed(double v, int decimals) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(decimals) << v;
    return os.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error(path.string() + ": cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// ---------------------------------------------------------------------------
// Weight tiles

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> pixels;  ///< row-major
};

/// Each hidden unit's weight column as a side x side tile, min-max scaled per
/// tile (constant tiles map to 127), laid out row-major in a rows x cols
/// grid. Slots beyond the hidden count stay black.
inline GrayImage weight_tiles(const Rbm& m, std::size_t grid_rows, std::size_t grid_cols) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m.num_visible()))));
    if (side * side != m.num_visible())
        throw config_error("weight_tiles: visible size " + std::to_string(m.num_visible()) + " is not a perfect square");
    if (grid_rows == 0 || grid_cols == 0) throw config_error("weight_tiles: grid must be at least 1x1");

    GrayImage img{grid_cols * side, grid_rows * side, {}};
    img.pixels.assign(img.width * img.height, 0);
    for (std::size_t t = 0; t < std::min(grid_rows * grid_cols, m.num_hidden()); ++t) {
        double lo = m.w(0, t), hi = m.w(0, t);
        for (std::size_t i = 0; i < m.num_visible(); ++i) {
            lo = std::min(lo, m.w(i, t));
            hi = std::max(hi, m.w(i, t));
        }
        const std::size_t oy = (t / grid_cols) * side;
        const std::size_t ox = (t % grid_cols) * side;
        for (std::size_t i = 0; i < m.num_visible(); ++i) {
            const unsigned char v = hi > lo ? static_cast<unsigned char>(std::lround((m.w(i, t) - lo) / (hi - lo) * 255.0))
                                            : static_cast<unsigned char>(127);
            img.pixels[(oy + i / side) * img.width + ox + i % side] = v;
        }
    }
    return img;
}

/// Binary PGM: "P5\n<width> <height>\n255\n" followed by the raw pixels.
inline std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline GrayImage decode_pgm(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic;
    GrayImage img;
    int maxval = 0;
    in >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255 || !in) throw parse_error("pgm: unsupported header");
    in.get();
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw parse_error("pgm: truncated pixel data");
    return img;
}

inline void write_weight_tiles(const Rbm& m, std::size_t grid_rows, std::size_t grid_cols,
                               const std::filesystem::path& path) {
    write_text_file(path, encode_pgm(weight_tiles(m, grid_rows, grid_cols)));
}

// ---------------------------------------------------------------------------
// Activation histograms

struct Histogram {
    std::vector<double> low;
    std::vector<double> high;
    std::vector<std::size_t> counts;

    [[nodiscard]] std::size_t total() const {
        std::size_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
};

/// Equal-width bins on [0, 1]; a value of exactly 1 lands in the last bin.
inline Histogram histogram01(std::span<const double> values, std::size_t bins) {
    if (bins < 2) throw config_error("histogram: bins must be >= 2");
    Histogram h;
    for (std::size_t b = 0; b < bins; ++b) {
        h.low.push_back(static_cast<double>(b) / static_cast<double>(bins));
        h.high.push_back(static_cast<double>(b + 1) / static_cast<double>(bins));
    }
    h.counts.assign(bins, 0);
    for (double v : values) {
        detail::require(v >= 0.0 && v <= 1.0, "histogram: value outside [0,1]");
        const auto b = std::min(bins - 1, static_cast<std::size_t>(v * static_cast<double>(bins)));
        ++h.counts[b];
    }
    return h;
}

/// Histogram of each hidden unit's mean activation over the batch.
inline Histogram activation_histogram(const Rbm& m, const Matrix& batch, std::size_t bins) {
    detail::require(batch.rows() > 0, "activation_histogram: empty batch");
    return histogram01(col_means(prob_h_given_x(m, batch)), bins);
}

/// Same, for the top layer of a network.
inline Histogram activation_histogram(const Dbn& d, const Matrix& batch, std::size_t bins) {
    detail::require(batch.rows() > 0, "activation_histogram: empty batch");
    return histogram01(col_means(forward(d, batch)), bins);
}

inline std::string histogram_csv(const Histogram& h) {
    std::string out = "bin_low,bin_high,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        out += format_number(h.low[b]) + "," + format_number(h.high[b]) + "," + std::to_string(h.counts[b]) + "\n";
    return out;
}

/// Empirical density of every per-sample activation probability p(h=1|x)
/// (not unit means): density = count / (total * bin_width), with its natural
/// log (empty bins report -inf as "-inf").
inline std::string activation_density_csv(const Rbm& m, const Matrix& batch, std::size_t bins) {
    detail::require(batch.rows() > 0, "activation_density: empty batch");
    const Matrix probs = prob_h_given_x(m, batch);
    const Histogram h = histogram01(probs.flat(), bins);
    const double total = static_cast<double>(h.total());
    const double width = 1.0 / static_cast<double>(bins);
    std::string out = "bin_low,bin_high,density,log_density\n";
    for (std::size_t b = 0; b < bins; ++b) {
        const double dens = static_cast<double>(h.counts[b]) / (total * width);
        out += format_number(h.low[b]) + "," + format_number(h.high[b]) + "," + format_number(dens) + "," +
               (h.counts[b] ? format_number(std::log(dens)) : std::string("-inf")) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Results tables

struct RunRecord {
    std::string architecture;  ///< e.g. "DBN", "MN DBN (20)", "MN w/O DBN (50/20%)"
    std::string dataset;       ///< "MNIST", "USPS", "RIMES"
    double accuracy = 0.0;     ///< fraction in [0, 1]
    double wall_seconds = 0.0;
};

/// Published accuracy (percent) and CPU time (hours) for the full-scale
/// 500-500-2000 models. Times given as lower bounds are marked ">".
struct ReferenceResult {
    std::string_view architecture;
    std::string_view dataset;
    double accuracy_pct;
    std::string_view cpu_time;
};

inline constexpr ReferenceResult reference_results[] = {
    {"DBN", "MNIST", 98.83, "167.90h"},          {"DBN", "RIMES", 99.30, ">60h"},
    {"DBN", "USPS", 94.85, "31.15h"},            {"MN DBN (5)", "MNIST", 97.28, "62.14h"},
    {"MN DBN (5)", "RIMES", 99.24, "33.70h"},    {"MN DBN (5)", "USPS", 92.90, "8.62h"},
    {"MN DBN (10)", "MNIST", 98.83, "66.10h"},   {"MN DBN (10)", "RIMES", 99.33, "40.70h"},
    {"MN DBN (10)", "USPS", 94.70, "10.00h"},    {"MN DBN (20)", "MNIST", 98.77, "70.10h"},
    {"MN DBN (20)", "RIMES", 99.38, "69.80h"},   {"MN DBN (20)", "USPS", 94.65, "12.75h"},
    {"MN DBN (100)", "MNIST", 98.80, "71.50h"},  {"MN DBN (100)", "RIMES", 99.40, "85.80h"},
    {"MN DBN (100)", "USPS", 94.35, "15.85h"},   {"MN w/O DBN (20/20%)", "MNIST", 95.10, ">60h"},
    {"MN w/O DBN (20/20%)", "RIMES", 95.70, "39.27h"}, {"MN w/O DBN (20/20%)", "USPS", 85.05, "10.40h"},
    {"MN w/O DBN (20/50%)", "MNIST", 93.50, ">60h"},   {"MN w/O DBN (20/50%)", "RIMES", 93.62, ">45h"},
    {"MN w/O DBN (20/50%)", "USPS", 80.90, "22.90h"},  {"MN w/O DBN (50/20%)", "MNIST", 96.50, ">60h"},
    {"MN w/O DBN (50/20%)", "RIMES", 97.60, "35.60h"}, {"MN w/O DBN (50/20%)", "USPS", 92.95, "9.56h"},
    {"MN w/O DBN (50/50%)", "MNIST", 95.84, ">70h"},   {"MN w/O DBN (50/50%)", "RIMES", 96.27, ">45h"},
    {"MN w/O DBN (50/50%)", "USPS", 91.35, "24.00h"},
};

inline const ReferenceResult* find_reference(std::string_view architecture, std::string_view dataset) {
    for (const auto& r : reference_results)
        if (r.architecture == architecture && r.dataset == dataset) return &r;
    return nullptr;
}

/// Architecture label in the published table's naming scheme.
inline std::string architecture_tag(std::span<const PenaltySpec> penalties) {
    const PenaltySpec* active = nullptr;
    for (const auto& p : penalties)
        if (p.lambda > 0.0) {
            active = &p;
            break;
        }
    if (!active) return "DBN";
    if (active->overlap_fraction == 0.0) return "MN DBN (" + std::to_string(active->group_size) + ")";
    return "MN w/O DBN (" + std::to_string(active->group_size) + "/" +
           std::to_string(static_cast<long>(std::lround(active->overlap_fraction * 100.0))) + "%)";
}

struct ResultsTable {
    std::string csv;
    std::string text;
};

/// One row per (architecture, dataset) in input order; a repeated pair keeps
/// its last record. Published numbers for the same pair are added as
/// reference columns.
inline ResultsTable results_table(std::span<const RunRecord> records) {
    std::vector<RunRecord> rows;
    for (const auto& r : records) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const RunRecord& x) {
            return x.architecture == r.architecture && x.dataset == r.dataset;
        });
        if (it != rows.end())
            *it = r;
        else
            rows.push_back(r);
    }

    struct Cells {
        std::string arch, data, acc, hours, ref_acc, ref_time;
    };
    std::vector<Cells> cells;
    for (const auto& r : rows) {
        const auto* ref = find_reference(r.architecture, r.dataset);
        cells.push_back({r.architecture, r.dataset, format_fixed(r.accuracy * 100.0, 2),
                         format_fixed(r.wall_seconds / 3600.0, 2), ref ? format_fixed(ref->accuracy_pct, 2) : "",
                         ref ? std::string(ref->cpu_time) : ""});
    }

    ResultsTable t;
    t.csv = "architecture,dataset,accuracy_pct,wall_hours,reference_accuracy_pct,reference_cpu_time\n";
    for (const auto& c : cells)
        t.csv += "\"" + c.arch + "\"," + c.data + "," + c.acc + "," + c.hours + "," + c.ref_acc + "," + c.ref_time + "\n";

    const std::vector<std::string> head{"Architecture", "Dataset", "Accuracy %", "Hours", "Ref. %", "Ref. time"};
    std::vector<std::size_t> width(head.size());
    for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
    for (const auto& c : cells) {
        const std::string* f[] = {&c.arch, &c.data, &c.acc, &c.hours, &c.ref_acc, &c.ref_time};
        for (std::size_t i = 0; i < head.size(); ++i) width[i] = std::max(width[i], f[i]->size());
    }
    auto line = [&](const std::vector<std::string>& f) {
        std::string s;
        for (std::size_t i = 0; i < f.size(); ++i) {
            s += f[i] + std::string(width[i] - f[i].size(), ' ');
            if (i + 1 < f.size()) s += "  ";
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s + "\n";
    };
    t.text = line(head);
    std::size_t total = 0;
    for (auto w : width) total += w;
    t.text += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    for (const auto& c : cells) t.text += line({c.arch, c.data, c.acc, c.hours, c.ref_acc, c.ref_time});
    return t;
}

}  // namespace mndbn
