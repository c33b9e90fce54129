#pragma once

// Digit datasets: IDX (MNIST layout) and USPS text ingestion, bilinear
// resizing into the 28x28 frame, IDX writing, and seeded mini-batch order.
//
// USPS text layout: one image per line, whitespace separated. The first
// token is the digit label (integral, 0-9; "6.0000" is accepted), followed by
// 256 row-major grayscale values in [-1, 1] (the classic zip.train /
// zip.test encoding). Values are mapped to [0, 1] by (v + 1) / 2.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mndbn/error.hpp"
#include "mndbn/math.hpp"

namespace mndbn {

inline constexpr std::size_t frame_side = 28;
inline constexpr std::size_t frame_pixels = frame_side * frame_side;
inline constexpr std::size_t num_classes = 10;

enum class Split { train, test };

struct Dataset {
    Matrix images;  ///< N x 784, every pixel in [0, 1]
    std::vector<std::uint8_t> labels;
    std::string name;
    Split split = Split::train;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }

    /// Throws contract_error unless the invariants hold.
    void validate() const {
        detail::require(images.rows() == labels.size(), "Dataset: image and label counts differ");
        detail::require(images.cols() == frame_pixels, "Dataset: images must be 28x28");
        for (double v : images.flat())
            detail::require(v >= 0.0 && v <= 1.0, "Dataset: pixel outside [0,1] or NaN");
        for (auto l : labels) detail::require(l < num_classes, "Dataset: label out of range");
    }

    /// First n samples (or all, if n exceeds the size).
    [[nodiscard]] Dataset head(std::size_t n) const {
        n = std::min(n, size());
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return {select_rows(images, idx), {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)}, name,
                split};
    }
};

// ---------------------------------------------------------------------------
// Resizing

/// Bilinear interpolation with corner-aligned sampling: output pixel (r, c)
/// samples the source at (r * (H-1)/(H'-1), c * (W-1)/(W'-1)). Results are
/// clamped to [0, 1].
inline Vector resize_bilinear(std::span<const double> img, std::size_t src_h, std::size_t src_w, std::size_t dst_h,
                              std::size_t dst_w) {
    detail::require(img.size() == src_h * src_w, "resize_bilinear: image length must be src_h*src_w");
    detail::require(src_h > 0 && src_w > 0 && dst_h > 0 && dst_w > 0, "resize_bilinear: empty size");
    Vector out(dst_h * dst_w);
    auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
        return dst == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
    };
    for (std::size_t r = 0; r < dst_h; ++r) {
        const double y = coord(r, src_h, dst_h);
        const auto y0 = std::min(static_cast<std::size_t>(std::floor(y)), src_h - 1);
        const std::size_t y1 = std::min(y0 + 1, src_h - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < dst_w; ++c) {
            const double x = coord(c, src_w, dst_w);
            const auto x0 = std::min(static_cast<std::size_t>(std::floor(x)), src_w - 1);
            const std::size_t x1 = std::min(x0 + 1, src_w - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = img[y0 * src_w + x0] * (1.0 - fx) + img[y0 * src_w + x1] * fx;
            const double bot = img[y1 * src_w + x0] * (1.0 - fx) + img[y1 * src_w + x1] * fx;
            out[r * dst_w + c] = std::clamp(top * (1.0 - fy) + bot * fy, 0.0, 1.0);
        }
    }
    return out;
}

/// Resizes every row of an N x (h*w) image matrix into the 28x28 frame.
inline Matrix to_frame(const Matrix& images, std::size_t h, std::size_t w) {
    if (h == frame_side && w == frame_side) return images;
    Matrix out(images.rows(), frame_pixels);
    for (std::size_t r = 0; r < images.rows(); ++r) {
        const Vector v = resize_bilinear(images.row(r), h, w, frame_side, frame_side);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path.string() + ": cannot open");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::filesystem::path& path) {
    if (offset + 4 > buf.size())
        throw parse_error(path.string() + ": truncated header at offset " + std::to_string(offset));
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

}  // namespace detail

struct IdxImages {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Matrix pixels;  ///< count x (rows*cols), scaled to [0,1]
};

inline IdxImages read_idx_images(const std::filesystem::path& path) {
    const auto buf = detail::read_file(path);
    const auto magic = detail::read_be32(buf, 0, path);
    if (magic != detail::idx_images_magic) {
        std::ostringstream msg;
        msg << path.string() << ": bad image magic 0x" << std::hex << magic << " at offset 0 (expected 0x803)";
        throw parse_error(msg.str());
    }
    IdxImages out;
    out.count = detail::read_be32(buf, 4, path);
    out.rows = detail::read_be32(buf, 8, path);
    out.cols = detail::read_be32(buf, 12, path);
    const std::size_t pixels = out.rows * out.cols;
    const std::size_t need = 16 + out.count * pixels;
    if (buf.size() < need)
        throw parse_error(path.string() + ": truncated pixel data at offset " + std::to_string(buf.size()) +
                          " (expected " + std::to_string(need) + " bytes)");
    out.pixels = Matrix(out.count, pixels);
    auto flat = out.pixels.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = static_cast<double>(buf[16 + i]) / 255.0;
    return out;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    const auto buf = detail::read_file(path);
    const auto magic = detail::read_be32(buf, 0, path);
    if (magic != detail::idx_labels_magic) {
        std::ostringstream msg;
        msg << path.string() << ": bad label magic 0x" << std::hex << magic << " at offset 0 (expected 0x801)";
        throw parse_error(msg.str());
    }
    const std::size_t count = detail::read_be32(buf, 4, path);
    if (buf.size() < 8 + count)
        throw parse_error(path.string() + ": truncated label data at offset " + std::to_string(buf.size()));
    std::vector<std::uint8_t> labels(buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(count));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= num_classes)
            throw parse_error(path.string() + ": label " + std::to_string(labels[i]) + " out of range at offset " +
                              std::to_string(8 + i));
    return labels;
}

/// Loads an IDX image/label pair. Images that are not 28x28 are resized
/// bilinearly into the frame.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::string name = "idx", Split split = Split::train) {
    IdxImages img = read_idx_images(images_path);
    auto labels = read_idx_labels(labels_path);
    if (labels.size() != img.count)
        throw parse_error(labels_path.string() + ": " + std::to_string(labels.size()) + " labels at offset 4 but " +
                          images_path.string() + " holds " + std::to_string(img.count) + " images");
    Dataset d{to_frame(img.pixels, img.rows, img.cols), std::move(labels), std::move(name), split};
    return d;
}

/// Writes images (quantized to round(255 * v)) and labels as an IDX pair.
inline void write_idx(const Dataset& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw parse_error("write_idx: cannot open output files");
    detail::write_be32(img, detail::idx_images_magic);
    detail::write_be32(img, static_cast<std::uint32_t>(d.size()));
    detail::write_be32(img, frame_side);
    detail::write_be32(img, frame_side);
    std::vector<char> bytes(d.images.size());
    auto flat = d.images.flat();
    for (std::size_t i = 0; i < flat.size(); ++i)
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(flat[i], 0.0, 1.0) * 255.0)));
    img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

    detail::write_be32(lab, detail::idx_labels_magic);
    detail::write_be32(lab, static_cast<std::uint32_t>(d.size()));
    lab.write(reinterpret_cast<const char*>(d.labels.data()), static_cast<std::streamsize>(d.labels.size()));
}

// ---------------------------------------------------------------------------
// USPS

inline constexpr std::size_t usps_side = 16;

/// Parses the USPS text layout (see the file comment) and resizes to 28x28.
inline Dataset load_usps(std::istream& in, std::string name = "usps", Split split = Split::train) {
    std::vector<double> pixels;
    std::vector<std::uint8_t> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        double label = 0.0;
        if (!(ls >> label)) throw parse_error("usps line " + std::to_string(line_no) + ": missing label");
        if (label != std::floor(label) || label < 0.0 || label >= static_cast<double>(num_classes))
            throw parse_error("usps line " + std::to_string(line_no) + ": label " + std::to_string(label) +
                              " not an integer in 0-9");
        std::size_t count = 0;
        double v = 0.0;
        while (ls >> v) {
            if (!(v >= -1.0 && v <= 1.0))
                throw parse_error("usps line " + std::to_string(line_no) + ": value " + std::to_string(v) +
                                  " outside [-1,1]");
            pixels.push_back((v + 1.0) / 2.0);
            ++count;
        }
        if (!ls.eof())
            throw parse_error("usps line " + std::to_string(line_no) + ": non-numeric token after value " +
                              std::to_string(count));
        if (count != usps_side * usps_side)
            throw parse_error("usps line " + std::to_string(line_no) + ": expected 256 values, found " +
                              std::to_string(count));
        labels.push_back(static_cast<std::uint8_t>(label));
    }
    Matrix raw(labels.size(), usps_side * usps_side, std::move(pixels));
    return {to_frame(raw, usps_side, usps_side), std::move(labels), std::move(name), split};
}

inline Dataset load_usps(const std::filesystem::path& path, Split split = Split::train) {
    std::ifstream in(path);
    if (!in) throw parse_error(path.string() + ": cannot open");
    return load_usps(in, "usps", split);
}

// ---------------------------------------------------------------------------
// Mini-batch order

/// Fisher-Yates permutation of [0, n) drawn from rng.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    return idx;
}

/// One epoch's batches: a fresh seeded permutation cut into chunks of
/// batch_size; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> shuffle_split(std::size_t n, std::size_t batch_size, Rng& rng) {
    detail::require(batch_size > 0, "shuffle_split: batch_size must be positive");
    const auto perm = permutation(n, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t b = 0; b < n; b += batch_size)
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                             perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
    return batches;
}

inline std::vector<std::vector<std::size_t>> shuffle_split(const Dataset& d, std::size_t batch_size, Rng& rng) {
    return shuffle_split(d.size(), batch_size, rng);
}

}  // namespace mndbn
