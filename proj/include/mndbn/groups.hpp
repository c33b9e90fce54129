#pragma once

// Hidden-unit groupings for the mixed-norm penalty.
//
// Overlapping groups are laid out as a sliding window with integral stride
// s = g * (1 - a). Each group gets a private copy of its members on an
// "augmented" axis of length J' = K * g, where the groups are disjoint and
// contiguous. expand() copies real activations onto that axis and
// accumulate() is its adjoint (sums copies back per real unit).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mndbn/error.hpp"
#include "mndbn/math.hpp"

namespace mndbn {

class GroupPartition {
public:
    /// Half-open range [begin, end) on the augmented axis.
    struct Range {
        std::size_t begin;
        std::size_t end;
        bool operator==(const Range&) const = default;
    };

    [[nodiscard]] std::size_t j_original() const noexcept { return j_original_; }
    [[nodiscard]] std::size_t j_augmented() const noexcept { return aug_to_orig_.size(); }
    [[nodiscard]] std::size_t group_size() const noexcept { return group_size_; }
    [[nodiscard]] std::size_t num_groups() const noexcept { return bounds_.size(); }
    [[nodiscard]] double overlap_fraction() const noexcept { return overlap_; }
    [[nodiscard]] std::size_t stride() const noexcept { return stride_; }
    [[nodiscard]] std::span<const std::size_t> aug_to_orig() const noexcept { return aug_to_orig_; }
    [[nodiscard]] std::span<const Range> group_bounds() const noexcept { return bounds_; }

    bool operator==(const GroupPartition&) const = default;

    friend GroupPartition make_overlapping(std::size_t, std::size_t, double);

private:
    std::size_t j_original_ = 0;
    std::size_t group_size_ = 0;
    std::size_t stride_ = 0;
    double overlap_ = 0.0;
    std::vector<std::size_t> aug_to_orig_;
    std::vector<Range> bounds_;
};

/// Sliding-window groups of `group_size` with overlap fraction `a` in [0, 1).
/// a = 0 yields the plain non-overlapping partition with an identity map.
inline GroupPartition make_overlapping(std::size_t j, std::size_t group_size, double overlap_fraction) {
    if (group_size == 0) throw config_error("group_size must be >= 1");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
        throw config_error("overlap fraction must lie in [0, 1), got " + std::to_string(overlap_fraction));
    if (group_size > j)
        throw config_error("group_size " + std::to_string(group_size) + " exceeds layer size " +
                           std::to_string(j));

    const double stride_real = static_cast<double>(group_size) * (1.0 - overlap_fraction);
    const double stride_rounded = std::round(stride_real);
    if (stride_rounded < 1.0 || std::abs(stride_real - stride_rounded) > 1e-9)
        throw config_error("group_size " + std::to_string(group_size) + " with overlap " +
                           std::to_string(overlap_fraction) + " gives non-integral stride " +
                           std::to_string(stride_real));
    const auto stride = static_cast<std::size_t>(stride_rounded);
    if ((j - group_size) % stride != 0) {
        if (overlap_fraction == 0.0)
            throw config_error("group_size " + std::to_string(group_size) + " does not divide layer size " +
                               std::to_string(j));
        throw config_error("layer size " + std::to_string(j) + " minus group_size " +
                           std::to_string(group_size) + " is not divisible by stride " +
                           std::to_string(stride));
    }

    GroupPartition p;
    p.j_original_ = j;
    p.group_size_ = group_size;
    p.stride_ = stride;
    p.overlap_ = overlap_fraction;
    const std::size_t k = (j - group_size) / stride + 1;
    p.aug_to_orig_.reserve(k * group_size);
    p.bounds_.reserve(k);
    for (std::size_t g = 0; g < k; ++g) {
        p.bounds_.push_back({g * group_size, (g + 1) * group_size});
        for (std::size_t m = 0; m < group_size; ++m) p.aug_to_orig_.push_back(g * stride + m);
    }
    return p;
}

/// Contiguous equal-size groups; group_size must divide j.
inline GroupPartition make_nonoverlapping(std::size_t j, std::size_t group_size) {
    if (group_size == 0) throw config_error("group_size must be >= 1");
    if (j % group_size != 0)
        throw config_error("group_size " + std::to_string(group_size) + " does not divide layer size " +
                           std::to_string(j));
    return make_overlapping(j, group_size, 0.0);
}

/// out[t] = h[aug_to_orig[t]]
inline Vector expand(std::span<const double> h, const GroupPartition& p) {
    detail::require(h.size() == p.j_original(), "expand: input length must equal J");
    const auto map = p.aug_to_orig();
    Vector out(map.size());
    for (std::size_t t = 0; t < map.size(); ++t) out[t] = h[map[t]];
    return out;
}

/// Adjoint of expand: out[i] = sum of v[t] over copies t of unit i.
inline Vector accumulate(std::span<const double> v, const GroupPartition& p) {
    detail::require(v.size() == p.j_augmented(), "accumulate: input length must equal J'");
    const auto map = p.aug_to_orig();
    Vector out(p.j_original(), 0.0);
    for (std::size_t t = 0; t < map.size(); ++t) out[map[t]] += v[t];
    return out;
}

}  // namespace mndbn
