#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "mlt/core.hpp"

namespace mlt {

/// Anatomical lobe assignment; six cortical lobes plus subcortex.
enum class Lobe { frontal, insula, temporal, occipital, parietal, limbic, subcortical };

inline constexpr std::array<const char*, 7> lobe_names = {
    "frontal", "insula", "temporal", "occipital", "parietal", "limbic", "subcortical"};

inline const char* to_string(Lobe l) { return lobe_names[static_cast<int>(l)]; }

inline Lobe lobe_from_string(const std::string& s) {
    for (std::size_t i = 0; i < lobe_names.size(); ++i)
        if (s == lobe_names[i]) return static_cast<Lobe>(i);
    throw invariant_error("unknown lobe name: '" + s + "'");
}

enum class Hemisphere { left, right };

struct Region {
    int index = 0;
    std::string label;
    Lobe lobe = Lobe::frontal;
    Eigen::Vector3d sphere_xyz = Eigen::Vector3d::Zero();
};

/// Parcellation metadata: region labels, lobe assignment, and unit-sphere
/// coordinates used by the spin-permutation null model. Regions are kept
/// sorted by index; construction validates all invariants.
class ParcellationAtlas {
public:
    ParcellationAtlas() = default;

    explicit ParcellationAtlas(std::vector<Region> regions) : regions_(std::move(regions)) {
        std::sort(regions_.begin(), regions_.end(),
                  [](const Region& a, const Region& b) { return a.index < b.index; });
        validate();
    }

    int n() const { return static_cast<int>(regions_.size()); }
    const std::vector<Region>& regions() const { return regions_; }
    const Region& region(int i) const { return regions_.at(static_cast<std::size_t>(i)); }

    /// N x 3 matrix of sphere coordinates in index order.
    Eigen::MatrixXd coordinates() const {
        Eigen::MatrixXd coords(n(), 3);
        for (int i = 0; i < n(); ++i) coords.row(i) = regions_[static_cast<std::size_t>(i)].sphere_xyz.transpose();
        return coords;
    }

    std::vector<Lobe> lobes() const {
        std::vector<Lobe> out(regions_.size());
        for (std::size_t i = 0; i < regions_.size(); ++i) out[i] = regions_[i].lobe;
        return out;
    }

    /// Hemisphere from the label prefix ('L'/'R', case-insensitive), falling
    /// back to the sign of the x coordinate when the label is uninformative.
    Hemisphere hemisphere(int i) const {
        const Region& r = region(i);
        if (!r.label.empty()) {
            char c = static_cast<char>(std::toupper(static_cast<unsigned char>(r.label[0])));
            if (c == 'L') return Hemisphere::left;
            if (c == 'R') return Hemisphere::right;
        }
        return r.sphere_xyz.x() < 0.0 ? Hemisphere::left : Hemisphere::right;
    }

private:
    void validate() const {
        for (std::size_t i = 0; i < regions_.size(); ++i) {
            const Region& r = regions_[i];
            if (r.index != static_cast<int>(i))
                throw invariant_error("atlas indices must be a contiguous permutation of 0..N-1; missing index " +
                                      std::to_string(i));
            double norm = r.sphere_xyz.norm();
            if (std::abs(norm - 1.0) > 1e-9)
                throw invariant_error("atlas region " + std::to_string(r.index) + " ('" + r.label +
                                      "') has non-unit sphere coordinate, |xyz| = " + std::to_string(norm));
        }
    }

    std::vector<Region> regions_;
};

}  // namespace mlt
