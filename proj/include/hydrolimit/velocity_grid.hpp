#pragma once

#include <cstddef>

#include "hydrolimit/common.hpp"

namespace hydrolimit {

// Uniform cell-centred lattice on center + [-L, L]^3, row-major (i, j, k).
class VelocityGrid {
public:
    VelocityGrid() = default;
    VelocityGrid(double half_width, int n_per_axis, Vec3 center = {0.0, 0.0, 0.0});

    double half_width() const { return L_; }
    int n() const { return n_; }
    std::size_t size() const { return static_cast<std::size_t>(n_) * n_ * n_; }
    double spacing() const { return h_; }
    double weight() const { return h_ * h_ * h_; }
    double total_weight() const { return weight() * static_cast<double>(size()); }
    const Vec3& center() const { return center_; }

    double coord(int axis, int i) const { return center_[axis] + h_ * (i + 0.5 - 0.5 * n_); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * n_ + j) * n_ + k;
    }
    Vec3 node(std::size_t idx) const;

    // Trilinear stencil with zero ghost values outside the lattice. Returns the
    // number of in-lattice corners written to idx/w (at most 8).
    int stencil(const Vec3& p, std::size_t* idx, double* w) const;
    double interpolate(const Field& f, const Vec3& p) const;

    double integrate(const Field& f) const;
    double inner(const Field& f, const Field& g) const;

    Field sample(const auto& fn) const {
        Field out(size());
        for (std::size_t q = 0; q < out.size(); ++q) out[q] = fn(node(q));
        return out;
    }

private:
    double L_ = 1.0;
    int n_ = 1;
    double h_ = 2.0;
    Vec3 center_{0.0, 0.0, 0.0};
};

}  // namespace hydrolimit
