#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "angiodiff/core/errors.hpp"
#include "angiodiff/core/image.hpp"
#include "angiodiff/core/rng.hpp"

namespace angiodiff::synth {

// One vessel branch: a polyline in (y, x) with one width per segment.
struct VesselPolyline {
    std::vector<std::array<double, 2>> points;
    std::vector<double> widths;  // points.size() - 1 entries, monotone non-increasing
};

struct VesselMap {
    Image grid;  // H×W binary rasterization of the centerlines
    std::vector<VesselPolyline> centerlines;
    std::array<double, 2> disc_center;  // (row, col)
};

namespace detail {

inline double point_segment_dist(double py, double px, const std::array<double, 2>& a,
                                 const std::array<double, 2>& b) {
    const double vy = b[0] - a[0], vx = b[1] - a[1];
    const double wy = py - a[0], wx = px - a[1];
    const double vv = vy * vy + vx * vx;
    double t = vv > 1e-12 ? (wy * vy + wx * vx) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dy = py - (a[0] + t * vy), dx = px - (a[1] + t * vx);
    return std::hypot(dy, dx);
}

// Stamp max(profile) of every segment into `out`. profile(d, w) must be
// monotone in d; used for both the binary grid and the soft intensity map.
template <typename Profile>
inline void stamp_centerlines(const std::vector<VesselPolyline>& lines, Image& out,
                              Profile&& profile) {
    const int h = out.height(), w = out.width();
    for (const auto& line : lines) {
        for (size_t s = 0; s + 1 < line.points.size(); ++s) {
            const auto& a = line.points[s];
            const auto& b = line.points[s + 1];
            const double half = line.widths[s] * 0.5;
            const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a[0], b[0]) - half - 1)));
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a[0], b[0]) + half + 1)));
            const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a[1], b[1]) - half - 1)));
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a[1], b[1]) + half + 1)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d = point_segment_dist(y, x, a, b);
                    const float v = static_cast<float>(profile(d, line.widths[s]));
                    if (v > out.at(0, y, x)) out.at(0, y, x) = v;
                }
        }
    }
}

struct GrowSpec {
    int height, width;
    double step_len;
    double taper = 0.995;
    double min_width = 0.55;
    int max_depth = 4;
};

inline void grow_branch(const GrowSpec& g, Rng& rng, std::array<double, 2> pos, double angle,
                        double width, double length, int depth,
                        std::vector<VesselPolyline>& out) {
    VesselPolyline line;
    line.points.push_back(pos);
    double remaining = length;
    while (remaining > 0 && width >= g.min_width) {
        angle += rng.normal() * 0.13;
        pos[0] += g.step_len * std::sin(angle);
        pos[1] += g.step_len * std::cos(angle);
        if (pos[0] < 1.5 || pos[0] > g.height - 2.5 || pos[1] < 1.5 || pos[1] > g.width - 2.5)
            break;
        line.points.push_back(pos);
        line.widths.push_back(width);
        width *= g.taper;
        remaining -= g.step_len;
    }
    if (line.points.size() >= 2) out.push_back(line);
    if (depth >= g.max_depth || width < g.min_width * 1.6 || line.points.size() < 2) return;
    if (rng.uniform() < 0.12) return;  // occasional dead end
    const double spread = rng.uniform(0.35, 0.75);
    const double child_len = length * rng.uniform(0.6, 0.8);
    grow_branch(g, rng, pos, angle - spread, width * rng.uniform(0.62, 0.78), child_len,
                depth + 1, out);
    grow_branch(g, rng, pos, angle + spread, width * rng.uniform(0.72, 0.88), child_len,
                depth + 1, out);
}

}  // namespace detail

// Recursive branching tree rooted near the optic-disc analogue. Deterministic
// per seed; re-seeds with denser parameters in the (rare) event the rendered
// vessel fraction leaves [0.01, 0.25].
inline VesselMap generate_vessel_tree(uint64_t seed, int height, int width) {
    if (height < 32 || width < 32)
        throw InvalidArgument("generate_vessel_tree: size must be at least 32x32");

    const double scale = std::min(height, width);
    for (int attempt = 0; attempt < 8; ++attempt) {
        Rng rng(Rng::mix(seed, 0x7E55E1 + attempt));
        VesselMap vm;
        vm.disc_center = {height * (0.50 + rng.uniform(-0.05, 0.05)),
                          width * (0.66 + rng.uniform(-0.05, 0.05))};

        detail::GrowSpec g{height, width, std::max(1.5, 0.035 * scale)};
        const int n_trunks = rng.uniform_int(4, 6);
        const double base_angle = rng.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n_trunks; ++i) {
            const double angle = base_angle + i * 2.0 * M_PI / n_trunks + rng.uniform(-0.25, 0.25);
            const double w0 = std::max(1.4, 0.030 * scale) * rng.uniform(0.85, 1.15);
            const double len = scale * rng.uniform(0.28, 0.42) * (1.0 + 0.1 * attempt);
            detail::grow_branch(g, rng, vm.disc_center, angle, w0, len, 0, vm.centerlines);
        }

        vm.grid = Image(height, width, 1, 0.0f);
        detail::stamp_centerlines(vm.centerlines, vm.grid,
                                  [](double d, double w) { return d <= w * 0.5 ? 1.0 : 0.0; });

        double frac = 0.0;
        for (const float v : vm.grid.data()) frac += v;
        frac /= vm.grid.size();
        if (frac >= 0.01 && frac <= 0.25) return vm;
    }
    throw NumericalError("generate_vessel_tree: could not reach target vessel density");
}

// Soft anti-aliased vessel intensity in [0, 1] (1 on the centerline, linear
// 1-pixel falloff at the rim). Shared by the SLO and FA renderers.
inline Image render_vessels_soft(const VesselMap& vm, int height, int width) {
    Image out(height, width, 1, 0.0f);
    detail::stamp_centerlines(vm.centerlines, out, [](double d, double w) {
        return std::clamp(w * 0.5 + 0.5 - d, 0.0, 1.0);
    });
    return out;
}

}  // namespace angiodiff::synth
