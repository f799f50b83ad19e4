#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "angiodiff/core/image.hpp"

namespace angiodiff::preprocess {

struct SectorFilterParams {
    std::vector<int> window_radii{3, 5, 9};  // one radius per scale, strictly increasing
    int n_sectors = 8;
    double alpha = 0.5;  // gradient-compensation weight
    std::vector<double> scale_weights{1.0 / 3, 1.0 / 3, 1.0 / 3};

    void validate() const {
        if (window_radii.empty()) throw InvalidArgument("sector_filter: no scales");
        for (size_t i = 0; i < window_radii.size(); ++i) {
            if (window_radii[i] < 2) throw InvalidArgument("sector_filter: radius must be >= 2");
            if (i > 0 && window_radii[i] <= window_radii[i - 1])
                throw InvalidArgument("sector_filter: radii must be strictly increasing");
        }
        if (n_sectors < 4) throw InvalidArgument("sector_filter: need at least 4 sectors");
        if (scale_weights.size() != window_radii.size())
            throw InvalidArgument("sector_filter: one weight per scale required");
        const double sum = std::accumulate(scale_weights.begin(), scale_weights.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-6)
            throw InvalidArgument("sector_filter: scale weights must sum to 1");
        if (alpha < 0) throw InvalidArgument("sector_filter: alpha must be >= 0");
    }
};

namespace detail {

struct SectorOffsets {
    // per sector: list of (dy, dx) window offsets at one radius
    std::vector<std::vector<std::array<int, 2>>> sectors;
};

inline SectorOffsets build_sector_offsets(int radius, int n_sectors) {
    SectorOffsets so;
    so.sectors.resize(n_sectors);
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (std::hypot(dy, dx) > radius + 1e-9) continue;
            const double angle = std::atan2(static_cast<double>(dy), static_cast<double>(dx));
            int s = static_cast<int>((angle + M_PI) / (2.0 * M_PI) * n_sectors);
            s = std::clamp(s, 0, n_sectors - 1);
            so.sectors[s].push_back({dy, dx});
        }
    return so;
}

}  // namespace detail

// Multi-scale sector (fan) filter. Per pixel and per scale, the window of
// that scale's radius is split into N equal-angle sectors; with I the center
// value, I_m the maximum sector mean, and Gx/Gy the sector-mean central
// gradients, the response is
//     [ sum_over_sectors (I_m - alpha*(Gx + Gy) - I) + I ] / (N + 1)
// and the scales are combined with scale_weights. Borders replicate edges.
// An empty sector (possible only for large N at radius 2) counts as mean = I
// with zero gradients, which keeps the constant-image response exact.
//
// Convention: the I_m - I term rewards centers that sit below the dominant
// sector mean, so the response is strongest on locally dark curvilinear
// structures. Bright-on-dark angiograms are inverted first (vessel_enhance).
inline Image sector_filter(const Image& gray, const SectorFilterParams& params) {
    if (gray.channels() != 1) throw InvalidArgument("sector_filter: grayscale input required");
    params.validate();
    const int h = gray.height(), w = gray.width();
    const int max_r = params.window_radii.back();
    if (2 * max_r + 1 > h || 2 * max_r + 1 > w)
        throw InvalidArgument("sector_filter: window larger than image");

    // central-difference gradients with edge replication
    Image gx(h, w, 1), gy(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gx.at(0, y, x) = 0.5f * (gray.at(0, y, std::min(w - 1, x + 1)) -
                                     gray.at(0, y, std::max(0, x - 1)));
            gy.at(0, y, x) = 0.5f * (gray.at(0, std::min(h - 1, y + 1), x) -
                                     gray.at(0, std::max(0, y - 1), x));
        }

    const int n_sec = params.n_sectors;
    Image out(h, w, 1, 0.0f);
    std::vector<double> sum_i(n_sec), sum_gx(n_sec), sum_gy(n_sec);
    std::vector<int> cnt(n_sec);

    for (size_t s = 0; s < params.window_radii.size(); ++s) {
        const auto so = detail::build_sector_offsets(params.window_radii[s], n_sec);
        const double wscale = params.scale_weights[s];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double center = gray.at(0, y, x);
                double i_max = -1e300;
                std::fill(sum_i.begin(), sum_i.end(), 0.0);
                std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
                std::fill(sum_gy.begin(), sum_gy.end(), 0.0);
                std::fill(cnt.begin(), cnt.end(), 0);
                for (int sec = 0; sec < n_sec; ++sec) {
                    for (const auto& [dy, dx] : so.sectors[sec]) {
                        const int yy = std::clamp(y + dy, 0, h - 1);
                        const int xx = std::clamp(x + dx, 0, w - 1);
                        sum_i[sec] += gray.at(0, yy, xx);
                        sum_gx[sec] += gx.at(0, yy, xx);
                        sum_gy[sec] += gy.at(0, yy, xx);
                        ++cnt[sec];
                    }
                }
                for (int sec = 0; sec < n_sec; ++sec) {
                    const double mean = cnt[sec] ? sum_i[sec] / cnt[sec] : center;
                    if (mean > i_max) i_max = mean;
                }
                double acc = 0.0;
                for (int sec = 0; sec < n_sec; ++sec) {
                    const double mgx = cnt[sec] ? sum_gx[sec] / cnt[sec] : 0.0;
                    const double mgy = cnt[sec] ? sum_gy[sec] / cnt[sec] : 0.0;
                    acc += i_max - params.alpha * (mgx + mgy) - center;
                }
                out.at(0, y, x) +=
                    static_cast<float>(wscale * (acc + center) / (n_sec + 1));
            }
    }
    return out;
}

// Vessel enhancement for angiograms: bright vessels on a dark background are
// inverted so the filter's dark-structure response lands on the vessels.
inline Image vessel_enhance(const Image& gray, const SectorFilterParams& params,
                            bool bright_vessels = true) {
    if (!bright_vessels) return sector_filter(gray, params);
    Image inv(gray.height(), gray.width(), 1);
    for (size_t i = 0; i < gray.size(); ++i) inv.data()[i] = 1.0f - gray.data()[i];
    return sector_filter(inv, params);
}

}  // namespace angiodiff::preprocess
