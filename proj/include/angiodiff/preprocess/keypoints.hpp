#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "angiodiff/core/image.hpp"

namespace angiodiff::preprocess {

// Scale-invariant keypoints from a difference-of-Gaussians pyramid with
// gradient-orientation-histogram descriptors (SIFT-style, single purpose:
// same-modality angiogram registration).

struct Keypoint {
    double y = 0, x = 0;       // full-resolution coordinates
    double sigma = 0;          // absolute scale
    double orientation = 0;    // radians
    double response = 0;       // |DoG| at the extremum
    int octave = 0;
    double oct_y = 0, oct_x = 0, oct_sigma = 0;  // octave-local, used by the descriptor
};

using Descriptor = std::array<float, 128>;  // 4x4 cells x 8 orientations

struct KeypointParams {
    int intervals = 3;               // scales per octave
    double base_sigma = 1.6;
    double contrast_threshold = 0.007;
    double edge_ratio = 12.0;
    int max_keypoints = 2000;
    int min_octave_size = 16;
    bool upsample_first = true;  // Lowe's doubled -1 octave
};

namespace detail {

inline Image downsample2(const Image& img) {
    const int oh = img.height() / 2, ow = img.width() / 2;
    Image out(oh, ow, 1);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) out.at(0, y, x) = img.at(0, 2 * y, 2 * x);
    return out;
}

inline Image upsample2_bilinear(const Image& img) {
    const int oh = img.height() * 2, ow = img.width() * 2;
    Image out(oh, ow, 1);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at(0, y, x) = img.sample_bilinear(0, y * 0.5, x * 0.5);
    return out;
}

struct Octave {
    std::vector<Image> gauss;  // intervals + 3 blurred images
    std::vector<Image> dog;    // intervals + 2 differences
};

inline std::vector<Octave> build_pyramid(const Image& gray, const KeypointParams& p) {
    std::vector<Octave> pyr;
    const double k = std::pow(2.0, 1.0 / p.intervals);
    // assumed camera blur 0.5 (1.0 after doubling); lift the base to base_sigma
    const Image base = p.upsample_first ? upsample2_bilinear(gray) : gray;
    const double assumed = p.upsample_first ? 1.0 : 0.5;
    Image current = gaussian_blur(
        base, std::sqrt(std::max(0.01, p.base_sigma * p.base_sigma - assumed * assumed)));
    while (std::min(current.height(), current.width()) >= p.min_octave_size) {
        Octave oct;
        oct.gauss.push_back(current);
        for (int i = 1; i < p.intervals + 3; ++i) {
            const double prev = p.base_sigma * std::pow(k, i - 1);
            const double inc = prev * std::sqrt(k * k - 1.0);
            oct.gauss.push_back(gaussian_blur(oct.gauss.back(), inc));
        }
        for (int i = 0; i + 1 < static_cast<int>(oct.gauss.size()); ++i) {
            Image d(oct.gauss[i].height(), oct.gauss[i].width(), 1);
            for (size_t j = 0; j < d.size(); ++j)
                d.data()[j] = oct.gauss[i + 1].data()[j] - oct.gauss[i].data()[j];
            oct.dog.push_back(d);
        }
        current = downsample2(oct.gauss[p.intervals]);  // sigma doubled
        pyr.push_back(std::move(oct));
    }
    return pyr;
}

inline bool is_extremum(const Octave& oct, int s, int y, int x) {
    const float v = oct.dog[s].at(0, y, x);
    for (int ds = -1; ds <= 1; ++ds)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (ds == 0 && dy == 0 && dx == 0) continue;
                const float n = oct.dog[s + ds].at(0, y + dy, x + dx);
                if (v > 0 && n >= v) return false;
                if (v < 0 && n <= v) return false;
            }
    return true;
}

// Quadratic refinement of the extremum over (x, y, scale), iterated when the
// offset walks to a neighboring sample (Lowe-style).
inline bool refine_3d(const Octave& oct, int& s, int& y, int& x, double& oy, double& ox,
                      double& os) {
    const int n_dog = static_cast<int>(oct.dog.size());
    for (int iter = 0; iter < 5; ++iter) {
        const Image& d0 = oct.dog[s - 1];
        const Image& d1 = oct.dog[s];
        const Image& d2 = oct.dog[s + 1];
        const double gx = 0.5 * (d1.at(0, y, x + 1) - d1.at(0, y, x - 1));
        const double gy = 0.5 * (d1.at(0, y + 1, x) - d1.at(0, y - 1, x));
        const double gs = 0.5 * (d2.at(0, y, x) - d0.at(0, y, x));
        const double dxx = d1.at(0, y, x + 1) + d1.at(0, y, x - 1) - 2.0 * d1.at(0, y, x);
        const double dyy = d1.at(0, y + 1, x) + d1.at(0, y - 1, x) - 2.0 * d1.at(0, y, x);
        const double dss = d2.at(0, y, x) + d0.at(0, y, x) - 2.0 * d1.at(0, y, x);
        const double dxy = 0.25 * (d1.at(0, y + 1, x + 1) - d1.at(0, y + 1, x - 1) -
                                   d1.at(0, y - 1, x + 1) + d1.at(0, y - 1, x - 1));
        const double dxs = 0.25 * (d2.at(0, y, x + 1) - d2.at(0, y, x - 1) -
                                   d0.at(0, y, x + 1) + d0.at(0, y, x - 1));
        const double dys = 0.25 * (d2.at(0, y + 1, x) - d2.at(0, y - 1, x) -
                                   d0.at(0, y + 1, x) + d0.at(0, y - 1, x));
        // solve H * delta = -g by Cramer's rule
        const double a11 = dxx, a12 = dxy, a13 = dxs;
        const double a22 = dyy, a23 = dys, a33 = dss;
        const double det = a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13) +
                           a13 * (a12 * a23 - a22 * a13);
        if (std::abs(det) < 1e-14) return false;
        const double b1 = -gx, b2 = -gy, b3 = -gs;
        ox = (b1 * (a22 * a33 - a23 * a23) - a12 * (b2 * a33 - a23 * b3) +
              a13 * (b2 * a23 - a22 * b3)) / det;
        oy = (a11 * (b2 * a33 - b3 * a23) - b1 * (a12 * a33 - a23 * a13) +
              a13 * (a12 * b3 - b2 * a13)) / det;
        os = (a11 * (a22 * b3 - a23 * b2) - a12 * (a12 * b3 - b1 * a23) +
              b1 * (a12 * a23 - a22 * a13)) / det;
        if (std::abs(ox) <= 0.5 && std::abs(oy) <= 0.5 && std::abs(os) <= 0.5) return true;
        x += static_cast<int>(std::lround(ox));
        y += static_cast<int>(std::lround(oy));
        s += static_cast<int>(std::lround(os));
        if (s < 1 || s >= n_dog - 1 || y < 1 || y >= d1.height() - 1 || x < 1 ||
            x >= d1.width() - 1)
            return false;
    }
    return false;
}

inline bool edge_like(const Image& d, int y, int x, double edge_ratio) {
    const double dxx = d.at(0, y, x + 1) + d.at(0, y, x - 1) - 2.0 * d.at(0, y, x);
    const double dyy = d.at(0, y + 1, x) + d.at(0, y - 1, x) - 2.0 * d.at(0, y, x);
    const double dxy = 0.25 * (d.at(0, y + 1, x + 1) - d.at(0, y + 1, x - 1) -
                               d.at(0, y - 1, x + 1) + d.at(0, y - 1, x - 1));
    const double tr = dxx + dyy, det = dxx * dyy - dxy * dxy;
    if (det <= 0) return true;
    const double r = edge_ratio;
    return tr * tr / det >= (r + 1) * (r + 1) / r;
}

inline void image_gradient(const Image& img, int y, int x, double& mag, double& ang) {
    const int h = img.height(), w = img.width();
    const double gx = img.at(0, y, std::min(w - 1, x + 1)) - img.at(0, y, std::max(0, x - 1));
    const double gy = img.at(0, std::min(h - 1, y + 1), x) - img.at(0, std::max(0, y - 1), x);
    mag = 0.5 * std::hypot(gx, gy);
    ang = std::atan2(gy, gx);
}

inline std::vector<double> dominant_orientations(const Image& gimg, double y, double x,
                                                 double sigma) {
    constexpr int kBins = 36;
    std::array<double, kBins> hist{};
    const double win_sigma = 1.5 * sigma;
    const int radius = std::max(2, static_cast<int>(std::lround(3.0 * win_sigma)));
    const int cy = static_cast<int>(std::lround(y)), cx = static_cast<int>(std::lround(x));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = cy + dy, xx = cx + dx;
            if (yy < 1 || yy >= gimg.height() - 1 || xx < 1 || xx >= gimg.width() - 1) continue;
            double mag, ang;
            image_gradient(gimg, yy, xx, mag, ang);
            const double wgt = std::exp(-0.5 * (dy * dy + dx * dx) / (win_sigma * win_sigma));
            int bin = static_cast<int>(std::floor((ang + M_PI) / (2.0 * M_PI) * kBins));
            bin = ((bin % kBins) + kBins) % kBins;
            hist[bin] += wgt * mag;
        }
    // light smoothing, then peaks >= 0.8 * max with parabolic refinement
    std::array<double, kBins> sm{};
    for (int i = 0; i < kBins; ++i)
        sm[i] = 0.25 * hist[(i + kBins - 1) % kBins] + 0.5 * hist[i] +
                0.25 * hist[(i + 1) % kBins];
    const double peak = *std::max_element(sm.begin(), sm.end());
    std::vector<double> out;
    if (peak <= 0) return out;
    for (int i = 0; i < kBins; ++i) {
        const double l = sm[(i + kBins - 1) % kBins], c = sm[i], r = sm[(i + 1) % kBins];
        if (c >= 0.8 * peak && c > l && c > r) {
            const double offset = 0.5 * (l - r) / (l - 2 * c + r);
            const double ang = (i + 0.5 + offset) / kBins * 2.0 * M_PI - M_PI;
            out.push_back(ang);
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<Keypoint> detect_keypoints(const Image& gray,
                                              const KeypointParams& p = {}) {
    if (gray.channels() != 1) throw InvalidArgument("detect_keypoints: grayscale input required");
    const auto pyramid = detail::build_pyramid(gray, p);
    const double k = std::pow(2.0, 1.0 / p.intervals);

    std::vector<Keypoint> kps;
    for (size_t o = 0; o < pyramid.size(); ++o) {
        const auto& oct = pyramid[o];
        const double oct_scale =
            std::pow(2.0, static_cast<double>(o)) * (p.upsample_first ? 0.5 : 1.0);
        for (int s0 = 1; s0 <= p.intervals; ++s0) {
            const Image& d = oct.dog[s0];
            for (int y0 = 1; y0 < d.height() - 1; ++y0)
                for (int x0 = 1; x0 < d.width() - 1; ++x0) {
                    const float v = d.at(0, y0, x0);
                    if (std::abs(v) < 0.8 * p.contrast_threshold) continue;
                    if (!detail::is_extremum(oct, s0, y0, x0)) continue;
                    if (detail::edge_like(d, y0, x0, p.edge_ratio)) continue;
                    int s = s0, y = y0, x = x0;
                    double oy = 0, ox = 0, os = 0;
                    if (!detail::refine_3d(oct, s, y, x, oy, ox, os)) {
                        // keep the integer-grid extremum; guided refitting
                        // tolerates the coarser localization
                        s = s0;
                        y = y0;
                        x = x0;
                        oy = ox = os = 0;
                    }
                    if (std::abs(oct.dog[s].at(0, y, x)) < p.contrast_threshold) continue;
                    const double sigma_rel = p.base_sigma * std::pow(k, s + os);
                    const auto angles =
                        detail::dominant_orientations(oct.gauss[s], y + oy, x + ox, sigma_rel);
                    for (const double ang : angles) {
                        Keypoint kp;
                        kp.oct_y = y + oy;
                        kp.oct_x = x + ox;
                        kp.oct_sigma = sigma_rel;
                        kp.y = (y + oy) * oct_scale;
                        kp.x = (x + ox) * oct_scale;
                        kp.sigma = sigma_rel * oct_scale;
                        kp.orientation = ang;
                        kp.response = std::abs(oct.dog[s].at(0, y, x));
                        kp.octave = static_cast<int>(o);
                        kps.push_back(kp);
                    }
                }
        }
    }
    std::stable_sort(kps.begin(), kps.end(),
                     [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
    // drop near-duplicates left behind by iterated refinement walks
    std::vector<Keypoint> unique;
    for (const auto& kp : kps) {
        bool dup = false;
        for (const auto& u : unique) {
            if (u.octave == kp.octave && std::abs(u.y - kp.y) < 0.5 &&
                std::abs(u.x - kp.x) < 0.5 && std::abs(u.sigma - kp.sigma) < 0.2 * u.sigma &&
                std::abs(std::remainder(u.orientation - kp.orientation, 2.0 * M_PI)) < 0.15) {
                dup = true;
                break;
            }
        }
        if (!dup) unique.push_back(kp);
        if (static_cast<int>(unique.size()) >= p.max_keypoints) break;
    }
    return unique;
}

// 4x4 spatial cells x 8 orientation bins over a rotated 16x16-sample window,
// trilinear binning, normalized / clamped at 0.2 / renormalized.
inline bool compute_descriptor(const Image& gimg, const Keypoint& kp, Descriptor& desc) {
    constexpr int kCells = 4, kBins = 8;
    const double cell = 3.0 * kp.oct_sigma;
    const double radius = cell * (kCells + 1) * std::sqrt(2.0) * 0.5;
    const int r = static_cast<int>(std::lround(radius));
    const double cs = std::cos(kp.orientation), sn = std::sin(kp.orientation);

    std::array<double, kCells * kCells * kBins> hist{};
    const int cy = static_cast<int>(std::lround(kp.oct_y));
    const int cx = static_cast<int>(std::lround(kp.oct_x));
    int used = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int yy = cy + dy, xx = cx + dx;
            if (yy < 1 || yy >= gimg.height() - 1 || xx < 1 || xx >= gimg.width() - 1) continue;
            // rotate into keypoint frame, measured in cells
            const double ry = (-sn * dx + cs * dy) / cell + kCells / 2.0 - 0.5;
            const double rx = (cs * dx + sn * dy) / cell + kCells / 2.0 - 0.5;
            if (ry <= -1 || ry >= kCells || rx <= -1 || rx >= kCells) continue;
            double mag, ang;
            detail::image_gradient(gimg, yy, xx, mag, ang);
            double rel = ang - kp.orientation;
            while (rel < 0) rel += 2.0 * M_PI;
            while (rel >= 2.0 * M_PI) rel -= 2.0 * M_PI;
            const double fb = rel / (2.0 * M_PI) * kBins;
            const double wgt =
                mag * std::exp(-(ry - kCells / 2.0 + 0.5) * (ry - kCells / 2.0 + 0.5) /
                                   (0.5 * kCells * kCells) -
                               (rx - kCells / 2.0 + 0.5) * (rx - kCells / 2.0 + 0.5) /
                                   (0.5 * kCells * kCells));
            const int y0 = static_cast<int>(std::floor(ry)), x0 = static_cast<int>(std::floor(rx));
            const int b0 = static_cast<int>(std::floor(fb)) % kBins;
            const double fy = ry - y0, fx = rx - x0, fo = fb - std::floor(fb);
            for (int iy = 0; iy <= 1; ++iy)
                for (int ix = 0; ix <= 1; ++ix)
                    for (int ib = 0; ib <= 1; ++ib) {
                        const int yb = y0 + iy, xb = x0 + ix;
                        if (yb < 0 || yb >= kCells || xb < 0 || xb >= kCells) continue;
                        const int ob = (b0 + ib) % kBins;
                        const double www = wgt * (iy ? fy : 1 - fy) * (ix ? fx : 1 - fx) *
                                           (ib ? fo : 1 - fo);
                        hist[(yb * kCells + xb) * kBins + ob] += www;
                    }
            ++used;
        }
    if (used < 8) return false;

    double norm = 0;
    for (const double v : hist) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-9) return false;
    for (double& v : hist) v = std::min(v / norm, 0.2);
    norm = 0;
    for (const double v : hist) norm += v * v;
    norm = std::sqrt(norm);
    for (size_t i = 0; i < hist.size(); ++i) desc[i] = static_cast<float>(hist[i] / norm);
    return true;
}

struct DescribedKeypoints {
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;
};

inline DescribedKeypoints detect_and_describe(const Image& gray, const KeypointParams& p = {}) {
    const auto pyramid = detail::build_pyramid(gray, p);
    DescribedKeypoints out;
    const auto kps = detect_keypoints(gray, p);
    for (const auto& kp : kps) {
        const int s = static_cast<int>(std::lround(
            std::log(kp.oct_sigma / p.base_sigma) / std::log(std::pow(2.0, 1.0 / p.intervals))));
        const auto& gimg = pyramid[kp.octave].gauss[std::clamp(s, 0, p.intervals + 2)];
        Descriptor d{};
        if (compute_descriptor(gimg, kp, d)) {
            out.keypoints.push_back(kp);
            out.descriptors.push_back(d);
        }
    }
    return out;
}

}  // namespace angiodiff::preprocess
