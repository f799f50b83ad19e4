#pragma once

#include <cmath>

#include "angiodiff/core/homography.hpp"
#include "angiodiff/core/image.hpp"
#include "angiodiff/synth/triplet.hpp"

namespace angiodiff::synth {

struct AugmentationParams {
    double rotation_deg = 0.0;  // within [-5, 5]
    int crop_row = 0, crop_col = 0;
    int crop_h = 0, crop_w = 0;  // 0 means full size
    bool flip_horizontal = false;
    uint64_t seed = 0;

    static AugmentationParams random(Rng& rng, int height, int width, int crop_h, int crop_w,
                                     uint64_t seed) {
        AugmentationParams p;
        p.rotation_deg = rng.uniform(-5.0, 5.0);
        p.crop_h = crop_h;
        p.crop_w = crop_w;
        p.crop_row = rng.uniform_int(0, std::max(0, height - crop_h));
        p.crop_col = rng.uniform_int(0, std::max(0, width - crop_w));
        p.flip_horizontal = rng.bernoulli(0.5);
        p.seed = seed;
        return p;
    }
};

namespace detail {

// Rotation about the canvas center; angle 0 is an exact pass-through so the
// identity-parameter case is bitwise stable. Bilinear planes, nearest for masks.
inline Image rotate_image(const Image& img, double deg, bool nearest) {
    if (deg == 0.0) return img;
    const double rad = deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const int h = img.height(), w = img.width();
    const double cy = (h - 1) * 0.5, cx = (w - 1) * 0.5;
    Image out(h, w, img.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // inverse map: rotate output coords by -deg
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + (cs * dy - sn * dx);
            const double sx = cx + (sn * dy + cs * dx);
            const bool inside = sy >= -0.5 && sy <= h - 0.5 && sx >= -0.5 && sx <= w - 0.5;
            for (int c = 0; c < img.channels(); ++c) {
                float v = 0.0f;
                if (inside)
                    v = nearest ? img.at(c, std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1),
                                         std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1))
                                : img.sample_bilinear(c, sy, sx);
                out.at(c, y, x) = v;
            }
        }
    return out;
}

inline Image crop_image(const Image& img, int row, int col, int ch, int cw) {
    Image out(ch, cw, img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) out.at(c, y, x) = img.at(c, row + y, col + x);
    return out;
}

inline Image flip_horizontal(const Image& img) {
    Image out(img.height(), img.width(), img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
    return out;
}

}  // namespace detail

// Joint augmentation of all planes plus the lesion mask: rotate about the
// canvas center, crop, then flip. The recorded misalignment homography is
// conjugated by the same transform so it stays valid in the new frame.
inline PairedTriplet augment(const PairedTriplet& t, const AugmentationParams& p) {
    const int h = t.early_fa.height(), w = t.early_fa.width();
    if (std::abs(p.rotation_deg) > 5.0)
        throw InvalidArgument("augment: rotation must stay within [-5, 5] degrees");
    const int ch = p.crop_h > 0 ? p.crop_h : h;
    const int cw = p.crop_w > 0 ? p.crop_w : w;
    if (p.crop_row < 0 || p.crop_col < 0 || p.crop_row + ch > h || p.crop_col + cw > w)
        throw InvalidArgument("augment: crop out of bounds");

    auto apply = [&](const Image& img, bool nearest) {
        Image out = detail::rotate_image(img, p.rotation_deg, nearest);
        out = detail::crop_image(out, p.crop_row, p.crop_col, ch, cw);
        if (p.flip_horizontal) out = detail::flip_horizontal(out);
        out.clamp01();
        return out;
    };

    PairedTriplet out;
    out.slo = apply(t.slo, false);
    out.early_fa = apply(t.early_fa, false);
    out.late_fa = apply(t.late_fa, false);
    if (!t.lesion_mask.empty()) out.lesion_mask = apply(t.lesion_mask, true);
    out.seed = Rng::mix(t.seed, p.seed);

    if (t.has_misalignment) {
        // A: augmentation as a homography in (x, y)
        const double rad = p.rotation_deg * M_PI / 180.0;
        const double cs = std::cos(rad), sn = std::sin(rad);
        const double cy = (h - 1) * 0.5, cx = (w - 1) * 0.5;
        Eigen::Matrix3d R;  // forward rotation about the center
        R << cs, -sn, cx - cs * cx + sn * cy,
             sn,  cs, cy - sn * cx - cs * cy,
              0,   0, 1;
        Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
        T(0, 2) = -p.crop_col;
        T(1, 2) = -p.crop_row;
        Eigen::Matrix3d F = Eigen::Matrix3d::Identity();
        if (p.flip_horizontal) {
            F(0, 0) = -1;
            F(0, 2) = cw - 1;
        }
        const Eigen::Matrix3d A = F * T * R;
        out.misalignment =
            Homography::from_matrix(A * t.misalignment.matrix() * A.inverse());
        out.has_misalignment = true;
    }
    return out;
}

}  // namespace angiodiff::synth
