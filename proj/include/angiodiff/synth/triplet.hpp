#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "angiodiff/core/homography.hpp"
#include "angiodiff/core/image.hpp"
#include "angiodiff/core/rng.hpp"
#include "angiodiff/synth/vessel_tree.hpp"

namespace angiodiff::synth {

enum class LesionKind { leakage, scar };

struct LesionBlob {
    double row, col;
    double radius;     // pixels, >= 2
    double intensity;  // [0, 1]
    LesionKind kind = LesionKind::leakage;
};

struct LesionSpec {
    std::vector<LesionBlob> blobs;  // may be empty (healthy sample)

    void validate(int height, int width) const {
        for (const auto& b : blobs) {
            if (b.radius < 2.0) throw InvalidArgument("LesionSpec: radius must be >= 2 px");
            if (b.row < 0 || b.row >= height || b.col < 0 || b.col >= width)
                throw InvalidArgument("LesionSpec: blob center out of bounds");
            if (b.intensity < 0.0 || b.intensity > 1.0)
                throw InvalidArgument("LesionSpec: intensity must be in [0, 1]");
        }
    }
};

// One sample: condition image plus the two FA phases, with ground truth
// (lesion mask, applied misalignment) available because the data is synthetic.
struct PairedTriplet {
    Image slo;         // H×W×3
    Image early_fa;    // H×W×1
    Image late_fa;     // H×W×1
    Image lesion_mask; // H×W×1 binary; empty when unknown
    bool has_misalignment = false;
    Homography misalignment;  // applied to late_fa relative to early_fa
    uint64_t seed = 0;
};

// Lesion placement is uniform over the canvas interior; the clinical spatial
// distribution is unknown, so this is an explicitly arbitrary choice.
inline LesionSpec random_lesions(Rng& rng, int height, int width, double lesion_prob,
                                 int max_lesions) {
    LesionSpec spec;
    if (!rng.bernoulli(lesion_prob)) return spec;
    const int n = rng.uniform_int(1, std::max(1, max_lesions));
    const double s = std::min(height, width);
    for (int i = 0; i < n; ++i) {
        LesionBlob b;
        b.radius = std::max(2.0, s * rng.uniform(0.03, 0.09));
        b.row = rng.uniform(b.radius, height - 1 - b.radius);
        b.col = rng.uniform(b.radius, width - 1 - b.radius);
        b.intensity = rng.uniform(0.55, 0.95);
        b.kind = rng.uniform() < 0.8 ? LesionKind::leakage : LesionKind::scar;
        spec.blobs.push_back(b);
    }
    return spec;
}

namespace detail {

// Band-limited texture: blurred white noise stretched to roughly [-1, 1].
inline Image texture_noise(Rng& rng, int height, int width, double sigma) {
    Image n(height, width, 1);
    for (float& v : n.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Image b = gaussian_blur(n, sigma);
    float mx = 0.0f;
    for (const float v : b.data()) mx = std::max(mx, std::abs(v));
    if (mx > 0)
        for (float& v : b.data()) v /= mx;
    return b;
}

// Random homography displacing each corner by at most `strength` pixels.
inline Homography random_misalignment(Rng& rng, int height, int width, double strength) {
    std::vector<std::array<double, 2>> src = {{0.0, 0.0},
                                              {static_cast<double>(width - 1), 0.0},
                                              {0.0, static_cast<double>(height - 1)},
                                              {static_cast<double>(width - 1),
                                               static_cast<double>(height - 1)}};
    std::vector<std::array<double, 2>> dst;
    for (const auto& p : src) {
        const double r = strength * std::sqrt(rng.uniform());
        const double th = rng.uniform(0.0, 2.0 * M_PI);
        dst.push_back({p[0] + r * std::cos(th), p[1] + r * std::sin(th)});
    }
    return fit_homography(src, dst);
}

inline double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

// Renders the three aligned planes, then warps the late phase by a random
// homography with corner displacement <= misalign_strength.
//   slo:      vessels darker than a textured background inside an elliptical
//             field mask, three channels
//   early_fa: bright vessels on a dark background
//   late_fa:  blur(early, sigma=1.5) * 0.7 plus leakage/scar blobs
// The blur/dim constants are frozen; tests depend on them.
inline PairedTriplet render_triplet(const VesselMap& vmap, const LesionSpec& lesions,
                                    double misalign_strength, uint64_t seed) {
    if (misalign_strength < 0)
        throw InvalidArgument("render_triplet: misalign_strength must be >= 0");
    const int h = vmap.grid.height(), w = vmap.grid.width();
    lesions.validate(h, w);

    Rng rng(Rng::mix(seed, 0x5EED0));
    Rng slo_rng = rng.fork(1);
    Rng fa_rng = rng.fork(2);
    Rng warp_rng = rng.fork(3);

    const Image vessels = render_vessels_soft(vmap, h, w);

    PairedTriplet t;
    t.seed = seed;

    // --- SLO ---
    const Image tex = detail::texture_noise(slo_rng, h, w, 2.5);
    t.slo = Image(h, w, 3);
    const double cy = (h - 1) * 0.5, cx = (w - 1) * 0.5;
    const double ay = h * 0.46, ax = w * 0.52;
    const float chan_gain[3] = {0.95f, 0.78f, 0.52f};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r2 = ((y - cy) / ay) * ((y - cy) / ay) + ((x - cx) / ax) * ((x - cx) / ax);
            const double field = r2 <= 1.0 ? 1.0 : 0.04;
            const double vignette = 1.0 - 0.30 * std::min(1.0, r2);
            const double base = (0.34 + 0.10 * tex.at(0, y, x)) * vignette;
            const double v = vessels.at(0, y, x);
            for (int c = 0; c < 3; ++c)
                t.slo.at(c, y, x) =
                    static_cast<float>(field * chan_gain[c] * base * (1.0 - 0.55 * v));
        }
    t.slo.clamp01();

    // --- early FA ---
    const Image fa_tex = detail::texture_noise(fa_rng, h, w, 2.0);
    t.early_fa = Image(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t.early_fa.at(0, y, x) = static_cast<float>(
                0.05 + 0.02 * fa_tex.at(0, y, x) + 0.88 * vessels.at(0, y, x));
    t.early_fa.clamp01();

    // --- late FA (aligned frame) ---
    Image late = gaussian_blur(t.early_fa, 1.5);
    for (float& v : late.data()) v *= 0.7f;

    t.lesion_mask = Image(h, w, 1, 0.0f);
    for (const auto& b : lesions.blobs) {
        const int y0 = std::max(0, static_cast<int>(std::floor(b.row - 1.3 * b.radius)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(b.row + 1.3 * b.radius)));
        const int x0 = std::max(0, static_cast<int>(std::floor(b.col - 1.3 * b.radius)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(b.col + 1.3 * b.radius)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d = std::hypot(y - b.row, x - b.col);
                const double prof = b.intensity * (1.0 - detail::smoothstep(0.8 * b.radius,
                                                                            1.2 * b.radius, d));
                float& px = late.at(0, y, x);
                px += static_cast<float>(b.kind == LesionKind::leakage ? prof : -0.6 * prof);
                if (d <= b.radius) t.lesion_mask.at(0, y, x) = 1.0f;
            }
    }
    late.clamp01();

    if (misalign_strength > 0) {
        t.misalignment = detail::random_misalignment(warp_rng, h, w, misalign_strength);
        t.late_fa = warp_homography(late, t.misalignment, 0.0f);
    } else {
        t.misalignment = Homography::identity();
        t.late_fa = late;
    }
    t.has_misalignment = true;
    return t;
}

}  // namespace angiodiff::synth
