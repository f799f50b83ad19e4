#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "angiodiff/core/homography.hpp"
#include "angiodiff/core/image.hpp"
#include "angiodiff/core/rng.hpp"
#include "angiodiff/preprocess/keypoints.hpp"
#include "angiodiff/preprocess/sector_filter.hpp"

namespace angiodiff::preprocess {

struct RegistrationParams {
    std::optional<SectorFilterParams> prefilter = SectorFilterParams{};  // nullopt disables
    KeypointParams keypoints;
    // the two phases carry different intrinsic blur; lifting both to a common
    // blob scale before the pyramid makes their scale-space content comparable
    double detector_blur = 1.5;
    double ratio_test = 0.75;
    // same-eye angiogram pairs are near-rigid: matches whose keypoints
    // disagree wildly in scale or orientation are discarded before RANSAC
    double max_scale_ratio = 1.6;
    double max_rotation_deg = 25.0;
    double ransac_threshold_px = 3.0;
    int ransac_iters = 2000;
    int min_inliers = 4;
    uint64_t ransac_seed = 0xA11C9ED5ULL;
};

struct RegistrationResult {
    Image warped_late;
    Homography homography;  // maps late coordinates into the early frame
    int n_inliers = 0;
    double mean_reprojection_error = 0.0;  // pixels, over inliers
    bool success = false;
};

namespace detail {

// Percentile-robust contrast stretch: a handful of extreme filter peaks must
// not compress the rest of the range below the detector's contrast threshold.
inline Image normalize_robust(const Image& img, double q_lo = 0.01, double q_hi = 0.99) {
    std::vector<float> sorted(img.data());
    std::sort(sorted.begin(), sorted.end());
    const float lo = sorted[static_cast<size_t>(q_lo * (sorted.size() - 1))];
    const float hi = sorted[static_cast<size_t>(q_hi * (sorted.size() - 1))];
    Image out(img.height(), img.width(), 1);
    const float span = hi - lo;
    for (size_t i = 0; i < img.size(); ++i)
        out.data()[i] =
            span > 1e-12f ? std::clamp((img.data()[i] - lo) / span, 0.0f, 1.0f) : 0.0f;
    return out;
}

struct Match {
    int a, b;  // indices into the two keypoint sets
};

// Ratio-test matching with a mutual-best check. L2 distances via one
// Gram-matrix product.
inline std::vector<Match> match_descriptors(const DescribedKeypoints& A,
                                            const DescribedKeypoints& B, double ratio) {
    std::vector<Match> out;
    const int na = static_cast<int>(A.descriptors.size());
    const int nb = static_cast<int>(B.descriptors.size());
    if (na == 0 || nb == 0) return out;

    Eigen::MatrixXf da(na, 128), db(nb, 128);
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < 128; ++j) da(i, j) = A.descriptors[i][j];
    for (int i = 0; i < nb; ++i)
        for (int j = 0; j < 128; ++j) db(i, j) = B.descriptors[i][j];
    const Eigen::MatrixXf gram = da * db.transpose();  // descriptors are unit norm
    // d^2 = 2 - 2 * gram

    std::vector<int> best_for_b(nb, -1);
    std::vector<float> best_sim_b(nb, -1.0f);
    for (int j = 0; j < nb; ++j)
        for (int i = 0; i < na; ++i)
            if (gram(i, j) > best_sim_b[j]) {
                best_sim_b[j] = gram(i, j);
                best_for_b[j] = i;
            }

    for (int i = 0; i < na; ++i) {
        int best = -1, second = -1;
        float s1 = -1.0f, s2 = -1.0f;
        for (int j = 0; j < nb; ++j) {
            const float s = gram(i, j);
            if (s > s1) {
                s2 = s1;
                second = best;
                s1 = s;
                best = j;
            } else if (s > s2) {
                s2 = s;
                second = j;
            }
        }
        (void)second;
        if (best < 0) continue;
        const double d1 = std::sqrt(std::max(0.0f, 2.0f - 2.0f * s1));
        const double d2 = std::sqrt(std::max(0.0f, 2.0f - 2.0f * s2));
        if (s2 >= -0.5f && d1 >= ratio * d2) continue;
        if (best_for_b[best] != i) continue;
        out.push_back({i, best});
    }
    return out;
}

// Least-squares affine (6 dof) embedded as a homography.
inline Homography fit_affine(const std::vector<std::array<double, 2>>& src,
                             const std::vector<std::array<double, 2>>& dst) {
    const size_t n = src.size();
    Eigen::MatrixXd A(2 * n, 6);
    Eigen::VectorXd b(2 * n);
    for (size_t i = 0; i < n; ++i) {
        A.row(2 * i) << src[i][0], src[i][1], 1, 0, 0, 0;
        A.row(2 * i + 1) << 0, 0, 0, src[i][0], src[i][1], 1;
        b(2 * i) = dst[i][0];
        b(2 * i + 1) = dst[i][1];
    }
    const Eigen::VectorXd x = (A.transpose() * A).ldlt().solve(A.transpose() * b);
    Eigen::Matrix3d M;
    M << x(0), x(1), x(2), x(3), x(4), x(5), 0, 0, 1;
    return Homography::from_matrix(M);
}

// Least-squares similarity (4 dof: scale, rotation, translation).
inline Homography fit_similarity(const std::vector<std::array<double, 2>>& src,
                                 const std::vector<std::array<double, 2>>& dst) {
    const size_t n = src.size();
    double sx = 0, sy = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += src[i][0];
        sy += src[i][1];
        dx += dst[i][0];
        dy += dst[i][1];
    }
    sx /= n; sy /= n; dx /= n; dy /= n;
    double a = 0, b = 0, denom = 0;
    for (size_t i = 0; i < n; ++i) {
        const double ux = src[i][0] - sx, uy = src[i][1] - sy;
        const double vx = dst[i][0] - dx, vy = dst[i][1] - dy;
        a += ux * vx + uy * vy;
        b += ux * vy - uy * vx;
        denom += ux * ux + uy * uy;
    }
    if (denom < 1e-12) return Homography::identity();
    a /= denom;
    b /= denom;
    Eigen::Matrix3d M;
    M << a, -b, dx - a * sx + b * sy, b, a, dy - b * sx - a * sy, 0, 0, 1;
    return Homography::from_matrix(M);
}

// Support-based model selection: a projective fit extrapolates wildly at the
// corners when the correspondences are few or clustered, so the final model
// is widened only as the support allows.
inline Homography fit_by_support(const std::vector<std::array<double, 2>>& src,
                                 const std::vector<std::array<double, 2>>& dst, int height,
                                 int width) {
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const auto& p : src) {
        min_x = std::min(min_x, p[0]);
        max_x = std::max(max_x, p[0]);
        min_y = std::min(min_y, p[1]);
        max_y = std::max(max_y, p[1]);
    }
    const double span = (max_x - min_x) * (max_y - min_y);
    const double area = static_cast<double>(height) * width;
    if (src.size() >= 30 && span >= 0.25 * area) return fit_homography(src, dst);
    if (src.size() >= 8) return fit_affine(src, dst);
    return fit_similarity(src, dst);
}

// Gauss-Newton photometric polish of the sampling map G = H^-1 (early frame
// -> late frame) on the enhanced images: minimizes
//     sum_p [ late(G(p)) - early(p) ]^2
// over the 8 homography parameters, seeded by the keypoint estimate. Returns
// the refined H, or the input if the refinement failed to reduce the error.
// Affine-only: interior samples cannot pin the projective terms, which would
// make the corners extrapolate wildly. The projective part of the seed is
// kept frozen.
inline Homography photometric_refine(const Image& late_f, const Image& early_f,
                                     const Homography& h0, int max_iters = 40) {
    const int height = early_f.height(), width = early_f.width();
    const int stride = std::max(1, std::min(height, width) / 96);
    // stay clear of the dark fill bands the misalignment warp leaves inside
    // the late canvas; they would otherwise drag the fit
    const int margin = std::max(3, std::min(height, width) / 16);

    Eigen::Matrix3d Ginit = h0.inverse().matrix();
    Ginit /= Ginit(2, 2);
    std::array<double, 8> g{Ginit(0, 0), Ginit(0, 1), Ginit(0, 2), Ginit(1, 0),
                            Ginit(1, 1), Ginit(1, 2), Ginit(2, 0), Ginit(2, 1)};

    struct Sample {
        double x, y, u, v, r, ix, iy;
    };
    std::vector<Sample> samples;

    // trimmed least squares: the top-decile residuals (lesion blobs, leftover
    // fill edges) are excluded from both the error and the normal equations
    auto collect = [&](const std::array<double, 8>& gp, std::vector<Sample>& out) {
        out.clear();
        for (int y = margin; y < height - margin; y += stride)
            for (int x = margin; x < width - margin; x += stride) {
                const double w = gp[6] * x + gp[7] * y + 1.0;
                const double u = (gp[0] * x + gp[1] * y + gp[2]) / w;
                const double v = (gp[3] * x + gp[4] * y + gp[5]) / w;
                if (u < margin || u > width - 1 - margin || v < margin ||
                    v > height - 1 - margin)
                    continue;
                Sample s;
                s.x = x;
                s.y = y;
                s.u = u;
                s.v = v;
                s.r = late_f.sample_bilinear(0, v, u) - early_f.at(0, y, x);
                out.push_back(s);
            }
        std::sort(out.begin(), out.end(),
                  [](const Sample& a, const Sample& b) { return std::abs(a.r) < std::abs(b.r); });
        out.resize(out.size() * 19 / 20);
    };

    // residual of one retained sample location under candidate parameters;
    // comparisons always use the same pixel set so the trim cannot be gamed
    // by pushing misalignment into the dropped tail
    auto subset_error = [&](const std::array<double, 8>& gp, const std::vector<Sample>& set) {
        double e = 0;
        int n = 0;
        for (const auto& s : set) {
            const double w = gp[6] * s.x + gp[7] * s.y + 1.0;
            const double u = (gp[0] * s.x + gp[1] * s.y + gp[2]) / w;
            const double v = (gp[3] * s.x + gp[4] * s.y + gp[5]) / w;
            if (u < 1 || u > width - 2 || v < 1 || v > height - 2) {
                e += 1.0;  // leaving the frame is as bad as a saturated residual
                ++n;
                continue;
            }
            const double r = late_f.sample_bilinear(0, v, u) - early_f.at(0, s.y, s.x);
            e += r * r;
            ++n;
        }
        return n ? e / n : 1e300;
    };

    collect(g, samples);
    if (samples.size() < 64) return h0;
    const std::array<double, 8> g0 = g;
    double lambda = 1e-3;
    for (int iter = 0; iter < max_iters; ++iter) {
        collect(g, samples);
        if (samples.size() < 64) break;
        double err = subset_error(g, samples);
        Eigen::Matrix<double, 6, 6> JtJ = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> Jtr = Eigen::Matrix<double, 6, 1>::Zero();
        for (auto& s : samples) {
            const double w = g[6] * s.x + g[7] * s.y + 1.0;
            s.ix = 0.5 * (late_f.sample_bilinear(0, s.v, s.u + 1) -
                          late_f.sample_bilinear(0, s.v, s.u - 1));
            s.iy = 0.5 * (late_f.sample_bilinear(0, s.v + 1, s.u) -
                          late_f.sample_bilinear(0, s.v - 1, s.u));
            Eigen::Matrix<double, 6, 1> J;
            J << s.ix * s.x / w, s.ix * s.y / w, s.ix / w, s.iy * s.x / w, s.iy * s.y / w,
                s.iy / w;
            JtJ += J * J.transpose();
            Jtr += J * s.r;
        }
        const double n = static_cast<double>(samples.size());
        JtJ /= n;
        Jtr /= n;
        Eigen::Matrix<double, 6, 6> A = JtJ;
        for (int i = 0; i < 6; ++i) A(i, i) += lambda * (JtJ(i, i) + 1e-9);
        const Eigen::Matrix<double, 6, 1> delta = A.ldlt().solve(Jtr);
        std::array<double, 8> g_new = g;
        for (int i = 0; i < 6; ++i) g_new[i] -= delta(i);
        const double err_new = subset_error(g_new, samples);
        if (err_new < err) {
            g = g_new;
            lambda = std::max(lambda * 0.5, 1e-6);
            if (delta.cwiseAbs().maxCoeff() < 1e-8) break;
        } else {
            lambda *= 4.0;
            if (lambda > 1e3) break;
        }
    }
    std::vector<Sample> final_set;
    collect(g0, final_set);
    if (final_set.size() < 64 || subset_error(g, final_set) >= subset_error(g0, final_set))
        return h0;

    Eigen::Matrix3d G;
    G << g[0], g[1], g[2], g[3], g[4], g[5], g[6], g[7], 1.0;
    if (std::abs(G.determinant()) < 1e-12) return h0;
    return Homography::from_matrix(G.inverse());
}

inline bool degenerate_quad(const std::array<std::array<double, 2>, 4>& pts, double min_area) {
    // any three nearly collinear or tightly clustered points make the
    // 4-point fit unstable
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b)
            for (int c = b + 1; c < 4; ++c) {
                const double area =
                    std::abs((pts[b][0] - pts[a][0]) * (pts[c][1] - pts[a][1]) -
                             (pts[c][0] - pts[a][0]) * (pts[b][1] - pts[a][1]));
                if (area < min_area) return true;
            }
    return false;
}

}  // namespace detail

// Estimates the homography taking `late` into the `early` frame from matched
// keypoints (RANSAC over 4-point DLT fits, least-squares refit on inliers)
// and warps `late` accordingly. Fewer than min_inliers consensus matches is a
// soft failure: identity homography, unwarped image, success = false.
inline RegistrationResult register_pair(const Image& late, const Image& early,
                                        const RegistrationParams& params = {}) {
    if (late.height() != early.height() || late.width() != early.width())
        throw InvalidArgument("register_pair: shape mismatch");

    const Image late_g = to_gray(late);
    const Image early_g = to_gray(early);
    Image late_f = late_g, early_f = early_g;
    if (params.prefilter) {
        late_f = vessel_enhance(late_g, *params.prefilter);
        early_f = vessel_enhance(early_g, *params.prefilter);
    }
    if (params.detector_blur > 0) {
        late_f = gaussian_blur(late_f, params.detector_blur);
        early_f = gaussian_blur(early_f, params.detector_blur);
    }
    late_f = detail::normalize_robust(late_f);
    early_f = detail::normalize_robust(early_f);

    RegistrationResult res;
    res.warped_late = late;
    res.homography = Homography::identity();

    const auto kp_late = detect_and_describe(late_f, params.keypoints);
    const auto kp_early = detect_and_describe(early_f, params.keypoints);
    auto matches = detail::match_descriptors(kp_late, kp_early, params.ratio_test);
    {
        const double max_log_scale = std::log(params.max_scale_ratio);
        const double max_rot = params.max_rotation_deg * M_PI / 180.0;
        std::vector<detail::Match> kept;
        for (const auto& m : matches) {
            const auto& a = kp_late.keypoints[m.a];
            const auto& b = kp_early.keypoints[m.b];
            if (std::abs(std::log(a.sigma / b.sigma)) > max_log_scale) continue;
            if (std::abs(std::remainder(a.orientation - b.orientation, 2.0 * M_PI)) > max_rot)
                continue;
            kept.push_back(m);
        }
        matches = std::move(kept);
    }
    if (static_cast<int>(matches.size()) < params.min_inliers) return res;

    std::vector<std::array<double, 2>> src(matches.size()), dst(matches.size());
    for (size_t m = 0; m < matches.size(); ++m) {
        src[m] = {kp_late.keypoints[matches[m].a].x, kp_late.keypoints[matches[m].a].y};
        dst[m] = {kp_early.keypoints[matches[m].b].x, kp_early.keypoints[matches[m].b].y};
    }

    Rng rng(params.ransac_seed);
    const double thr2 = params.ransac_threshold_px * params.ransac_threshold_px;
    const double min_quad_area = 0.004 * early.height() * early.width();
    std::vector<int> best_inliers;
    double best_score = 1e300;  // MSAC: sum of truncated squared errors
    const int n = static_cast<int>(matches.size());
    for (int it = 0; it < params.ransac_iters; ++it) {
        std::array<int, 4> pick{};
        for (int i = 0; i < 4; ++i) {
            bool fresh;
            do {
                pick[i] = rng.uniform_int(0, n - 1);
                fresh = true;
                for (int j = 0; j < i; ++j) fresh &= pick[j] != pick[i];
            } while (!fresh);
        }
        std::array<std::array<double, 2>, 4> quad{src[pick[0]], src[pick[1]], src[pick[2]],
                                                  src[pick[3]]};
        if (detail::degenerate_quad(quad, min_quad_area)) continue;

        Homography h;
        try {
            h = fit_homography({src[pick[0]], src[pick[1]], src[pick[2]], src[pick[3]]},
                               {dst[pick[0]], dst[pick[1]], dst[pick[2]], dst[pick[3]]});
        } catch (const InvalidArgument&) {
            continue;
        }
        if (!h.invertible()) continue;

        std::vector<int> inliers;
        double score = 0.0;
        for (int m = 0; m < n; ++m) {
            const auto q = h.apply(src[m][0], src[m][1]);
            const double dx = q[0] - dst[m][0], dy = q[1] - dst[m][1];
            const double e2 = dx * dx + dy * dy;
            if (e2 < thr2) inliers.push_back(m);
            score += std::min(e2, thr2);
        }
        if (score < best_score &&
            static_cast<int>(inliers.size()) >= std::max(4, params.min_inliers)) {
            best_score = score;
            best_inliers = std::move(inliers);
        }
    }
    if (static_cast<int>(best_inliers.size()) < std::max(4, params.min_inliers)) return res;

    // least-squares refit on the consensus set
    Homography h = Homography::identity();
    {
        std::vector<std::array<double, 2>> s, d;
        for (const int m : best_inliers) {
            s.push_back(src[m]);
            d.push_back(dst[m]);
        }
        h = detail::fit_by_support(s, d, early.height(), early.width());
    }

    // guided re-matching: with the coarse homography fixed, every late
    // keypoint picks its best-descriptor neighbor among early keypoints that
    // fall within the gating radius of its predicted position, and the
    // widened correspondence set is refit. The radius tightens per round so
    // ridge-sliding correspondences drop out of the final fit.
    std::vector<std::array<double, 2>> gsrc, gdst;
    const double radii[3] = {params.ransac_threshold_px, 1.5, 1.0};
    for (int round = 0; round < 3; ++round) {
        std::vector<std::array<double, 2>> rsrc, rdst;
        const double r2 = radii[round] * radii[round];
        for (size_t a = 0; a < kp_late.keypoints.size(); ++a) {
            const auto& ka = kp_late.keypoints[a];
            const auto pred = h.apply(ka.x, ka.y);
            int best = -1;
            float best_d2 = 4.0f;  // descriptors are unit norm, d^2 <= 4
            for (size_t b = 0; b < kp_early.keypoints.size(); ++b) {
                const auto& kb = kp_early.keypoints[b];
                const double ddx = kb.x - pred[0], ddy = kb.y - pred[1];
                if (ddx * ddx + ddy * ddy > r2) continue;
                float dot = 0.0f;
                for (int j = 0; j < 128; ++j)
                    dot += kp_late.descriptors[a][j] * kp_early.descriptors[b][j];
                const float d2 = 2.0f - 2.0f * dot;
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = static_cast<int>(b);
                }
            }
            if (best >= 0) {
                rsrc.push_back({ka.x, ka.y});
                rdst.push_back({kp_early.keypoints[best].x, kp_early.keypoints[best].y});
            }
        }
        if (static_cast<int>(rsrc.size()) < std::max(4, params.min_inliers)) break;
        const Homography cand =
            detail::fit_by_support(rsrc, rdst, early.height(), early.width());
        if (!cand.invertible() ||
            max_corner_displacement(cand, early.height(), early.width()) >
                std::hypot(early.height(), early.width()))
            break;
        h = cand;
        gsrc = std::move(rsrc);
        gdst = std::move(rdst);
    }

    int n_inl = 0;
    double err = 0.0;
    if (!gsrc.empty()) {
        for (size_t m = 0; m < gsrc.size(); ++m) {
            const auto q = h.apply(gsrc[m][0], gsrc[m][1]);
            err += std::hypot(q[0] - gdst[m][0], q[1] - gdst[m][1]);
        }
        err /= gsrc.size();
        n_inl = static_cast<int>(gsrc.size());
    } else {
        for (const int m : best_inliers) {
            const auto q = h.apply(src[m][0], src[m][1]);
            err += std::hypot(q[0] - dst[m][0], q[1] - dst[m][1]);
        }
        err /= best_inliers.size();
        n_inl = static_cast<int>(best_inliers.size());
    }

    if (!h.invertible()) return res;  // soft failure, keep identity
    h = detail::photometric_refine(late_f, early_f, h);
    if (!h.invertible()) return res;
    res.homography = h;
    res.n_inliers = n_inl;
    res.mean_reprojection_error = err;
    res.success = true;
    res.warped_late = warp_homography(late, h, 0.0f);
    return res;
}

}  // namespace angiodiff::preprocess
