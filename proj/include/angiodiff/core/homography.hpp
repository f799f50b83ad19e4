#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "angiodiff/core/errors.hpp"
#include "angiodiff/core/image.hpp"

namespace angiodiff {

// 3x3 projective transform in (x, y) image coordinates, normalized so the
// bottom-right entry is 1. Maps content positions: a feature at p in the
// source appears at apply(p) in the warped output.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major

    static Homography identity() { return Homography{}; }

    static Homography translation(double dx, double dy) {
        Homography h;
        h.m = {1, 0, dx, 0, 1, dy, 0, 0, 1};
        return h;
    }

    static Homography from_matrix(const Eigen::Matrix3d& M) {
        Homography h;
        Eigen::Matrix3d N = M;
        if (std::abs(N(2, 2)) > 1e-300) N /= N(2, 2);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) h.m[r * 3 + c] = N(r, c);
        return h;
    }

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d M;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) M(r, c) = m[r * 3 + c];
        return M;
    }

    bool invertible() const { return std::abs(matrix().determinant()) > 1e-12; }

    Homography inverse() const {
        if (!invertible()) throw InvalidArgument("Homography: not invertible");
        return from_matrix(matrix().inverse());
    }

    Homography compose(const Homography& rhs) const {  // this ∘ rhs
        return from_matrix(matrix() * rhs.matrix());
    }

    // (x, y) -> (x', y')
    std::array<double, 2> apply(double x, double y) const {
        const double X = m[0] * x + m[1] * y + m[2];
        const double Y = m[3] * x + m[4] * y + m[5];
        const double W = m[6] * x + m[7] * y + m[8];
        return {X / W, Y / W};
    }

    bool is_identity(double tol = 1e-12) const {
        const Homography id;
        for (int i = 0; i < 9; ++i)
            if (std::abs(m[i] - id.m[i]) > tol) return false;
        return true;
    }
};

// Exact homography through point pairs (least squares for > 4 pairs) using
// the direct linear transform with Hartley normalization.
inline Homography fit_homography(const std::vector<std::array<double, 2>>& src,
                                 const std::vector<std::array<double, 2>>& dst) {
    const size_t n = src.size();
    if (n < 4 || dst.size() != n)
        throw InvalidArgument("fit_homography: need >= 4 point pairs");

    auto normalizer = [](const std::vector<std::array<double, 2>>& pts) {
        double mx = 0, my = 0;
        for (const auto& p : pts) { mx += p[0]; my += p[1]; }
        mx /= pts.size();
        my /= pts.size();
        double d = 0;
        for (const auto& p : pts) d += std::hypot(p[0] - mx, p[1] - my);
        d /= pts.size();
        const double s = d > 1e-12 ? std::sqrt(2.0) / d : 1.0;
        Eigen::Matrix3d T;
        T << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
        return T;
    };
    const Eigen::Matrix3d Ts = normalizer(src);
    const Eigen::Matrix3d Td = normalizer(dst);

    Eigen::MatrixXd A(2 * n, 9);
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = Ts * Eigen::Vector3d(src[i][0], src[i][1], 1.0);
        const Eigen::Vector3d q = Td * Eigen::Vector3d(dst[i][0], dst[i][1], 1.0);
        const double x = p(0), y = p(1), u = q(0), v = q(1);
        A.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        A.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d Hn;
    Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    const Eigen::Matrix3d H = Td.inverse() * Hn * Ts;
    return Homography::from_matrix(H);
}

// Warp so that content at p in `img` lands at h.apply(p): out(q) = img(h^-1 q).
// Bilinear sampling, out-of-range pixels filled with `fill`.
inline Image warp_homography(const Image& img, const Homography& h, float fill = 0.0f) {
    const Homography inv = h.inverse();
    Image out(img.height(), img.width(), img.channels());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            const bool inside = sx >= -0.5 && sx <= img.width() - 0.5 &&
                                sy >= -0.5 && sy <= img.height() - 0.5;
            for (int c = 0; c < img.channels(); ++c)
                out.at(c, y, x) = inside ? img.sample_bilinear(c, sy, sx) : fill;
        }
    return out;
}

// Largest displacement of the four image corners under h, in pixels.
inline double max_corner_displacement(const Homography& h, int height, int width) {
    const double xs[2] = {0.0, static_cast<double>(width - 1)};
    const double ys[2] = {0.0, static_cast<double>(height - 1)};
    double worst = 0.0;
    for (double x : xs)
        for (double y : ys) {
            const auto [u, v] = h.apply(x, y);
            worst = std::max(worst, std::hypot(u - x, v - y));
        }
    return worst;
}

}  // namespace angiodiff
