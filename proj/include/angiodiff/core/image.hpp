#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "angiodiff/core/errors.hpp"

namespace angiodiff {

// Planar float image, values nominally in [0, 1]. Channel-major layout
// (c, y, x) so per-channel passes run on contiguous memory.
class Image {
public:
    Image() = default;

    Image(int height, int width, int channels, float fill = 0.0f)
        : h_(height), w_(width), c_(channels),
          pix_(static_cast<size_t>(height) * width * channels, fill) {
        if (height <= 0 || width <= 0 || channels <= 0)
            throw InvalidArgument("Image: dimensions must be positive");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    bool empty() const { return pix_.empty(); }
    size_t size() const { return pix_.size(); }

    float& at(int c, int y, int x) { return pix_[idx(c, y, x)]; }
    float at(int c, int y, int x) const { return pix_[idx(c, y, x)]; }

    float* plane(int c) { return pix_.data() + static_cast<size_t>(c) * h_ * w_; }
    const float* plane(int c) const { return pix_.data() + static_cast<size_t>(c) * h_ * w_; }

    std::vector<float>& data() { return pix_; }
    const std::vector<float>& data() const { return pix_; }

    bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    // Clamp-to-edge bilinear lookup at real-valued (y, x).
    float sample_bilinear(int c, double y, double x) const {
        const int y0 = static_cast<int>(std::floor(y));
        const int x0 = static_cast<int>(std::floor(x));
        const double fy = y - y0;
        const double fx = x - x0;
        auto px = [&](int yy, int xx) {
            yy = std::clamp(yy, 0, h_ - 1);
            xx = std::clamp(xx, 0, w_ - 1);
            return static_cast<double>(at(c, yy, xx));
        };
        const double top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        const double bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        return static_cast<float>(top * (1.0 - fy) + bot * fy);
    }

    void clamp01() {
        for (float& v : pix_) v = std::clamp(v, 0.0f, 1.0f);
    }

private:
    size_t idx(int c, int y, int x) const {
        return (static_cast<size_t>(c) * h_ + y) * w_ + x;
    }

    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<float> pix_;
};

// Mean over channels; 1-channel images pass through as a copy.
inline Image to_gray(const Image& img) {
    if (img.channels() == 1) return img;
    Image out(img.height(), img.width(), 1);
    const float inv = 1.0f / img.channels();
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            float s = 0.0f;
            for (int c = 0; c < img.channels(); ++c) s += img.at(c, y, x);
            out.at(0, y, x) = s * inv;
        }
    return out;
}

// Separable Gaussian blur with clamp-to-edge borders. Kernel radius 3*sigma.
inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;

    const int h = img.height(), w = img.width();
    Image tmp(h, w, img.channels());
    Image out(h, w, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, w - 1));
                tmp.at(c, y, x) = static_cast<float>(acc);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
                out.at(c, y, x) = static_cast<float>(acc);
            }
    }
    return out;
}

// Area-average resample to (oh, ow). Exact box average for integer
// downsampling factors; fractional source boxes are weighted by overlap.
inline Image resize_area(const Image& img, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw InvalidArgument("resize_area: output dims must be positive");
    const int h = img.height(), w = img.width();
    Image out(oh, ow, img.channels());
    const double sy = static_cast<double>(h) / oh;
    const double sx = static_cast<double>(w) / ow;
    for (int c = 0; c < img.channels(); ++c)
        for (int oy = 0; oy < oh; ++oy) {
            const double y0 = oy * sy, y1 = (oy + 1) * sy;
            const int iy0 = static_cast<int>(std::floor(y0));
            const int iy1 = std::min(h, static_cast<int>(std::ceil(y1)));
            for (int ox = 0; ox < ow; ++ox) {
                const double x0 = ox * sx, x1 = (ox + 1) * sx;
                const int ix0 = static_cast<int>(std::floor(x0));
                const int ix1 = std::min(w, static_cast<int>(std::ceil(x1)));
                double acc = 0.0, area = 0.0;
                for (int yy = iy0; yy < iy1; ++yy) {
                    const double wy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
                    for (int xx = ix0; xx < ix1; ++xx) {
                        const double wx = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
                        acc += wy * wx * img.at(c, yy, xx);
                        area += wy * wx;
                    }
                }
                out.at(c, oy, ox) = static_cast<float>(acc / area);
            }
        }
    return out;
}

inline double mean_abs_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InvalidArgument("mean_abs_diff: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / a.size();
}

}  // namespace angiodiff
