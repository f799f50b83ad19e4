#pragma once

#include <array>
#include <cstdint>

#include "angiodiff/core/image.hpp"

namespace angiodiff::preprocess {

// Per-channel histogram equalization over 256 bins. Every channel is mapped
// through its own inclusive empirical CDF: out = P(value_bin <= bin(v)).
// The mapping is monotone, so per-channel rank order is preserved.
inline Image sharpen_slo(const Image& img) {
    if (img.empty()) throw InvalidArgument("sharpen_slo: empty image");
    const int n = img.height() * img.width();
    Image out(img.height(), img.width(), img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        std::array<int64_t, 256> hist{};
        const float* src = img.plane(c);
        for (int i = 0; i < n; ++i) {
            const int bin = std::min(255, static_cast<int>(src[i] * 256.0f));
            ++hist[std::max(0, bin)];
        }
        std::array<double, 256> cdf{};
        int64_t run = 0;
        for (int b = 0; b < 256; ++b) {
            run += hist[b];
            cdf[b] = static_cast<double>(run) / n;
        }
        float* dst = out.plane(c);
        for (int i = 0; i < n; ++i) {
            const int bin = std::clamp(static_cast<int>(src[i] * 256.0f), 0, 255);
            dst[i] = static_cast<float>(cdf[bin]);
        }
    }
    return out;
}

}  // namespace angiodiff::preprocess
