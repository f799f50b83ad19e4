#include <catch2/catch_amalgamated.hpp>

#include "angiodiff/core/rng.hpp"
#include "angiodiff/preprocess/hist_equalize.hpp"
#include "angiodiff/preprocess/sector_filter.hpp"
#include "angiodiff/synth/triplet.hpp"
#include "angiodiff/synth/vessel_tree.hpp"

using namespace angiodiff;
using namespace angiodiff::preprocess;

TEST_CASE("equalizing a constant channel maps all pixels to one value") {
    Image img(16, 16, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) img.at(c, y, x) = 0.25f * (c + 1);
    const Image out = sharpen_slo(img);
    for (int c = 0; c < 3; ++c) {
        const float v = out.at(c, 0, 0);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) REQUIRE(out.at(c, y, x) == v);
    }
}

TEST_CASE("equalizing an already-uniform channel is a near-identity") {
    // exactly one pixel per (bin, sub-position): uniform histogram by construction
    Image img(256, 256, 1);
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x)
            img.at(0, y, x) = (y * 256 + x + 0.5f) / 65536.0f;
    const Image out = sharpen_slo(img);
    for (size_t i = 0; i < out.size(); ++i)
        REQUIRE(std::abs(out.data()[i] - img.data()[i]) <= 1.0f / 256.0f + 1e-6f);
}

TEST_CASE("two-level channel maps through the empirical CDF") {
    Image img(16, 16, 1);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) img.at(0, y, x) = (y < 8) ? 0.4f : 0.6f;
    const Image out = sharpen_slo(img);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const float expect = (y < 8) ? 0.5f : 1.0f;
            REQUIRE(std::abs(out.at(0, y, x) - expect) < 1e-6f);
        }
}

TEST_CASE("equalization preserves in-channel rank order") {
    Rng rng(5);
    Image img(32, 32, 3);
    for (float& v : img.data()) v = static_cast<float>(rng.uniform());
    const Image out = sharpen_slo(img);
    for (int c = 0; c < 3; ++c)
        for (int trial = 0; trial < 2000; ++trial) {
            const int y1 = rng.uniform_int(0, 31), x1 = rng.uniform_int(0, 31);
            const int y2 = rng.uniform_int(0, 31), x2 = rng.uniform_int(0, 31);
            if (img.at(c, y1, x1) > img.at(c, y2, x2))
                REQUIRE(out.at(c, y1, x1) >= out.at(c, y2, x2));
        }
}

TEST_CASE("sector filter maps a constant image to c/(N+1) at every scale") {
    const float c = 0.73f;
    Image img(32, 32, 1, c);
    for (const int radius : {3, 5, 9}) {
        SectorFilterParams p;
        p.window_radii = {radius};
        p.scale_weights = {1.0};
        const Image out = sector_filter(img, p);
        for (const float v : out.data())
            REQUIRE(std::abs(v - c / (p.n_sectors + 1)) < 1e-6f);
    }
    // multi-scale combination keeps the same value (weights sum to 1)
    SectorFilterParams p;
    const Image out = sector_filter(img, p);
    for (const float v : out.data()) REQUIRE(std::abs(v - c / 9.0f) < 1e-6f);
}

namespace {

// independent single-pixel oracle for alpha = 0: (N*(I_m - I) + I) / (N + 1)
double sector_center_oracle(const Image& img, int y, int x, int radius, int n_sectors) {
    std::vector<double> sum(n_sectors, 0.0);
    std::vector<int> cnt(n_sectors, 0);
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (std::hypot(dy, dx) > radius + 1e-9) continue;
            int s = static_cast<int>((std::atan2((double)dy, (double)dx) + M_PI) /
                                     (2.0 * M_PI) * n_sectors);
            s = std::clamp(s, 0, n_sectors - 1);
            sum[s] += img.at(0, y + dy, x + dx);
            ++cnt[s];
        }
    const double center = img.at(0, y, x);
    double i_max = -1e300;
    for (int s = 0; s < n_sectors; ++s)
        i_max = std::max(i_max, cnt[s] ? sum[s] / cnt[s] : center);
    return (n_sectors * (i_max - center) + center) / (n_sectors + 1);
}

}  // namespace

TEST_CASE("sector filter with alpha 0 follows the dominant-sector formula") {
    // right half brighter: the rightward sectors dominate I_m
    Image img(32, 32, 1, 0.2f);
    for (int y = 0; y < 32; ++y)
        for (int x = 16; x < 32; ++x) img.at(0, y, x) = 0.9f;

    SectorFilterParams p;
    p.window_radii = {5};
    p.scale_weights = {1.0};
    p.alpha = 0.0;
    const Image out = sector_filter(img, p);

    for (const auto& [y, x] : std::vector<std::pair<int, int>>{{16, 10}, {16, 16}, {8, 20}}) {
        const double expect = sector_center_oracle(img, y, x, 5, p.n_sectors);
        REQUIRE(std::abs(out.at(0, y, x) - expect) < 1e-6);
    }

    // monotone in I_m: brightening the dominant sector raises the response at
    // a pixel whose window reaches it
    Image brighter = img;
    for (int y = 0; y < 32; ++y)
        for (int x = 16; x < 32; ++x) brighter.at(0, y, x) = 0.95f;
    const Image out2 = sector_filter(brighter, p);
    REQUIRE(out2.at(0, 16, 13) > out.at(0, 16, 13));
}

TEST_CASE("sector filter with alpha 0 is equivariant to intensity scaling") {
    Rng rng(9);
    Image img(40, 40, 1);
    for (float& v : img.data()) v = static_cast<float>(rng.uniform());
    SectorFilterParams p;
    p.alpha = 0.0;
    const Image a = sector_filter(img, p);

    const float k = 2.7f;
    Image scaled = img;
    for (float& v : scaled.data()) v *= k;
    const Image b = sector_filter(scaled, p);
    for (size_t i = 0; i < a.size(); ++i)
        REQUIRE(std::abs(b.data()[i] - k * a.data()[i]) < 1e-6f);
}

TEST_CASE("vessel enhancement responds stronger on vessels than background") {
    using namespace angiodiff::synth;
    SectorFilterParams p;  // frozen defaults: radii {3,5,9}, N=8, alpha=0.5
    double on = 0, off = 0;
    double dark_on = 0, dark_off = 0;
    int n_on = 0, n_off = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const VesselMap vm = generate_vessel_tree(seed, 64, 64);
        const PairedTriplet t = render_triplet(vm, LesionSpec{}, 0.0, seed);
        // bright-vessel angiogram through the documented convention
        const Image resp = vessel_enhance(t.early_fa, p);
        // dark-vessel image (SLO green plane) straight through the filter
        Image green(64, 64, 1);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) green.at(0, y, x) = t.slo.at(1, y, x);
        const Image resp_dark = sector_filter(green, p);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (vm.grid.at(0, y, x) > 0.5f) {
                    on += resp.at(0, y, x);
                    dark_on += resp_dark.at(0, y, x);
                    ++n_on;
                } else {
                    off += resp.at(0, y, x);
                    dark_off += resp_dark.at(0, y, x);
                    ++n_off;
                }
            }
    }
    REQUIRE(on / n_on > off / n_off);
    REQUIRE(dark_on / n_on > dark_off / n_off);
}

TEST_CASE("sector filter validates its parameters and window size") {
    Image img(16, 16, 1, 0.5f);
    SectorFilterParams p;
    REQUIRE_THROWS_AS(sector_filter(img, p), InvalidArgument);  // radius 9 window > 16

    SectorFilterParams bad = p;
    bad.window_radii = {5, 3};
    bad.scale_weights = {0.5, 0.5};
    Image big(64, 64, 1, 0.5f);
    REQUIRE_THROWS_AS(sector_filter(big, bad), InvalidArgument);

    bad = p;
    bad.n_sectors = 3;
    REQUIRE_THROWS_AS(sector_filter(big, bad), InvalidArgument);

    bad = p;
    bad.scale_weights = {0.5, 0.25, 0.5};
    REQUIRE_THROWS_AS(sector_filter(big, bad), InvalidArgument);
}
