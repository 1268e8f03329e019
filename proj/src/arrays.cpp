#include "iid/arrays.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "iid/error.hpp"

namespace iid {

int patches_per_side(int pixels, int patch) {
    if (pixels <= 0 || patch <= 0 || pixels % patch != 0)
        throw InvalidValue("image side must be a positive multiple of the patch size");
    return pixels / patch;
}

Grid2D make_grid(int height, int width, double fill) {
    if (height <= 0 || width <= 0) throw InvalidValue("grid dims must be positive");
    Grid2D g;
    g.height = height;
    g.width = width;
    g.values.assign(static_cast<std::size_t>(height) * width, fill);
    return g;
}

BinaryMask make_mask(int height, int width, bool fill) {
    if (height <= 0 || width <= 0) throw InvalidValue("mask dims must be positive");
    BinaryMask m;
    m.height = height;
    m.width = width;
    m.bits.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
    return m;
}

int BinaryMask::count() const {
    int n = 0;
    for (std::uint8_t b : bits) n += b != 0;
    return n;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
    if (v.empty()) throw InvalidValue("minmax_normalize: empty input");
    double mn = v[0], mx = v[0];
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidValue("minmax_normalize: non-finite input");
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    std::vector<double> out(v.size());
    if (mx == mn) return out;  // constant input: all zeros by convention
    // True division, not multiplication by a reciprocal: the extremes then
    // land exactly on 0 and 1, which makes normalization idempotent.
    const double range = mx - mn;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mn) / range;
    return out;
}

Grid2D reshape_to_grid(const std::vector<double>& v, int height, int width) {
    if (height <= 0 || width <= 0)
        throw ShapeMismatch("reshape_to_grid: dims must be positive");
    if (v.size() != static_cast<std::size_t>(height) * width)
        throw ShapeMismatch("reshape_to_grid: length does not match dims");
    Grid2D g;
    g.height = height;
    g.width = width;
    g.values = v;
    return g;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i / sigma) * (i / sigma));
        k[i + radius] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// One output row of a horizontal pass. Shared by the serial and parallel
// entry points so both produce bitwise-identical results.
void blur_row(const Grid2D& src, const std::vector<double>& k, int radius, int r, Grid2D& dst) {
    for (int c = 0; c < src.width; ++c) {
        double acc = 0.0;
        for (int off = -radius; off <= radius; ++off)
            acc += k[off + radius] * src.at(r, clamp_index(c + off, src.width));
        dst.at(r, c) = acc;
    }
}

void blur_col_row(const Grid2D& src, const std::vector<double>& k, int radius, int r, Grid2D& dst) {
    for (int c = 0; c < src.width; ++c) {
        double acc = 0.0;
        for (int off = -radius; off <= radius; ++off)
            acc += k[off + radius] * src.at(clamp_index(r + off, src.height), c);
        dst.at(r, c) = acc;
    }
}

Grid2D gaussian_filter_impl(const Grid2D& g, double sigma, bool parallel) {
    if (!(sigma >= 0.0)) throw InvalidValue("gaussian_filter: sigma must be >= 0");
    if (g.height <= 0 || g.width <= 0) throw InvalidValue("gaussian_filter: empty grid");
    if (sigma == 0.0) return g;

    const std::vector<double> k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    Grid2D tmp = make_grid(g.height, g.width);
    Grid2D out = make_grid(g.height, g.width);

    if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int r = 0; r < g.height; ++r) blur_row(g, k, radius, r, tmp);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int r = 0; r < g.height; ++r) blur_col_row(tmp, k, radius, r, out);
    } else {
        for (int r = 0; r < g.height; ++r) blur_row(g, k, radius, r, tmp);
        for (int r = 0; r < g.height; ++r) blur_col_row(tmp, k, radius, r, out);
    }
    return out;
}

}  // namespace

Grid2D gaussian_filter(const Grid2D& g, double sigma) { return gaussian_filter_impl(g, sigma, true); }

Grid2D gaussian_filter_serial(const Grid2D& g, double sigma) {
    return gaussian_filter_impl(g, sigma, false);
}

OtsuResult otsu_binarize(const Grid2D& g) {
    if (g.height <= 0 || g.width <= 0) throw InvalidValue("otsu_binarize: empty grid");
    if (g.cells() >= 65536) throw InvalidValue("otsu_binarize: grid too large");
    double mn = g.values[0], mx = g.values[0];
    for (double x : g.values) {
        if (!std::isfinite(x)) throw InvalidValue("otsu_binarize: non-finite input");
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    if (mx == mn) throw DegenerateHistogram("otsu_binarize: constant grid");

    constexpr int kBins = 256;
    std::int64_t counts[kBins] = {};
    const double inv_range = 1.0 / (mx - mn);
    for (double x : g.values) {
        int b = static_cast<int>((x - mn) * inv_range * kBins);
        if (b > kBins - 1) b = kBins - 1;
        if (b < 0) b = 0;
        counts[b]++;
    }

    const std::int64_t n = g.cells();
    std::int64_t s_tot = 0;
    for (int b = 0; b < kBins; ++b) s_tot += counts[b] * b;

    // Between-class variance for a split after bin b is
    // (s0*n - s_tot*w0)^2 / (w0*(n-w0)) up to a constant factor. Candidates
    // are compared by cross-multiplying the exact integer numerators and
    // denominators, so no floating-point rounding can flip a comparison.
    // With n < 2^16 and bin indices < 2^8 the products fit in 128 bits.
    int best = -1;
    __int128 best_num = 0;
    std::int64_t best_den = 1;
    std::int64_t w0 = 0, s0 = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += counts[b];
        s0 += counts[b] * b;
        const std::int64_t w1 = n - w0;
        if (w0 == 0 || w1 == 0) continue;
        const std::int64_t diff = s0 * n - s_tot * w0;
        const __int128 num = static_cast<__int128>(diff) * diff;
        const std::int64_t den = w0 * w1;
        if (best < 0 || num * best_den > best_num * den) {
            best = b;
            best_num = num;
            best_den = den;
        }
    }
    if (best < 0) throw DegenerateHistogram("otsu_binarize: all mass in one class");

    OtsuResult res;
    res.threshold = mn + (mx - mn) * (best + 1) / kBins;
    res.mask = make_mask(g.height, g.width);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) res.mask.set(r, c, g.at(r, c) > res.threshold);
    return res;
}

}  // namespace iid
