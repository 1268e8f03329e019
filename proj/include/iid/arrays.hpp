#pragma once

#include <cstdint>
#include <vector>

namespace iid {

// Side length of the square pixel patch mapped to one latent cell.
inline constexpr int kPatchSize = 16;

int patches_per_side(int pixels, int patch = kPatchSize);

// Row-major dense grid at patch resolution.
struct Grid2D {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    int cells() const { return height * width; }
};

Grid2D make_grid(int height, int width, double fill = 0.0);

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // 0 or 1, row-major

    bool test(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
    void set(int r, int c, bool v) { bits[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
    int cells() const { return height * width; }
    int count() const;
};

BinaryMask make_mask(int height, int width, bool fill = false);

// One attention map per head, all maps sharing the same grid dims.
struct HeadMapStack {
    std::vector<Grid2D> maps;

    int heads() const { return static_cast<int>(maps.size()); }
    int height() const { return maps.empty() ? 0 : maps.front().height; }
    int width() const { return maps.empty() ? 0 : maps.front().width; }
};

// Affine rescale to [0, 1]. A constant input maps to all zeros.
std::vector<double> minmax_normalize(const std::vector<double>& v);

Grid2D reshape_to_grid(const std::vector<double>& v, int height, int width);

// Separable blur, kernel radius ceil(3*sigma), replicate-edge padding.
// sigma == 0 returns the input unchanged. The two variants are bitwise
// identical; the serial one exists as the reference for the parallel path.
Grid2D gaussian_filter(const Grid2D& g, double sigma);
Grid2D gaussian_filter_serial(const Grid2D& g, double sigma);

struct OtsuResult {
    double threshold = 0.0;
    BinaryMask mask;
};

// Global threshold maximizing between-class variance over a 256-bin histogram
// spanning [min, max]. Candidate comparison is done in exact integer
// arithmetic, so the winner is the true argmax (ties resolved toward the
// smaller threshold). Sized for patch-scale grids: cell count must stay below
// 65536 for the integer comparison to be overflow-free. Constant input raises
// DegenerateHistogram. The mask is value > threshold.
OtsuResult otsu_binarize(const Grid2D& g);

}  // namespace iid
