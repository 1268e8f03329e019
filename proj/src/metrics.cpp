#include "iid/metrics.hpp"

#include <cmath>

#include "iid/error.hpp"

namespace iid {

namespace {

void check_same_dims(const BinaryMask& a, const BinaryMask& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeMismatch("masks disagree in shape");
}

}  // namespace

double iou(const BinaryMask& a, const BinaryMask& b) {
    check_same_dims(a, b);
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool av = a.bits[i] != 0, bv = b.bits[i] != 0;
        inter += av && bv;
        uni += av || bv;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / uni;
}

MaskScore mask_score(const BinaryMask& predicted, const BinaryMask& truth) {
    check_same_dims(predicted, truth);
    int inter = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < predicted.bits.size(); ++i) {
        const bool pv = predicted.bits[i] != 0, tv = truth.bits[i] != 0;
        inter += pv && tv;
        np += pv;
        nt += tv;
    }
    MaskScore s;
    s.iou = iou(predicted, truth);
    s.precision = np == 0 ? 1.0 : static_cast<double>(inter) / np;
    s.recall = nt == 0 ? 1.0 : static_cast<double>(inter) / nt;
    return s;
}

namespace {

void check_same_dims(const LatentImage& a, const LatentImage& b) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeMismatch("latents disagree in shape");
}

}  // namespace

double pixel_l1(const LatentImage& a, const LatentImage& b) {
    check_same_dims(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) sum += std::abs(a.values[i] - b.values[i]);
    return sum / static_cast<double>(a.values.size());
}

double pixel_l2(const LatentImage& a, const LatentImage& b) {
    check_same_dims(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.values.size());
}

}  // namespace iid
