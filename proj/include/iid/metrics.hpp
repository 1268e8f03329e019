#pragma once

#include "iid/arrays.hpp"
#include "iid/blender.hpp"

namespace iid {

struct MaskScore {
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// |a n b| / |a u b|; 1.0 when both masks are empty (agreement on "nothing").
double iou(const BinaryMask& a, const BinaryMask& b);

// Scores `predicted` against `truth`. An empty predicted mask has precision 1,
// an empty truth recall 1.
MaskScore mask_score(const BinaryMask& predicted, const BinaryMask& truth);

// Mean absolute / mean squared element difference.
double pixel_l1(const LatentImage& a, const LatentImage& b);
double pixel_l2(const LatentImage& a, const LatentImage& b);

}  // namespace iid
