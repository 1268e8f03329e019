#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iid/blender.hpp"
#include "iid/disentangle.hpp"
#include "iid/layout.hpp"

namespace iid {

enum class Dtype : std::uint8_t { F32 = 1, U8 = 2 };

// In-memory image of an ATNS file. Exactly one of f32/u8 is populated,
// matching dtype; dims are row-major.
struct TensorData {
    Dtype dtype = Dtype::F32;
    std::vector<std::uint64_t> dims;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;

    std::uint64_t element_count() const;
};

// Byte layout: "ATNS", u32 version (=1), u8 dtype code, u8 ndim, ndim x u64
// dims, payload. All multi-byte fields little-endian regardless of host.
void write_tensor(const std::string& path, const TensorData& t);
TensorData read_tensor(const std::string& path);

// Binary PGM (P5), maxval 255. Masks map to 0/255; grid values are taken as
// [0, 1] and scaled with round-half-up.
void export_pgm(const BinaryMask& mask, const std::string& path);
void export_pgm(const Grid2D& grid, const std::string& path);
BinaryMask read_pgm_mask(const std::string& path);   // nonzero byte -> true
Grid2D read_pgm_grid(const std::string& path);       // byte / 255

TensorData tensor_from_grid(const Grid2D& g);
TensorData tensor_from_mask(const BinaryMask& m);
TensorData tensor_from_latent(const LatentImage& z);
TensorData tensor_from_stack(const HeadMapStack& s);
TensorData tensor_from_attention(const RawAttention& a);

Grid2D grid_from_tensor(const TensorData& t);
BinaryMask mask_from_tensor(const TensorData& t);
LatentImage latent_from_tensor(const TensorData& t);
HeadMapStack stack_from_tensor(const TensorData& t);
RawAttention attention_from_tensor(const TensorData& t);  // validates rows

}  // namespace iid
