#pragma once

#include "iid/disentangle.hpp"

namespace iid {

// Kernels come in serial/parallel pairs that share their per-element inner
// loops: each parallel thread owns whole output elements and accumulates in
// the same fixed order as the serial path, so the two are bitwise identical
// at any thread count. The unsuffixed entry points dispatch on a global
// toggle; tests flip it to prove equality, benchmarks call the variants
// directly.
void set_parallel_enabled(bool on);
bool parallel_enabled();

// c[m x n] = a[m x k] * b[k x n], all row-major
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n);

// Scaled dot-product attention over every head at once. q: [rows_q][heads*dim],
// k/v: [rows_kv][heads*dim], head h occupying columns [h*dim, (h+1)*dim).
// Scores are scaled by 1/sqrt(dim) and softmaxed per row through the shared
// masked-softmax kernel (mask may be null; logit row r maps to matrix row
// mask_row_offset + r). out: [rows_q][heads*dim]. capture, when non-null,
// receives the post-softmax rows as [heads][rows_q][rows_kv].
void attention_core(const double* q, const double* k, const double* v, int heads, int rows_q,
                    int rows_kv, int dim, const AttentionMaskMatrix* mask, int mask_row_offset,
                    double* out, double* capture);
void attention_core_serial(const double* q, const double* k, const double* v, int heads,
                           int rows_q, int rows_kv, int dim, const AttentionMaskMatrix* mask,
                           int mask_row_offset, double* out, double* capture);
void attention_core_parallel(const double* q, const double* k, const double* v, int heads,
                             int rows_q, int rows_kv, int dim, const AttentionMaskMatrix* mask,
                             int mask_row_offset, double* out, double* capture);

}  // namespace iid
