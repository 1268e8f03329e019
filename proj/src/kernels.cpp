#include "iid/kernels.hpp"

#include <atomic>
#include <cmath>
#include <vector>

#include "iid/error.hpp"

namespace iid {

namespace {

std::atomic<bool> g_parallel{true};

inline void matmul_row(const double* a, const double* b, double* c, int k, int n, int row) {
    const double* ar = a + static_cast<std::size_t>(row) * k;
    double* cr = c + static_cast<std::size_t>(row) * n;
    for (int j = 0; j < n; ++j) cr[j] = 0.0;
    for (int p = 0; p < k; ++p) {
        const double av = ar[p];
        const double* br = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

// One (head, query) pair: score row, softmax, value mix.
inline void attention_unit(const double* q, const double* k, const double* v, int heads,
                           int rows_kv, int dim, const AttentionMaskMatrix* mask,
                           int mask_row_offset, int head, int row, double* scores, double* probs,
                           double* out) {
    const int width = heads * dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    const double* qr = q + static_cast<std::size_t>(row) * width + head * dim;
    for (int kv = 0; kv < rows_kv; ++kv) {
        const double* kr = k + static_cast<std::size_t>(kv) * width + head * dim;
        double dot = 0.0;
        for (int d = 0; d < dim; ++d) dot += qr[d] * kr[d];
        scores[kv] = dot * scale;
    }
    masked_softmax_rows(scores, 1, rows_kv, mask, mask_row_offset + row, probs);
    double* or_ = out + static_cast<std::size_t>(row) * width + head * dim;
    for (int d = 0; d < dim; ++d) or_[d] = 0.0;
    for (int kv = 0; kv < rows_kv; ++kv) {
        const double p = probs[kv];
        const double* vr = v + static_cast<std::size_t>(kv) * width + head * dim;
        for (int d = 0; d < dim; ++d) or_[d] += p * vr[d];
    }
}

void attention_impl(const double* q, const double* k, const double* v, int heads, int rows_q,
                    int rows_kv, int dim, const AttentionMaskMatrix* mask, int mask_row_offset,
                    double* out, double* capture, bool parallel) {
    if (heads <= 0 || rows_q <= 0 || rows_kv <= 0 || dim <= 0)
        throw InvalidValue("attention dims must be positive");
    const int units = heads * rows_q;

    if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int u = 0; u < units; ++u) {
            std::vector<double> scores(rows_kv), probs(rows_kv);
            const int head = u / rows_q;
            const int row = u % rows_q;
            attention_unit(q, k, v, heads, rows_kv, dim, mask, mask_row_offset, head, row,
                           scores.data(), probs.data(), out);
            if (capture != nullptr) {
                double* cr =
                    capture + (static_cast<std::size_t>(head) * rows_q + row) * rows_kv;
                for (int kv = 0; kv < rows_kv; ++kv) cr[kv] = probs[kv];
            }
        }
    } else {
        std::vector<double> scores(rows_kv), probs(rows_kv);
        for (int u = 0; u < units; ++u) {
            const int head = u / rows_q;
            const int row = u % rows_q;
            attention_unit(q, k, v, heads, rows_kv, dim, mask, mask_row_offset, head, row,
                           scores.data(), probs.data(), out);
            if (capture != nullptr) {
                double* cr =
                    capture + (static_cast<std::size_t>(head) * rows_q + row) * rows_kv;
                for (int kv = 0; kv < rows_kv; ++kv) cr[kv] = probs[kv];
            }
        }
    }
}

}  // namespace

void set_parallel_enabled(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    if (parallel_enabled())
        matmul_parallel(a, b, c, m, k, n);
    else
        matmul_serial(a, b, c, m, k, n);
}

void attention_core_serial(const double* q, const double* k, const double* v, int heads,
                           int rows_q, int rows_kv, int dim, const AttentionMaskMatrix* mask,
                           int mask_row_offset, double* out, double* capture) {
    attention_impl(q, k, v, heads, rows_q, rows_kv, dim, mask, mask_row_offset, out, capture,
                   false);
}

void attention_core_parallel(const double* q, const double* k, const double* v, int heads,
                             int rows_q, int rows_kv, int dim, const AttentionMaskMatrix* mask,
                             int mask_row_offset, double* out, double* capture) {
    attention_impl(q, k, v, heads, rows_q, rows_kv, dim, mask, mask_row_offset, out, capture,
                   true);
}

void attention_core(const double* q, const double* k, const double* v, int heads, int rows_q,
                    int rows_kv, int dim, const AttentionMaskMatrix* mask, int mask_row_offset,
                    double* out, double* capture) {
    attention_impl(q, k, v, heads, rows_q, rows_kv, dim, mask, mask_row_offset, out, capture,
                   parallel_enabled());
}

}  // namespace iid
