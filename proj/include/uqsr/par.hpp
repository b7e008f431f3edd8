#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uqsr::par {

// Reductions are accumulated into fixed-size chunks and combined in chunk
// order, so results are bit-identical for any thread count (including 1).
// Never use per-thread buffers for floating-point reductions: the mapping of
// iterations to threads changes with the thread count.
inline constexpr std::size_t kScalarChunk = 4096;
inline constexpr std::size_t kVectorChunk = 32;

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

/// Parallel elementwise loop; body(i) must only write state owned by index i.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    const std::int64_t sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < sn; ++i) body(static_cast<std::size_t>(i));
}

/// Deterministic parallel sum of term(i) for i in [0, n).
template <class Term>
double sum(std::size_t n, Term&& term) {
    const std::size_t nchunks = (n + kScalarChunk - 1) / kScalarChunk;
    if (nchunks <= 1) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += term(i);
        return s;
    }
    std::vector<double> partial(nchunks, 0.0);
    const std::int64_t sc = static_cast<std::int64_t>(nchunks);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < sc; ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * kScalarChunk;
        const std::size_t end = begin + kScalarChunk < n ? begin + kScalarChunk : n;
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += term(i);
        partial[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;
    return total;
}

/// Deterministic parallel count of indices satisfying pred.  Integer addition
/// is associative, so a plain reduction would already be exact; the chunked
/// form is kept for symmetry.
template <class Pred>
std::uint64_t count(std::size_t n, Pred&& pred) {
    const std::size_t nchunks = (n + kScalarChunk - 1) / kScalarChunk;
    std::vector<std::uint64_t> partial(nchunks, 0);
    const std::int64_t sc = static_cast<std::int64_t>(nchunks);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < sc; ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * kScalarChunk;
        const std::size_t end = begin + kScalarChunk < n ? begin + kScalarChunk : n;
        std::uint64_t k = 0;
        for (std::size_t i = begin; i < end; ++i) k += pred(i) ? 1 : 0;
        partial[static_cast<std::size_t>(c)] = k;
    }
    std::uint64_t total = 0;
    for (std::uint64_t k : partial) total += k;
    return total;
}

/// Deterministic parallel accumulation of per-item vectors into `out`
/// (length dim, zero-initialized by the caller).  body(i, acc) must add item
/// i's contribution into acc.  Partial buffers are per chunk, combined in
/// chunk order.  `chunk` must be a compile-time-fixed constant at each call
/// site (the chunking is part of the result's bit pattern); larger chunks
/// keep the partial-buffer footprint small when dim is large.
template <class Body>
void accumulate(std::size_t n, std::span<double> out, Body&& body,
                std::size_t chunk = kVectorChunk) {
    const std::size_t dim = out.size();
    const std::size_t nchunks = (n + chunk - 1) / chunk;
    if (nchunks <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i, out);
        return;
    }
    std::vector<double> partial(nchunks * dim, 0.0);
    const std::int64_t sc = static_cast<std::int64_t>(nchunks);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < sc; ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * chunk;
        const std::size_t end = begin + chunk < n ? begin + chunk : n;
        std::span<double> acc(partial.data() + static_cast<std::size_t>(c) * dim, dim);
        for (std::size_t i = begin; i < end; ++i) body(i, acc);
    }
    for (std::size_t c = 0; c < nchunks; ++c)
        for (std::size_t j = 0; j < dim; ++j) out[j] += partial[c * dim + j];
}

}  // namespace uqsr::par
