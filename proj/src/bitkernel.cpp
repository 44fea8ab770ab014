#include "dab/bitkernel.hpp"

#include <bit>
#include <cmath>
#include <thread>

#include "dab/reference.hpp"

namespace dab {

PackedBits pack_signs(std::span<const float> x) {
    PackedBits out(x.size());
    std::uint64_t* w = out.words();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 1.0f)
            w[i >> 6] |= std::uint64_t(1) << (i & 63);
        else if (x[i] != -1.0f)
            fail(ErrorKind::Encoding, "pack_signs input must be exactly +1 or -1");
    }
    return out;
}

PackedBits pack_signs(const RealTensor& x) { return pack_signs(x.span()); }

float dab_dot(const PackedBits& input, const BinarizedFilter& f) {
    if (input.size() != f.n)
        fail(ErrorKind::Shape, "input and filter lengths differ");
    long s = 2L * static_cast<long>(input.popcount()) - static_cast<long>(f.n);
    long s_e = 2L * static_cast<long>(masked_popcount(input, f.mask)) -
               static_cast<long>(f.k);
    return f.alpha * static_cast<float>(s_e) +
           f.beta * static_cast<float>(s - s_e);
}

RealTensor dab_gemm(const PackedMatrix& inputs,
                    const std::vector<BinarizedFilter>& filters,
                    int threads) {
    std::size_t m = inputs.rows();
    std::size_t n = inputs.cols();
    std::size_t nf = filters.size();
    for (const BinarizedFilter& f : filters)
        if (f.n != n)
            fail(ErrorKind::Shape, "filter width does not match input rows");

    RealTensor out({m, nf});
    if (m == 0 || nf == 0) return out;

    std::size_t wpr = inputs.words_per_row();
    auto run = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::uint64_t* row = inputs.row(i);
            long pop = 0;
            for (std::size_t w = 0; w < wpr; ++w) pop += std::popcount(row[w]);
            long s = 2L * pop - static_cast<long>(n);
            float* out_row = out.ptr() + i * nf;
            for (std::size_t j = 0; j < nf; ++j) {
                const BinarizedFilter& f = filters[j];
                const std::uint64_t* mw = f.mask.words();
                long masked = 0;
                for (std::size_t w = 0; w < wpr; ++w)
                    masked += std::popcount(row[w] & mw[w]);
                long s_e = 2L * masked - static_cast<long>(f.k);
                out_row[j] = f.alpha * static_cast<float>(s_e) +
                             f.beta * static_cast<float>(s - s_e);
            }
        }
    };

    if (threads <= 1 || m < 2) {
        run(0, m);
        return out;
    }
    std::size_t workers = std::min<std::size_t>(threads, m);
    std::size_t chunk = (m + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
        std::size_t lo = t * chunk, hi = std::min(m, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(run, lo, hi);
    }
    for (auto& th : pool) th.join();
    return out;
}

RealTensor binary_conv2d(const RealTensor& input,
                         const std::vector<BinarizedFilter>& filters,
                         int stride, int pad, int threads) {
    Shape4 s = as_shape4(input);
    if (filters.empty()) fail(ErrorKind::Shape, "no filters given");
    std::size_t n = filters[0].n;
    for (const BinarizedFilter& f : filters)
        if (f.n != n) fail(ErrorKind::Shape, "filters differ in length");
    if (n % s.c != 0)
        fail(ErrorKind::Shape, "filter length is not a multiple of channels");

    // Only square kernels pass through here; the spatial extent is implied
    // by the flat filter length.
    std::size_t spatial = n / s.c;
    auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(spatial))));
    if (side * side != spatial)
        fail(ErrorKind::Shape, "filter length does not form a square kernel");
    int kh = static_cast<int>(side), kw = kh;

    std::size_t oh = conv_out_dim(s.h, kh, stride, pad);
    std::size_t ow = conv_out_dim(s.w, kw, stride, pad);
    std::size_t positions = oh * ow;
    std::size_t nf = filters.size();

    RealTensor out({s.n, nf, oh, ow});
    for (std::size_t item = 0; item < s.n; ++item) {
        RealTensor cols = im2col(input, item, kh, kw, stride, pad, -1.0f);
        PackedMatrix pm(positions, n);
        for (std::size_t p = 0; p < positions; ++p) {
            std::uint64_t* row = pm.row(p);
            for (std::size_t i = 0; i < n; ++i) {
                float v = cols.data[i * positions + p];
                if (v == 1.0f)
                    row[i >> 6] |= std::uint64_t(1) << (i & 63);
                else if (v != -1.0f)
                    fail(ErrorKind::Encoding,
                         "binary_conv2d input must be exactly +1 or -1");
            }
        }
        RealTensor prod = dab_gemm(pm, filters, threads); // [positions, nf]
        float* dst = out.ptr() + item * nf * positions;
        for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t j = 0; j < nf; ++j)
                dst[j * positions + p] = prod.data[p * nf + j];
    }
    return out;
}

} // namespace dab
