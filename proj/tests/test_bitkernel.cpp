#include <doctest.h>

#include <chrono>
#include <random>

#include "dab/bitkernel.hpp"
#include "dab/reference.hpp"
#include "dab/rng.hpp"

using namespace dab;

namespace {

std::vector<float> random_pm1(std::size_t n, std::mt19937& gen) {
    std::vector<float> v(n);
    for (float& x : v) x = (gen() & 1u) ? 1.0f : -1.0f;
    return v;
}

BinarizedFilter random_filter(std::size_t n, std::mt19937& gen) {
    std::vector<float> w(n);
    for (float& x : w) x = uniform_float(gen, -1.0f, 1.0f);
    return binarize_dab(w);
}

} // namespace

TEST_CASE("packed bits keep padding clear") {
    PackedBits b(65);
    CHECK(b.word_count() == 2);
    b.set(64, true);
    b.set(3, true);
    CHECK(b.popcount() == 2);
    CHECK(b.words()[1] == 1u);
    b.set(64, false);
    CHECK(b.popcount() == 1);
    CHECK_THROWS_AS(b.get(65), Error);
    CHECK_THROWS_AS(b.set(70, true), Error);
}

TEST_CASE("pack_signs encodes plus one as a set bit") {
    std::vector<float> x{1, -1, 1, 1};
    PackedBits b = pack_signs(x);
    CHECK(b.words()[0] == 13u); // 0b1101
    CHECK(b.size() == 4);

    std::vector<float> ones(64, 1.0f);
    PackedBits full = pack_signs(ones);
    CHECK(full.word_count() == 1);
    CHECK(full.words()[0] == ~std::uint64_t(0));

    std::vector<float> long_ones(65, 1.0f);
    PackedBits two = pack_signs(long_ones);
    CHECK(two.word_count() == 2);
    CHECK(two.words()[1] == 1u); // only bit 0 of the tail word

    std::vector<float> bad{1.0f, 0.5f};
    try {
        pack_signs(bad);
        FAIL("expected an encoding error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Encoding);
    }
}

TEST_CASE("masked popcount intersects the two vectors") {
    std::vector<float> x{1, -1, 1, 1}; // bits 1101
    PackedBits bits = pack_signs(x);
    PackedBits mask(4);
    mask.set(0, true); // 0b0001
    CHECK(masked_popcount(bits, mask) == 1);

    PackedBits all(4);
    for (std::size_t i = 0; i < 4; ++i) all.set(i, true);
    CHECK(masked_popcount(bits, all) == bits.popcount());

    PackedBits disjoint(4);
    disjoint.set(1, true); // bits has a 0 there
    CHECK(masked_popcount(bits, disjoint) == 0);

    PackedBits longer(5);
    CHECK_THROWS_AS(masked_popcount(bits, longer), Error);
}

TEST_CASE("popcount dot matches the hand example") {
    std::vector<float> x{1, -1, 1, 1};
    PackedBits input = pack_signs(x);
    BinarizedFilter f;
    f.n = 4;
    f.k = 1;
    f.alpha = 5.0f;
    f.beta = 1.0f;
    f.mask = PackedBits(4);
    f.mask.set(0, true);
    CHECK(dab_dot(input, f) == doctest::Approx(6.0f));

    std::vector<float> all_pos(4, 1.0f);
    CHECK(dab_dot(pack_signs(all_pos), f) ==
          doctest::Approx(f.alpha * 1 + f.beta * 3));

    PackedBits wrong(5);
    CHECK_THROWS_AS(dab_dot(wrong, f), Error);
}

TEST_CASE("popcount dot equals the float dot on random pairs") {
    std::mt19937 gen(77);
    for (int it = 0; it < 500; ++it) {
        std::size_t n = 2 + uniform_u32(gen, 200);
        std::vector<float> x = random_pm1(n, gen);
        BinarizedFilter f = random_filter(n, gen);
        std::vector<float> w = reconstruct(f);
        double want = 0.0;
        for (std::size_t i = 0; i < n; ++i) want += double(x[i]) * w[i];
        CHECK(dab_dot(pack_signs(x), f) ==
              doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("unit scales reduce to the classic xnor-popcount dot") {
    std::mt19937 gen(88);
    for (int it = 0; it < 10000; ++it) {
        std::size_t n = 2 + uniform_u32(gen, 100);
        std::vector<float> x = random_pm1(n, gen);
        std::vector<float> w = random_pm1(n, gen);
        PackedBits xb = pack_signs(x);
        PackedBits wb = pack_signs(w);

        BinarizedFilter f;
        f.n = n;
        f.alpha = 1.0f;
        f.beta = -1.0f;
        f.mask = wb;
        f.k = wb.popcount();

        long matches = 0;
        for (std::size_t w_i = 0; w_i < xb.word_count(); ++w_i) {
            std::uint64_t same = ~(xb.words()[w_i] ^ wb.words()[w_i]);
            if (w_i == xb.word_count() - 1 && n % 64 != 0)
                same &= (std::uint64_t(1) << (n % 64)) - 1;
            matches += std::popcount(same);
        }
        float classic = float(2 * matches - long(n));
        CHECK(dab_dot(xb, f) == classic);
    }
}

TEST_CASE("word-level group sums are exact integers") {
    std::mt19937 gen(99);
    for (int it = 0; it < 300; ++it) {
        std::size_t n = 1 + uniform_u32(gen, 300);
        std::vector<float> x = random_pm1(n, gen);
        PackedBits xb = pack_signs(x);
        PackedBits e(n);
        for (std::size_t i = 0; i < n; ++i)
            if (gen() & 1u) e.set(i, true);
        long k = long(e.popcount());
        long by_words = 2L * long(masked_popcount(xb, e)) - k;
        long by_elements = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (e.get(i)) by_elements += x[i] > 0 ? 1 : -1;
        CHECK(by_words == by_elements);
    }
}

TEST_CASE("packed gemm matches the float oracle and beats it by 4x") {
    const std::size_t m = 64, n = 4096, nf = 256;
    std::mt19937 gen(111);

    PackedMatrix inputs(m, n);
    RealTensor sign_mat({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            bool plus = gen() & 1u;
            sign_mat.data[i * n + j] = plus ? 1.0f : -1.0f;
            if (plus) inputs.set(i, j, true);
        }

    std::vector<BinarizedFilter> filters;
    filters.reserve(nf);
    for (std::size_t j = 0; j < nf; ++j) filters.push_back(random_filter(n, gen));

    RealTensor recon({n, nf});
    for (std::size_t j = 0; j < nf; ++j) {
        std::vector<float> w = reconstruct(filters[j]);
        for (std::size_t i = 0; i < n; ++i) recon.data[i * nf + j] = w[i];
    }

    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    RealTensor oracle = reference_matmul(sign_mat, recon);
    auto t1 = clock::now();

    double best = 1e18;
    RealTensor fast;
    for (int rep = 0; rep < 3; ++rep) {
        auto s = clock::now();
        fast = dab_gemm(inputs, filters);
        auto e = clock::now();
        best = std::min(best, std::chrono::duration<double>(e - s).count());
    }
    double oracle_sec = std::chrono::duration<double>(t1 - t0).count();

    REQUIRE(fast.shape == oracle.shape);
    for (std::size_t i = 0; i < m * nf; ++i)
        CHECK(fast.data[i] ==
              doctest::Approx(oracle.data[i]).epsilon(1e-4));
    CHECK(oracle_sec / best >= 4.0);
    MESSAGE("packed gemm speedup over float oracle: ", oracle_sec / best, "x");
}

TEST_CASE("packed gemm degenerate and threaded cases") {
    std::mt19937 gen(121);
    std::size_t n = 100;
    BinarizedFilter f = random_filter(n, gen);

    PackedMatrix one(1, n);
    std::vector<float> x = random_pm1(n, gen);
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > 0) one.set(0, i, true);
    RealTensor r = dab_gemm(one, {f});
    CHECK(r.data[0] == dab_dot(pack_signs(x), f));

    PackedMatrix empty(0, n);
    RealTensor re = dab_gemm(empty, {f});
    CHECK(re.shape == std::vector<std::size_t>{0, 1});
    CHECK(re.numel() == 0);

    PackedMatrix batch(16, n);
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (gen() & 1u) batch.set(i, j, true);
    std::vector<BinarizedFilter> fs;
    for (int j = 0; j < 5; ++j) fs.push_back(random_filter(n, gen));
    RealTensor seq = dab_gemm(batch, fs, 1);
    RealTensor par = dab_gemm(batch, fs, 4);
    CHECK(seq.data == par.data);

    BinarizedFilter wrong = random_filter(n + 1, gen);
    CHECK_THROWS_AS(dab_gemm(batch, {wrong}), Error);
}

TEST_CASE("binary conv matches a -1 padded float lowering") {
    std::mt19937 gen(131);
    RealTensor input({2, 3, 8, 8});
    for (float& v : input.data) v = (gen() & 1u) ? 1.0f : -1.0f;

    std::vector<BinarizedFilter> filters;
    for (int j = 0; j < 4; ++j) filters.push_back(random_filter(27, gen));

    int stride = 1, pad = 1;
    RealTensor got = binary_conv2d(input, filters, stride, pad);
    std::size_t oh = conv_out_dim(8, 3, stride, pad);
    std::size_t ow = conv_out_dim(8, 3, stride, pad);
    REQUIRE(got.shape == std::vector<std::size_t>{2, 4, oh, ow});

    RealTensor wmat({4, 27});
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<float> w = reconstruct(filters[j]);
        std::copy(w.begin(), w.end(), wmat.ptr() + j * 27);
    }
    for (std::size_t item = 0; item < 2; ++item) {
        RealTensor cols = im2col(input, item, 3, 3, stride, pad, -1.0f);
        RealTensor want = reference_matmul(wmat, cols);
        for (std::size_t i = 0; i < want.numel(); ++i) {
            float g = got.data[item * want.numel() + i];
            CHECK(g == doctest::Approx(want.data[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("one-by-one binary conv is a per-pixel dot") {
    RealTensor input({1, 2, 2, 2}, {1, -1, 1, 1, -1, -1, 1, -1});
    std::vector<float> w{0.8f, -0.6f};
    BinarizedFilter f = binarize_dab_fixed_k(w, 1, Direction::Descending);
    RealTensor out = binary_conv2d(input, {f}, 1, 0);
    REQUIRE(out.shape == std::vector<std::size_t>{1, 1, 2, 2});
    for (int p = 0; p < 4; ++p) {
        float c0 = input.data[p];
        float c1 = input.data[4 + p];
        CHECK(out.data[p] ==
              doctest::Approx(c0 * f.alpha + c1 * f.beta));
    }
}

TEST_CASE("binary conv rejects bad inputs") {
    RealTensor not_pm1({1, 1, 2, 2}, {1, -1, 0.5f, 1});
    std::mt19937 gen(141);
    BinarizedFilter f = random_filter(4, gen);
    CHECK_THROWS_AS(binary_conv2d(not_pm1, {f}, 1, 1), Error);

    RealTensor ok({1, 1, 2, 2}, {1, -1, 1, 1});
    BinarizedFilter wrong_len = random_filter(5, gen);
    CHECK_THROWS_AS(binary_conv2d(ok, {wrong_len}, 1, 0), Error);
    CHECK_THROWS_AS(binary_conv2d(ok, {}, 1, 0), Error);
}
