#include <doctest.h>

#include <cmath>
#include <random>

#include "dab/grad.hpp"
#include "dab/rng.hpp"

using namespace dab;

TEST_CASE("surrogate gradient on the one-outlier filter") {
    std::vector<float> w{5, 1, 1, 1};
    BinarizedFilter f = binarize_dab(w);
    REQUIRE(f.k == 1);
    std::vector<float> ones{1, 1, 1, 1};
    std::vector<float> g = dab_backward_paper(w, f, ones);
    CHECK(g[0] == doctest::Approx(1.0f));
    CHECK(g[1] == doctest::Approx(4.0f / 3.0f));
    CHECK(g[2] == doctest::Approx(4.0f / 3.0f));
    CHECK(g[3] == doctest::Approx(4.0f / 3.0f));
}

TEST_CASE("surrogate gradient on a two-weight filter") {
    std::vector<float> w{0.5f, -0.5f};
    BinarizedFilter f = binarize_dab_fixed_k(w, 1, Direction::Descending);
    REQUIRE(f.mask.get(0));
    std::vector<float> ones{1, 1};
    std::vector<float> g = dab_backward_paper(w, f, ones);
    CHECK(g[0] == doctest::Approx(1.25f));
    CHECK(g[1] == doctest::Approx(-1.25f));
}

TEST_CASE("indicator variant gates instead of scaling") {
    std::vector<float> w{0.5f, -0.5f};
    BinarizedFilter f = binarize_dab_fixed_k(w, 1, Direction::Descending);
    std::vector<float> ones{1, 1};
    std::vector<float> g = dab_backward_paper(w, f, ones, SteKind::Indicator);
    CHECK(g[0] == doctest::Approx(1.5f));
    CHECK(g[1] == doctest::Approx(-0.5f));
}

TEST_CASE("zero upstream kills the gradient") {
    std::vector<float> w{0.9f, 0.1f, -0.4f};
    BinarizedFilter f = binarize_dab(w);
    std::vector<float> zero{0, 0, 0};
    for (float v : dab_backward_paper(w, f, zero)) CHECK(v == 0.0f);
    for (float v : dab_backward_projection(f, zero)) CHECK(v == 0.0f);
}

TEST_CASE("projection backward averages within groups") {
    std::vector<float> w{5, 1, 1, 1};
    BinarizedFilter f = binarize_dab(w);
    std::vector<float> u{4, 3, 3, 3};
    std::vector<float> g = dab_backward_projection(f, u);
    CHECK(g == std::vector<float>{4, 3, 3, 3});

    std::vector<float> c{2.5f, 2.5f, 2.5f, 2.5f};
    std::vector<float> gc = dab_backward_projection(f, c);
    for (float v : gc) CHECK(v == doctest::Approx(2.5f));
}

TEST_CASE("projection backward matches finite differences off the split") {
    // Two tight clusters, so +-h moves neither the split nor the mask.
    std::vector<float> w{0.9f, -0.8f, 0.85f, -0.75f, 0.88f, -0.7f};
    const float h = 1e-3f;
    BinarizedFilter f = binarize_dab(w);
    std::mt19937 gen(33);
    std::vector<float> u(w.size());
    for (float& v : u) v = uniform_float(gen, -1.0f, 1.0f);
    std::vector<float> g = dab_backward_projection(f, u);

    for (std::size_t i = 0; i < w.size(); ++i) {
        std::vector<float> wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        BinarizedFilter fp = binarize_dab(wp);
        BinarizedFilter fm = binarize_dab(wm);
        REQUIRE(fp.mask == f.mask);
        REQUIRE(fm.mask == f.mask);
        std::vector<float> rp = reconstruct(fp);
        std::vector<float> rm = reconstruct(fm);
        double fd = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j)
            fd += double(u[j]) * (rp[j] - rm[j]) / (2.0 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("both modes are linear in upstream") {
    std::mt19937 gen(44);
    for (int it = 0; it < 50; ++it) {
        std::size_t n = 2 + uniform_u32(gen, 14);
        std::vector<float> w(n), u1(n), u2(n), mix(n);
        for (auto* vec : {&w, &u1, &u2})
            for (float& v : *vec) v = uniform_float(gen, -1.0f, 1.0f);
        float a = uniform_float(gen, -2.0f, 2.0f);
        float b = uniform_float(gen, -2.0f, 2.0f);
        for (std::size_t i = 0; i < n; ++i) mix[i] = a * u1[i] + b * u2[i];

        BinarizedFilter f = binarize_dab(w);
        auto check_linear = [&](auto&& backward) {
            std::vector<float> g1 = backward(u1);
            std::vector<float> g2 = backward(u2);
            std::vector<float> gm = backward(mix);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(gm[i] ==
                      doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-5));
        };
        check_linear([&](const std::vector<float>& u) {
            return dab_backward_paper(w, f, u);
        });
        check_linear([&](const std::vector<float>& u) {
            return dab_backward_projection(f, u);
        });
    }
}

TEST_CASE("surrogate gradients stay inside the derived bound") {
    std::mt19937 gen(55);
    for (int it = 0; it < 100; ++it) {
        std::size_t n = 2 + uniform_u32(gen, 30);
        std::vector<float> w(n);
        for (float& v : w) v = uniform_float(gen, -1.0f, 1.0f);
        BinarizedFilter f = binarize_dab(w);

        double t_l1 = 0.0, r_l1 = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            (f.mask.get(i) ? t_l1 : r_l1) += std::abs(w[i]);
        double bound = 1.0 / f.k + t_l1 / f.k + 1.0 / (n - f.k) +
                       r_l1 / (n - f.k);

        std::vector<float> ones(n, 1.0f);
        for (float v : dab_backward_paper(w, f, ones))
            CHECK(std::abs(v) <= bound + 1e-6);
    }
}

TEST_CASE("sign activation maps zero to plus one") {
    RealTensor x({3}, {0.3f, -2.0f, 0.0f});
    RealTensor y = sign_activation_forward(x);
    CHECK(y.data == std::vector<float>{1, -1, 1});

    RealTensor again = sign_activation_forward(y);
    CHECK(again.data == y.data);
    for (float v : y.data) CHECK((v == 1.0f || v == -1.0f));
}

TEST_CASE("sign activation backward gates on the unit interval") {
    RealTensor x({2}, {0.5f, 2.0f});
    RealTensor u({2}, {1.0f, 1.0f});
    RealTensor g = sign_activation_backward(x, u);
    CHECK(g.data == std::vector<float>{1, 0});

    RealTensor inside({3}, {-1.0f, 0.0f, 1.0f});
    RealTensor up({3}, {3.0f, -2.0f, 5.0f});
    CHECK(sign_activation_backward(inside, up).data == up.data);

    RealTensor zero({2}, {0.0f, 0.0f});
    CHECK(sign_activation_backward(x, zero).data ==
          std::vector<float>{0.0f, 0.0f});
}

TEST_CASE("length mismatches raise shape errors") {
    std::vector<float> w{1, 2, 3};
    BinarizedFilter f = binarize_dab(w);
    std::vector<float> short_up{1, 2};
    CHECK_THROWS_AS(dab_backward_paper(w, f, short_up), Error);
    CHECK_THROWS_AS(dab_backward_projection(f, short_up), Error);
    RealTensor x({2});
    RealTensor u({3});
    CHECK_THROWS_AS(sign_activation_backward(x, u), Error);
}
