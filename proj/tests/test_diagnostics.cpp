#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dab/diagnostics.hpp"
#include "doctest.h"

using namespace dab;

namespace {

Dataset quad(std::size_t per_class, std::uint32_t seed) {
    return generate_sketches(sketch_class_names(), per_class, 16, seed);
}

} // namespace

TEST_CASE("sampling is deterministic, unique, and capped at eight per layer") {
    auto cfg = make_convnet(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState st = init_state(cfg, 3);

    TrajectoryLog a(st, 42);
    TrajectoryLog b(st, 42);
    TrajectoryLog c(st, 43);
    CHECK(a.sampled() == b.sampled());
    CHECK(a.sampled() != c.sampled());

    // conv2 has 16 filters, conv3 has 32: eight sampled from each
    CHECK(a.sampled().size() == 16);
    std::set<std::pair<std::size_t, std::size_t>> uniq(a.sampled().begin(),
                                                       a.sampled().end());
    CHECK(uniq.size() == a.sampled().size());
    for (auto [layer, filter] : a.sampled())
        CHECK(filter < st.layers[layer].spec.units);

    // layers with fewer filters than the cap are taken whole
    auto mlp = make_mlp(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState ms = init_state(mlp, 3);
    TrajectoryLog d(ms, 1, 128);
    CHECK(d.sampled().size() == 64); // the one binarized dense layer
}

TEST_CASE("each capture appends one record per sampled filter") {
    auto cfg = make_mlp(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState st = init_state(cfg, 7);
    refresh_binarization(cfg, st);

    TrajectoryLog log(st, 7);
    std::size_t m = log.sampled().size();
    REQUIRE(m == 8);

    log.capture_epoch(st, 0);
    CHECK(log.records().size() == m);
    log.capture_epoch(st, 1);
    CHECK(log.records().size() == 2 * m);

    for (const TrajectoryRecord& r : log.records()) {
        CHECK(r.k_norm > 0.0);
        CHECK(r.k_norm < 1.0);
        CHECK(r.k == std::size_t(std::lround(r.k_norm * double(r.n))));
    }
}

TEST_CASE("capture before binarization is reported") {
    auto cfg = make_mlp(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState st = init_state(cfg, 7); // filters never computed
    TrajectoryLog log(st, 7);
    CHECK_THROWS_AS(log.capture_epoch(st, 0), Error);
}

TEST_CASE("symmetric initial weights split into near-opposite levels") {
    auto cfg = make_convnet(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState st = init_state(cfg, 19);
    refresh_binarization(cfg, st);

    TrajectoryLog log(st, 19);
    log.capture_epoch(st, 0);

    std::vector<double> asym;
    for (const TrajectoryRecord& r : log.records())
        asym.push_back(std::abs(double(r.alpha) + double(r.beta)) /
                       std::abs(double(r.alpha)));
    REQUIRE(!asym.empty());
    std::sort(asym.begin(), asym.end());
    double median = asym[asym.size() / 2];
    CHECK(median < 0.2);
}

TEST_CASE("attaching the log does not change training") {
    Dataset train = quad(12, 55);
    Dataset test = quad(4, 56);
    Hyperparams hp;
    hp.epochs = 2;
    hp.batch = 16;
    hp.seed = 9;

    auto cfg = make_convnet(BinMode::WBin, Scheme::Dab, 4, 16);

    TrainState plain = init_state(cfg, 9);
    auto m1 = train_network(cfg, plain, train, test, hp);

    TrainState observed = init_state(cfg, 9);
    TrajectoryLog log(observed, 9);
    auto m2 = train_network(cfg, observed, train, test, hp, log.hook());

    CHECK(log.records().size() == log.sampled().size() * 2);
    for (std::size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i].train_loss == m2[i].train_loss);
        CHECK(m1[i].test_acc == m2[i].test_acc);
    }
    for (std::size_t i = 0; i < plain.layers.size(); ++i) {
        CHECK(plain.layers[i].w.data == observed.layers[i].w.data);
        CHECK(plain.layers[i].bn_mean.data == observed.layers[i].bn_mean.data);
    }
}

TEST_CASE("csv output carries the documented schema") {
    auto cfg = make_mlp(BinMode::WBin, Scheme::Dab, 4, 16);
    TrainState st = init_state(cfg, 3);
    refresh_binarization(cfg, st);
    TrajectoryLog log(st, 3);
    log.capture_epoch(st, 1);

    std::ostringstream out;
    log.write_csv(out);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,layer,filter,n,K,K_norm,alpha,beta");

    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == log.records().size());

    // full-precision nets have nothing to sample but still write a header
    auto fp = make_mlp(BinMode::FPrec, Scheme::Dab, 4, 16);
    TrainState fs = init_state(fp, 3);
    TrajectoryLog empty_log(fs, 3);
    empty_log.capture_epoch(fs, 0);
    CHECK(empty_log.records().empty());
    std::ostringstream out2;
    empty_log.write_csv(out2);
    CHECK(out2.str() == "epoch,layer,filter,n,K,K_norm,alpha,beta\n");
}
