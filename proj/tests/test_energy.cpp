#include <doctest.h>

#include <cmath>

#include "spikefuse/energy.hpp"
#include "spikefuse/rng.hpp"

using namespace spikefuse;

namespace {

// Random binary train feeding a same-extent layer (stride-1, same-padding
// geometry, so every spike fans out to exactly K^2 * C_out accumulates).
std::vector<Tensor> random_train(Rng& rng, int c, int h, int w, int steps, double density) {
    std::vector<Tensor> train;
    for (int s = 0; s < steps; ++s) {
        Tensor t({c, h, w});
        for (double& v : t.data) v = rng.uniform() < density ? 1.0 : 0.0;
        train.push_back(t);
    }
    return train;
}

long long count_spikes(const std::vector<Tensor>& train) {
    long long n = 0;
    for (const Tensor& t : train)
        for (double v : t.data) n += v == 1.0 ? 1 : 0;
    return n;
}

}  // namespace

TEST_SUITE_BEGIN("energy");

TEST_CASE("dense reference count follows the layer formula") {
    LayerOpSpec l{3, 2, 8, 8, 4};
    CHECK(count_ann_macs({l}) == 9.0 * 2 * 8 * 8 * 4);
    CHECK(count_ann_macs({l}) == 4608.0);

    LayerOpSpec unit{1, 1, 1, 1, 1};
    CHECK(count_ann_macs({unit}) == 1.0);

    CHECK(count_ann_macs({l, l}) == 2 * count_ann_macs({l}));
    CHECK_THROWS_AS(count_ann_macs({}), ConfigError);
}

TEST_CASE("spiking counts: silent and saturated networks") {
    std::vector<LayerOpSpec> layers = {
        {7, 1, 16, 16, 8},   // input layer, dense every step
        {3, 8, 16, 16, 8},
        {3, 8, 16, 16, 16},
    };
    int steps = 5;
    SUBCASE("silent network costs only the input layer") {
        FiringRateStats fr{{0.0, 0.0}};
        auto counts = count_snn_ops(layers, fr, steps);
        CHECK(counts.ac == 0.0);
        CHECK(counts.mac == steps * layers[0].dense_ops());
    }
    SUBCASE("saturated rates reproduce the dense count of deeper layers") {
        FiringRateStats fr{{1.0, 1.0}};
        auto counts = count_snn_ops(layers, fr, steps);
        double dense_tail = count_ann_macs({layers[1], layers[2]});
        CHECK(counts.ac == steps * dense_tail);
    }
    SUBCASE("missing rates rejected") {
        FiringRateStats fr{{0.5}};
        CHECK_THROWS_AS(count_snn_ops(layers, fr, steps), ConfigError);
    }
    SUBCASE("out-of-range rates rejected") {
        FiringRateStats fr{{0.5, 1.5}};
        CHECK_THROWS_AS(count_snn_ops(layers, fr, steps), DomainError);
    }
}

TEST_CASE("measured firing rates") {
    SUBCASE("all-zero, half, all-one") {
        Tensor zero = Tensor::zeros({2, 4});
        Tensor one = Tensor::full({2, 4}, 1.0);
        Tensor half = Tensor::from({2, 4}, {1, 0, 1, 0, 1, 0, 1, 0});
        auto stats = measure_firing_rate({{zero}, {half}, {one}});
        CHECK(stats.fr == std::vector<double>{0.0, 0.5, 1.0});
    }
    SUBCASE("matches direct counting on random trains") {
        Rng rng(71);
        for (int trial = 0; trial < 10; ++trial) {
            auto train = random_train(rng, 3, 5, 4, 6, rng.uniform(0.1, 0.9));
            auto stats = measure_firing_rate({train});
            double want = static_cast<double>(count_spikes(train)) / (3.0 * 5 * 4 * 6);
            CHECK(stats.fr[0] == doctest::Approx(want).epsilon(1e-15));
        }
    }
    SUBCASE("non-binary trains rejected") {
        CHECK_THROWS_AS(measure_firing_rate({{Tensor::full({2}, 0.5)}}), DomainError);
    }
}

TEST_CASE("accumulate count equals per-spike enumeration exactly") {
    // Full fan-out convention: each spike entering a same-extent layer
    // contributes exactly K^2 * C_out accumulates, so the rate-based count
    // reduces to (#spikes) * K^2 * C_out and must match to the integer.
    Rng rng(72);
    for (int trial = 0; trial < 20; ++trial) {
        int c_in = rng.uniform_int(1, 4);
        int c_out = rng.uniform_int(1, 8);
        int k = 2 * rng.uniform_int(0, 2) + 1;  // 1, 3, 5
        int h = rng.uniform_int(2, 9), w = rng.uniform_int(2, 9);
        int steps = rng.uniform_int(1, 6);
        auto train = random_train(rng, c_in, h, w, steps, rng.uniform(0.05, 0.95));

        std::vector<LayerOpSpec> layers = {
            {5, 1, h, w, c_in},       // input layer (dense)
            {k, c_in, h, w, c_out},   // spike-driven layer under test
        };
        auto stats = measure_firing_rate({train});
        auto counts = count_snn_ops(layers, stats, steps);

        long long enumerated = count_spikes(train) * static_cast<long long>(k) * k * c_out;
        CHECK(std::llround(counts.ac) == enumerated);
        CHECK(std::fabs(counts.ac - static_cast<double>(enumerated)) <= 1e-6);
    }
}

TEST_CASE("eta is monotone nondecreasing in every firing rate") {
    std::vector<LayerOpSpec> snn = {
        {11, 1, 16, 16, 8}, {5, 8, 8, 8, 16}, {3, 16, 4, 4, 32}};
    std::vector<LayerOpSpec> ann = snn;
    Rng rng(73);
    for (int trial = 0; trial < 10; ++trial) {
        FiringRateStats fr{{rng.uniform(0, 1), rng.uniform(0, 1)}};
        auto base = energy_report(ann, snn, fr, 5);
        for (size_t i = 0; i < fr.fr.size(); ++i) {
            FiringRateStats bumped = fr;
            bumped.fr[i] = std::min(1.0, bumped.fr[i] + 0.1);
            auto more = energy_report(ann, snn, bumped, 5);
            CHECK(more.eta >= base.eta);
        }
    }
}

TEST_CASE("energy report applies the default per-op energies") {
    std::vector<LayerOpSpec> snn = {{3, 1, 4, 4, 2}, {3, 2, 4, 4, 2}};
    FiringRateStats fr{{0.25}};
    auto report = energy_report(snn, snn, fr, 4);
    CHECK(report.e_mac == 4.6);
    CHECK(report.e_ac == 0.9);
    CHECK(report.phi_ann == 4.6 * report.mac_ann);
    CHECK(report.phi_snn ==
          doctest::Approx(4.6 * report.mac_snn + 0.9 * report.ac_snn).epsilon(1e-15));
    CHECK(report.eta == doctest::Approx(report.phi_snn / report.phi_ann).epsilon(1e-15));
}

TEST_CASE("eta is invariant under joint scaling of both energies") {
    std::vector<LayerOpSpec> snn = {{7, 1, 8, 8, 4}, {3, 4, 8, 8, 8}, {3, 8, 4, 4, 8}};
    FiringRateStats fr{{0.3, 0.6}};
    auto a = energy_report(snn, snn, fr, 5);
    auto b = energy_report(snn, snn, fr, 5, 2 * 4.6, 2 * 0.9);
    CHECK(a.eta == doctest::Approx(b.eta).epsilon(1e-12));
}

TEST_CASE("silent matched architectures give the closed-form ratio") {
    std::vector<LayerOpSpec> layers = {{5, 1, 8, 8, 4}, {3, 4, 8, 8, 8}, {3, 8, 8, 8, 8}};
    int steps = 5;
    FiringRateStats fr{{0.0, 0.0}};
    auto report = energy_report(layers, layers, fr, steps);
    double want = steps * layers[0].dense_ops() / count_ann_macs(layers);
    CHECK(report.eta == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("saturated rates satisfy the closed-form energy identity") {
    std::vector<LayerOpSpec> layers = {{5, 1, 8, 8, 4}, {3, 4, 8, 8, 8}, {3, 8, 8, 8, 8}};
    int steps = 3;
    FiringRateStats fr{{1.0, 1.0}};
    auto report = energy_report(layers, layers, fr, steps);
    double tail = count_ann_macs({layers[1], layers[2]});
    double want_phi = 4.6 * steps * layers[0].dense_ops() + 0.9 * steps * tail;
    CHECK(report.phi_snn == doctest::Approx(want_phi).epsilon(1e-12));
    CHECK(report.phi_snn >= report.phi_ann * (0.9 / 4.6) * (tail / count_ann_macs(layers)));
}

TEST_CASE("report serializations carry the ratio both ways") {
    std::vector<LayerOpSpec> snn = {{3, 1, 4, 4, 2}, {3, 2, 4, 4, 2}};
    FiringRateStats fr{{0.5}};
    auto report = energy_report(snn, snn, fr, 2);
    auto kv = energy_report_kv(report);
    CHECK(kv.find("eta=") != std::string::npos);
    CHECK(kv.find("one_minus_eta=") != std::string::npos);
    CHECK(kv.find("e_mac_pj=4.6") != std::string::npos);
    auto text = energy_report_text(report);
    CHECK(text.find("ratio eta") != std::string::npos);
    CHECK(text.find("savings 1-eta") != std::string::npos);
}

TEST_SUITE_END();
