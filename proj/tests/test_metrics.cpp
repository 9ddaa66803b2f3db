#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "seqseg/metrics.hpp"

using namespace seqseg;

namespace {

MaskVolume make_mask(std::array<int, 3> dims, std::array<double, 3> spacing,
                     const std::vector<std::array<int, 3>>& on) {
    MaskVolume m(dims, spacing);
    for (const auto& [z, y, x] : on) m.at(z, y, x) = 1;
    return m;
}

MaskVolume random_blob(std::uint64_t seed, std::array<int, 3> dims,
                       std::array<double, 3> spacing) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pz(1, dims[0] - 2), py(1, dims[1] - 2),
        px(1, dims[2] - 2);
    MaskVolume m(dims, spacing);
    const int cz = pz(rng), cy = py(rng), cx = px(rng);
    std::uniform_real_distribution<double> ur(1.2, 3.0);
    const double r = ur(rng);
    for (int z = 0; z < dims[0]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[2]; ++x)
                if ((z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx) <=
                    r * r)
                    m.at(z, y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("dsc enumeration oracle") {
    // |a|=4, |b|=6, |a∩b|=3 -> 2*3/10 = 0.6
    MaskVolume a = make_mask({1, 4, 4}, {1, 1, 1},
                             {{0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 1, 1}});
    MaskVolume b = make_mask({1, 4, 4}, {1, 1, 1},
                             {{0, 0, 1}, {0, 1, 0}, {0, 1, 1}, {0, 2, 0}, {0, 2, 1}, {0, 2, 2}});
    CHECK(dsc(a, b) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(dsc(a, a) == 1.0);
    CHECK(jaccard_index(a, b) == doctest::Approx(3.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("dsc conventions") {
    MaskVolume empty({1, 3, 3}, {1, 1, 1});
    MaskVolume one = make_mask({1, 3, 3}, {1, 1, 1}, {{0, 1, 1}});
    MaskVolume other = make_mask({1, 3, 3}, {1, 1, 1}, {{0, 0, 0}});
    CHECK(dsc(empty, empty) == 1.0);
    CHECK(jaccard_index(empty, empty) == 1.0);
    CHECK(dsc(empty, one) == 0.0);
    CHECK(dsc(one, other) == 0.0);
}

TEST_CASE("dsc-ji identity on random masks") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        MaskVolume a = random_blob(seed * 2, {6, 10, 10}, {2.5, 1, 1});
        MaskVolume b = random_blob(seed * 2 + 1, {6, 10, 10}, {2.5, 1, 1});
        const double d = dsc(a, b), j = jaccard_index(a, b);
        CHECK(std::abs(d - 2.0 * j / (1.0 + j)) < 1e-12);
        CHECK(j <= d + 1e-15);
    }
}

TEST_CASE("precision and recall enumeration") {
    // TP=3, FP=1, FN=2
    MaskVolume pred = make_mask({1, 4, 4}, {1, 1, 1},
                                {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 3, 3}});
    MaskVolume truth = make_mask({1, 4, 4}, {1, 1, 1},
                                 {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 1, 0}, {0, 1, 1}});
    PrecisionRecall pr = precision_recall(pred, truth);
    CHECK(pr.precision == doctest::Approx(0.75));
    CHECK(pr.recall == doctest::Approx(0.6));

    PrecisionRecall perfect = precision_recall(truth, truth);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);

    // strict superset: recall 1, precision < 1
    MaskVolume superset = truth;
    superset.at(0, 2, 2) = 1;
    PrecisionRecall sup = precision_recall(superset, truth);
    CHECK(sup.recall == 1.0);
    CHECK(sup.precision < 1.0);
}

TEST_CASE("avd two voxels on a spaced axis") {
    // 3 voxels apart along z with 2 mm spacing -> 6 mm
    MaskVolume a = make_mask({5, 3, 3}, {2, 1, 1}, {{0, 1, 1}});
    MaskVolume b = make_mask({5, 3, 3}, {2, 1, 1}, {{3, 1, 1}});
    CHECK(avd(a, b) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(avd(a, a) == 0.0);
}

TEST_CASE("avd symmetry and empty-mask error") {
    MaskVolume a = random_blob(3, {6, 10, 10}, {2.5, 1, 1});
    MaskVolume b = random_blob(7, {6, 10, 10}, {2.5, 1, 1});
    CHECK(avd(a, b) == doctest::Approx(avd(b, a)).epsilon(1e-12));
    MaskVolume empty({6, 10, 10}, {2.5, 1, 1});
    CHECK_THROWS_AS(avd(a, empty), InputError);
}

TEST_CASE("avd accelerated path equals brute force exactly") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        MaskVolume a = random_blob(seed * 2 + 100, {8, 12, 12}, {2.5, 1, 1});
        MaskVolume b = random_blob(seed * 2 + 101, {8, 12, 12}, {2.5, 1, 1});
        CHECK(avd(a, b) == avd_bruteforce(a, b));
        CHECK(avd(a, b, AvdVariant::MaxOfMeans) ==
              avd_bruteforce(a, b, AvdVariant::MaxOfMeans));
    }
}

TEST_CASE("metrics invariant under axis flips") {
    MaskVolume a = random_blob(21, {6, 9, 9}, {2.5, 1, 1});
    MaskVolume b = random_blob(22, {6, 9, 9}, {2.5, 1, 1});
    MaskVolume af = a, bf = b;
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 9; ++x) {
                af.at(z, y, x) = a.at(5 - z, y, 8 - x);
                bf.at(z, y, x) = b.at(5 - z, y, 8 - x);
            }
    CHECK(dsc(af, bf) == doctest::Approx(dsc(a, b)).epsilon(1e-15));
    CHECK(avd(af, bf) == doctest::Approx(avd(a, b)).epsilon(1e-12));
}

TEST_CASE("volume regression") {
    std::vector<std::pair<double, double>> equal{{10, 10}, {20, 20}, {30, 30}};
    VolumeRegression r = volume_regression(equal);
    CHECK(r.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.error_variance == doctest::Approx(0.0));
    CHECK(r.outliers.empty());

    std::vector<std::pair<double, double>> doubled{{10, 20}, {20, 40}, {30, 60}};
    VolumeRegression d = volume_regression(doubled);
    CHECK(d.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.slope == doctest::Approx(2.0).epsilon(1e-12));
    // every case is >15% over the manual volume
    CHECK(d.outliers.size() == 3);

    CHECK_THROWS_AS(volume_regression({{1, 1}, {2, 2}}), InputError);
}

TEST_CASE("volume regression matches normal equations on noisy data") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 2.0);
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 25; ++i) {
        const double manual = 20.0 + 3.0 * i;
        pairs.push_back({manual, 1.1 * manual - 4.0 + noise(rng)});
    }
    VolumeRegression r = volume_regression(pairs);

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(pairs.size());
    for (auto& [x, y] : pairs) sx += x, sy += y, sxx += x * x, sxy += x * y;
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    CHECK(std::abs(r.slope - slope) < 1e-10);
    CHECK(std::abs(r.intercept - intercept) < 1e-10);
}

TEST_CASE("abnormal shape change detector") {
    MaskVolume stable({4, 8, 8}, {2.5, 1, 1});
    for (int z = 0; z < 4; ++z)
        for (int y = 2; y < 5; ++y)
            for (int x = 2; x < 5; ++x) stable.at(z, y, x) = 1;
    ShapeChangeReport r = abnormal_shape_changes(stable);
    CHECK(r.abnormal.empty());
    CHECK(r.empty_transitions.empty());

    // shift one slice by two voxels: in-plane AVD 1.0 mm > 0.5 mm
    // (column distances 2,1,0 average to 1.0 for a fully shifted 3x3)
    MaskVolume shifted = stable;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) shifted.at(2, y, x) = 0;
    for (int y = 2; y < 5; ++y)
        for (int x = 4; x < 7; ++x) shifted.at(2, y, x) = 1;
    ShapeChangeReport s = abnormal_shape_changes(shifted);
    REQUIRE(s.abnormal.size() == 2);  // entering and leaving the shifted slice
    CHECK(s.abnormal[0] == 2);
    CHECK(s.abnormal[1] == 3);

    // empty slice transitions are reported separately
    MaskVolume gap = stable;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) gap.at(1, y, x) = 0;
    ShapeChangeReport g = abnormal_shape_changes(gap);
    CHECK(g.empty_transitions.size() == 2);

    MaskVolume single({1, 4, 4}, {2.5, 1, 1});
    CHECK_THROWS_AS(abnormal_shape_changes(single), InputError);
}

TEST_CASE("report csv layout and aggregates") {
    MetricsReport rep;
    rep.cases.push_back({"a", 0.9, 0.8, 0.95, 0.85, 0.5});
    rep.cases.push_back({"b", 0.7, 0.6, 0.75, 0.65, 1.5});
    const std::string csv = rep.to_csv();
    CHECK(csv.find("case_id,dsc,ji,precision,recall,avd_mm") == 0);
    CHECK(csv.find("a,0.900000") != std::string::npos);

    MetricsReport::Aggregate agg = rep.aggregate(&CaseMetrics::dsc);
    CHECK(agg.mean == doctest::Approx(0.8));
    CHECK(agg.min == doctest::Approx(0.7));
    CHECK(agg.max == doctest::Approx(0.9));
    auto avd_agg = rep.aggregate_avd();
    REQUIRE(avd_agg.has_value());
    CHECK(avd_agg->mean == doctest::Approx(1.0));
}

TEST_CASE("evaluate_case populates all fields") {
    MaskVolume truth = random_blob(31, {6, 10, 10}, {2.5, 1, 1});
    CaseMetrics cm = evaluate_case("probe", truth, truth);
    CHECK(cm.dsc == 1.0);
    CHECK(cm.ji == 1.0);
    CHECK(cm.precision == 1.0);
    CHECK(cm.recall == 1.0);
    REQUIRE(cm.avd_mm.has_value());
    CHECK(*cm.avd_mm == 0.0);
}
