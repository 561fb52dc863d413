#include "doctest.h"

#include "ridnoise/errors.hpp"
#include "ridnoise/tasks.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace ridnoise;

namespace {

constexpr double kPi = std::numbers::pi;

double row_mean(const Matrix& m, std::size_t col) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, col);
    return s / static_cast<double>(m.rows());
}

double row_variance(const Matrix& m, std::size_t col) {
    const double mu = row_mean(m, col);
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += (m(r, col) - mu) * (m(r, col) - mu);
    return s / static_cast<double>(m.rows() - 1);
}

Matrix repeat_row(std::vector<double> x, std::size_t n) {
    Matrix m(n, x.size());
    for (std::size_t r = 0; r < n; ++r) std::copy(x.begin(), x.end(), m.row(r).begin());
    return m;
}

}  // namespace

TEST_CASE("radian_forward") {
    CHECK(radian_forward(std::vector<double>{1, 0}) == 0.0);
    CHECK(radian_forward(std::vector<double>{0, 1}) == doctest::Approx(kPi / 2));
    CHECK(radian_forward(std::vector<double>{-1, -1}) == doctest::Approx(5 * kPi / 4));
    CHECK(radian_forward(std::vector<double>{1, -1e-300}) < 2 * kPi);
    CHECK_THROWS_AS(radian_forward(std::vector<double>{0, 0}), DataError);
}

TEST_CASE("clusters_sample") {
    SUBCASE("equal proportions") {
        const std::size_t n = 30000;
        Dataset d = clusters_sample(n, 1);
        std::size_t counts[3] = {0, 0, 0};
        for (std::size_t r = 0; r < n; ++r) {
            const double y = d.y(r, 0);
            const bool valid = y == 0.0 || y == 1.0 / 3.0 || y == 2.0 / 3.0;
            REQUIRE(valid);
            counts[static_cast<int>(std::lround(y * 3))]++;
        }
        for (auto c : counts) {
            CHECK(std::abs(static_cast<double>(c) / n - 1.0 / 3.0) < 3.0 / std::sqrt(double(n)));
        }
    }
    SUBCASE("seeded") {
        auto a = clusters_sample(100, 9);
        auto b = clusters_sample(100, 9);
        CHECK(a.x == b.x);
        CHECK(a.y == b.y);
    }
    SUBCASE("too small") { CHECK_THROWS_AS(clusters_sample(2, 1), DataError); }
}

TEST_CASE("radius_forward") {
    auto a = radius_forward(std::vector<double>{0, 1});
    CHECK(a.y == 0.0);
    CHECK(a.cluster == RadiusCluster::Clean);
    CHECK(radius_forward(std::vector<double>{1, 1}).y == 1.0);
    auto c = radius_forward(std::vector<double>{0, -2});
    CHECK(c.y == 1.0);
    CHECK(c.cluster == RadiusCluster::Noisy);
    CHECK(radius_forward(std::vector<double>{1, 0}).cluster == RadiusCluster::Clean);
}

TEST_CASE("kinematics_forward") {
    TaskSpec t = make_task(TaskName::Kinematics);
    auto e = kinematics_forward(t, std::vector<double>{0.5, 0, 0, 0});
    CHECK(e[0] == doctest::Approx(2.0));
    CHECK(e[1] == doctest::Approx(0.5));
    auto up = kinematics_forward(t, std::vector<double>{0, kPi / 2, 0, 0});
    CHECK(up[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(up[1] == doctest::Approx(2.0));

    Rng rng(3);
    Matrix x = sample_prior(t, 2000, rng);
    for (double& v : x.values()) v *= 3.0;  // well beyond the prior
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto p = kinematics_forward(t, x.row(r));
        CHECK(std::hypot(p[0], p[1]) <= 2.0 + std::abs(x(r, 0)) + 1e-12);
    }
}

TEST_CASE("ballistics_forward") {
    TaskSpec t = make_task(TaskName::Ballistics);
    const double g = t.gravity;
    CHECK(ballistics_forward(t, std::vector<double>{0, 0, kPi / 4, std::sqrt(g)}) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ballistics_forward(t, std::vector<double>{0.7, 0, 0.3, 0}) == 0.7);
    const double r1 = ballistics_forward(t, std::vector<double>{0, 0, 0.6, 2.0});
    const double r2 = ballistics_forward(t, std::vector<double>{0, 0, 0.6, 4.0});
    CHECK(r2 == doctest::Approx(4 * r1).epsilon(1e-12));
    // launched from above ground lands further than from the ground
    CHECK(ballistics_forward(t, std::vector<double>{0, 1.5, 0.6, 4.0}) > r2);
    // negative heights are clamped to the ground
    CHECK(ballistics_forward(t, std::vector<double>{0, -0.5, 0.6, 4.0}) == r2);
}

TEST_CASE("apply_noise: mode none is the deterministic forward, bitwise") {
    for (TaskName name : {TaskName::Radian, TaskName::Clusters, TaskName::Radius,
                          TaskName::Kinematics, TaskName::Ballistics}) {
        TaskSpec t = make_task(name);
        Rng rng(4);
        Matrix x = sample_prior(t, 500, rng);
        CHECK(apply_noise(t, default_noise(name, NoiseMode::None), x, rng) == forward(t, x));
    }
}

TEST_CASE("apply_noise: y-noise is zero-mean") {
    const std::size_t n = 10000;
    SUBCASE("constant sigma 0.1 on radian") {
        TaskSpec t = make_task(TaskName::Radian);
        NoiseSpec ns = default_noise(TaskName::Radian, NoiseMode::Y);
        REQUIRE(ns.sigma_y == 0.1);
        Rng rng(5);
        Matrix x = repeat_row({-0.3, 0.8}, n);
        Matrix y = apply_noise(t, ns, x, rng);
        CHECK(std::abs(row_mean(y, 0) - radian_forward(x.row(0))) < 0.004);
    }
    SUBCASE("every task within 4 sigma / sqrt(n)") {
        struct Point {
            TaskName name;
            std::vector<double> x;
        };
        const std::vector<Point> points{{TaskName::Clusters, {0.1, 0.9}},
                                        {TaskName::Radius, {0.3, -1.5}},
                                        {TaskName::Kinematics, {0.1, -0.3, 0.2, -0.4}},
                                        {TaskName::Ballistics, {0.2, 1.3, 0.5, 4.4}}};
        for (const auto& p : points) {
            CAPTURE(to_string(p.name));
            TaskSpec t = make_task(p.name);
            NoiseSpec ns = default_noise(p.name, NoiseMode::Y);
            Rng rng(6);
            Matrix x = repeat_row(p.x, n);
            Matrix y = apply_noise(t, ns, x, rng);
            Matrix g = forward(t, repeat_row(p.x, 1));
            for (std::size_t c = 0; c < t.dy; ++c) {
                const double sd = std::sqrt(row_variance(y, c));
                CHECK(sd > 0.0);
                CHECK(std::abs(row_mean(y, c) - g(0, c)) < 4.0 * sd / std::sqrt(double(n)));
            }
        }
    }
}

TEST_CASE("apply_noise: radian wrap-around near the positive x-axis") {
    TaskSpec t = make_task(TaskName::Radian);
    NoiseSpec ns = default_noise(TaskName::Radian, NoiseMode::X);
    ns.sigma_x = 0.05;
    Rng rng(7);
    const std::size_t n = 4000;
    Matrix pos = apply_noise(t, ns, repeat_row({1.0, 0.0}, n), rng);
    Matrix neg = apply_noise(t, ns, repeat_row({-1.0, 0.0}, n), rng);
    std::size_t low = 0, high = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (pos(r, 0) < 0.5) ++low;
        if (pos(r, 0) > 2 * kPi - 0.5) ++high;
    }
    CHECK(low + high == n);
    CHECK(low > n / 4);
    CHECK(high > n / 4);
    CHECK(row_variance(pos, 0) > 100.0 * row_variance(neg, 0));
}

TEST_CASE("radius noise only touches the noisy cluster") {
    TaskSpec t = make_task(TaskName::Radius);
    for (NoiseMode m : {NoiseMode::X, NoiseMode::Y, NoiseMode::XY}) {
        Rng rng(8);
        Matrix clean = repeat_row({0.2, 1.9}, 50);
        Matrix noisy = repeat_row({0.2, -1.9}, 50);
        Matrix yc = apply_noise(t, default_noise(TaskName::Radius, m), clean, rng);
        Matrix yn = apply_noise(t, default_noise(TaskName::Radius, m), noisy, rng);
        CHECK(row_variance(yc, 0) < 1e-20);
        CHECK(row_variance(yn, 0) > 0.0);
    }
}

TEST_CASE("state-dependent noise levels") {
    TaskSpec kin = make_task(TaskName::Kinematics);
    NoiseSpec kn = default_noise(TaskName::Kinematics, NoiseMode::X);
    SUBCASE("kinematics: a higher arm is quieter") {
        Rng rng(9);
        Matrix x = sample_prior(kin, 300, rng);
        for (std::size_t i = 0; i + 1 < x.rows(); ++i) {
            auto a = x.row(i), b = x.row(i + 1);
            const double ha = kinematics_forward(kin, a)[1];
            const double hb = kinematics_forward(kin, b)[1];
            const double sa = kinematics_sigma_x(kin, kn, a);
            const double sb = kinematics_sigma_x(kin, kn, b);
            if (ha > hb) CHECK(sa <= sb);
            if (hb > ha) CHECK(sb <= sa);
            CHECK(sa > 0.0);
            CHECK(sa < kn.sigma_x);
        }
    }
    SUBCASE("ballistics: noisier away from 45 degrees") {
        NoiseSpec bn = default_noise(TaskName::Ballistics, NoiseMode::X);
        const double at45 = ballistics_sigma_x(bn, std::vector<double>{0, 1, kPi / 4, 4});
        const double at20 = ballistics_sigma_x(bn, std::vector<double>{0, 1, kPi / 9, 4});
        const double at60 = ballistics_sigma_x(bn, std::vector<double>{0, 1, kPi / 3, 4});
        CHECK(at45 == 0.0);
        CHECK(at20 > at60);
        CHECK(at60 > at45);
        CHECK(ballistics_sigma_y(bn, std::vector<double>{-2.0}) == doctest::Approx(0.15));
    }
}

TEST_CASE("generate_dataset") {
    TaskSpec t = make_task(TaskName::Radian);
    NoiseSpec ns = default_noise(TaskName::Radian, NoiseMode::X);
    CHECK_THROWS_AS(generate_dataset(t, ns, 0, 1), DataError);
    CHECK(generate_dataset(t, ns, 1, 1).size() == 1);

    Dataset a = generate_dataset(t, ns, 5000, 11);
    Dataset b = generate_dataset(t, ns, 5000, 11);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    REQUIRE(a.provenance.has_value());
    CHECK(a.provenance->seed == 11);
    CHECK(a.provenance->noise == ns);

    double min_norm = 1e9;
    for (std::size_t r = 0; r < a.size(); ++r) min_norm = std::min(min_norm, std::hypot(a.x(r, 0), a.x(r, 1)));
    CHECK(min_norm >= 0.1);

    SUBCASE("chunks are independent streams") {
        Dataset head = generate_dataset(t, ns, kGenerationChunk, 11);
        for (std::size_t r = 0; r < kGenerationChunk; ++r) {
            REQUIRE(head.x(r, 0) == a.x(r, 0));
            REQUIRE(head.y(r, 0) == a.y(r, 0));
        }
    }
}

TEST_CASE("priors stay on the support of their forward maps") {
    for (TaskName name : {TaskName::Radian, TaskName::Clusters, TaskName::Radius,
                          TaskName::Kinematics, TaskName::Ballistics}) {
        TaskSpec t = make_task(name);
        Dataset d = generate_dataset(t, default_noise(name, NoiseMode::XY), 3000, 12);
        CHECK_NOTHROW(d.validate());
        CHECK(d.dx() == t.dx);
        CHECK(d.dy() == t.dy);
    }
    TaskSpec b = make_task(TaskName::Ballistics);
    Rng rng(13);
    Matrix x = sample_prior(b, 3000, rng);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        CHECK(x(r, 1) >= 0.0);
        CHECK(x(r, 3) >= 0.1);
        CHECK(x(r, 2) >= kPi / 18);
        CHECK(x(r, 2) <= kPi / 3);
    }
}

TEST_CASE("task and noise names round-trip") {
    for (TaskName name : {TaskName::Radian, TaskName::Clusters, TaskName::Radius,
                          TaskName::Kinematics, TaskName::Ballistics}) {
        CHECK(parse_task_name(to_string(name)) == name);
    }
    for (NoiseMode m : {NoiseMode::None, NoiseMode::X, NoiseMode::Y, NoiseMode::XY}) {
        CHECK(parse_noise_mode(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_task_name("metamaterial"), DataError);
    CHECK_THROWS_AS(parse_noise_mode("n_z"), DataError);
}
