#include "doctest.h"

#include "ridnoise/errors.hpp"
#include "ridnoise/flow.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace ridnoise;

namespace {

FlowArchitecture small_arch(std::size_t blocks = 4, std::size_t width = 16) {
    FlowArchitecture a;
    a.blocks = blocks;
    a.hidden = {width, width};
    return a;
}

// Perturb every subnet tensor so the model is far from the identity.
void randomize(FlowModel& model, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (Matrix* t : model.tensors()) {
        for (double& v : t->values()) v += n(rng);
    }
}

Matrix random_normal(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

// Determinant by Gaussian elimination with partial pivoting.
double determinant(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    double det = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        if (pivot != col) {
            std::swap(a[pivot], a[col]);
            det = -det;
        }
        det *= a[col][col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
        }
    }
    return det;
}

// log |det d out / d in| by central differences, for a single row.
template <typename F>
double fd_log_abs_det(F map, const Matrix& point, double h = 1e-6) {
    const std::size_t d = point.cols();
    std::vector<std::vector<double>> jac(d, std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) {
        Matrix up = point, down = point;
        up(0, j) += h;
        down(0, j) -= h;
        Matrix fu = map(up), fd = map(down);
        for (std::size_t i = 0; i < d; ++i) jac[i][j] = (fu(0, i) - fd(0, i)) / (2 * h);
    }
    return std::log(std::abs(determinant(jac)));
}

}  // namespace

TEST_CASE("fresh model is the identity") {
    FlowModel m = make_flow(2, 1, small_arch(), 1);
    std::mt19937_64 rng(0);
    Matrix u = random_normal(5, 2, rng);
    Matrix y = random_normal(5, 1, rng);
    auto out = coupling_forward(m.blocks[0], u, y);
    CHECK(out.v == u);
    CHECK(out.logdet == std::vector<double>(5, 0.0));
    CHECK(coupling_inverse(m.blocks[0], u, y) == u);
}

TEST_CASE("Standardization::fit") {
    Matrix m = Matrix::from_rows({{1.0, 5.0, 3.0}, {3.0, 5.0, -3.0}, {5.0, 5.0, 0.0}});
    const Standardization s = Standardization::fit(m);
    CHECK(s.shift == std::vector<double>{3.0, 5.0, 0.0});
    CHECK(s.scale[0] == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-14));
    CHECK(s.scale[1] == 1.0);  // constant column
    CHECK(s.scale[2] == doctest::Approx(std::sqrt(6.0)).epsilon(1e-14));
    const Matrix z = s.apply(m);
    CHECK(z(0, 0) == doctest::Approx(-2.0 / std::sqrt(8.0 / 3.0)).epsilon(1e-14));
    CHECK(z(1, 1) == 0.0);
    const Matrix back = s.invert(z);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(back.values()[i] == doctest::Approx(m.values()[i]).epsilon(1e-15));
    CHECK(s.log_scale_sum() == doctest::Approx(0.5 * std::log(8.0 / 3.0) + 0.5 * std::log(6.0)).epsilon(1e-14));
    CHECK_THROWS_AS(Standardization::fit(Matrix(0, 2)), DataError);
}

TEST_CASE("an untrained standardized flow is the matching diagonal Gaussian") {
    FlowModel m = make_flow(2, 1, small_arch(), 2);
    m.x_norm = {{1.0, -2.0}, {0.5, 3.0}};
    m.y_norm = {{10.0}, {4.0}};
    const Matrix x = Matrix::from_rows({{1.0, -2.0}, {2.0, 1.0}, {-0.5, 4.0}});
    const Matrix y(3, 1, 7.0);
    const auto lp = flow_log_prob(m, x, y);
    for (std::size_t r = 0; r < 3; ++r) {
        double expected = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
            const double sd = m.x_norm.scale[c];
            const double d = (x(r, c) - m.x_norm.shift[c]) / sd;
            expected += -0.5 * d * d - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
        }
        CHECK(lp[r] == doctest::Approx(expected).epsilon(1e-13));
    }
}

TEST_CASE("invertibility, change of variables and WNLL under a non-trivial standardization") {
    FlowModel m = make_flow(3, 2, small_arch(3), 30);
    randomize(m, 31, 0.3);
    m.x_norm = {{0.5, -4.0, 2.0}, {0.2, 3.0, 1.5}};
    m.y_norm = {{1.0, -1.0}, {2.0, 1.5}};
    m.validate();
    std::mt19937_64 rng(32);
    const Matrix z = random_normal(50, 3, rng);
    const Matrix y = random_normal(50, 2, rng, 2.0);
    const FlowPass fwd = flow_forward(m, z, y);
    const FlowPass inv = flow_inverse(m, fwd.out, y);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(inv.out.values()[i] - z.values()[i]) < 1e-9);
    const auto lp = flow_log_prob(m, fwd.out, y);
    double nll = 0.0;
    for (std::size_t r = 0; r < 50; ++r) {
        CHECK(fwd.logdet[r] == doctest::Approx(inv.logdet[r]).epsilon(1e-9));
        CHECK(lp[r] == doctest::Approx(standard_normal_log_density(z.row(r)) - fwd.logdet[r]).epsilon(1e-9));
        nll -= lp[r] / 50.0;
    }
    CHECK(wnll_loss(m, fwd.out, y, std::vector<double>(50, 1.0)) == doctest::Approx(nll).epsilon(1e-10));
    for (std::size_t j = 0; j < 3; ++j) {
        const Matrix point = z.gather_rows(std::vector<std::size_t>{j});
        const Matrix cond = y.gather_rows(std::vector<std::size_t>{j});
        const double numeric = fd_log_abs_det([&](const Matrix& p) { return flow_forward(m, p, cond).out; }, point);
        CHECK(fwd.logdet[j] == doctest::Approx(numeric).epsilon(1e-5));
    }
    WnllGraph g(m);
    const Matrix x = fwd.out.gather_rows(std::vector<std::size_t>{0, 1, 2, 3, 4});
    const Matrix yy = y.gather_rows(std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(finite_diff_check(g.graph(), g.bind(m, x, yy, std::vector<double>{1.0, 0.5, 2.0, 1.0, 0.3}), g.loss(),
                            g.parameter_names(), 1e-4) < 1e-4);
}

TEST_CASE("validate rejects bad standardizations") {
    FlowModel m = make_flow(2, 1, small_arch(2), 3);
    FlowModel bad = m;
    bad.x_norm.scale = {1.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = m;
    bad.y_norm.shift = {0.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = m;
    bad.x_norm.shift[0] = NAN;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("training fits the standardization to the data unless disabled") {
    std::mt19937_64 rng(33);
    Dataset d{random_normal(200, 2, rng, 3.0), random_normal(200, 1, rng, 0.5), std::nullopt};
    for (double& v : d.x.values()) v += 10.0;
    WnllConfig cfg;
    cfg.epochs = 1;
    const FlowModel fresh = make_flow(2, 1, small_arch(2), 4);
    const FlowModel trained = train_flow_wnll(fresh, d, std::vector<double>(200, 1.0), cfg).model;
    const Standardization sx = Standardization::fit(d.x);
    CHECK(trained.x_norm.shift == sx.shift);
    CHECK(trained.x_norm.scale == sx.scale);
    CHECK(trained.y_norm.scale == Standardization::fit(d.y).scale);
    cfg.standardize = false;
    const FlowModel raw = train_flow_wnll(fresh, d, std::vector<double>(200, 1.0), cfg).model;
    CHECK(raw.x_norm.shift == std::vector<double>{0.0, 0.0});
    CHECK(raw.y_norm.scale == std::vector<double>{1.0});
}

TEST_CASE("coupling_forward with constant log-scale log 2 doubles the active coordinate") {
    FlowModel m = make_flow(2, 1, small_arch(1), 1);
    CouplingBlock& b = m.blocks[0];
    REQUIRE(b.active.size() == 1);
    // soft_clamp(raw) = log 2  <=>  raw = tan(log 2 * pi / (2 * clamp))
    b.subnet_s.layers.back().bias(0, 0) = std::tan(std::log(2.0) * std::numbers::pi / (2 * b.clamp));
    Matrix u = Matrix::from_rows({{0.7, -1.3}});
    auto out = coupling_forward(b, u, Matrix(1, 1, 0.4));
    const std::size_t a = b.active[0], p = b.passive[0];
    CHECK(out.v(0, a) == doctest::Approx(2.0 * u(0, a)).epsilon(1e-13));
    CHECK(out.v(0, p) == u(0, p));
    CHECK(out.logdet[0] == doctest::Approx(std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("coupling_inverse undoes a constant shift") {
    FlowModel m = make_flow(2, 1, small_arch(1), 2);
    CouplingBlock& b = m.blocks[0];
    b.subnet_t.layers.back().bias(0, 0) = 1.0;
    Matrix v = Matrix::from_rows({{3.0, 3.0}});
    Matrix u = coupling_inverse(b, v, Matrix(1, 1, 0.0));
    CHECK(u(0, b.active[0]) == doctest::Approx(2.0));
    CHECK(u(0, b.passive[0]) == 3.0);
}

TEST_CASE("coupling blocks invert to 1e-9 over 1000 random points") {
    for (std::size_t dx : {1, 2, 3, 4}) {
        FlowModel m = make_flow(dx, 2, small_arch(), 10 + dx);
        randomize(m, 20 + dx, 0.4);
        std::mt19937_64 rng(30 + dx);
        Matrix u = random_normal(1000, dx, rng, 2.0);
        Matrix y = random_normal(1000, 2, rng);
        double worst = 0.0;
        for (const auto& block : m.blocks) {
            Matrix back = coupling_inverse(block, coupling_forward(block, u, y).v, y);
            for (std::size_t k = 0; k < u.size(); ++k) {
                worst = std::max(worst, std::abs(back.values()[k] - u.values()[k]));
            }
        }
        Matrix whole = flow_inverse(m, flow_forward(m, u, y).out, y).out;
        for (std::size_t k = 0; k < u.size(); ++k) {
            worst = std::max(worst, std::abs(whole.values()[k] - u.values()[k]));
        }
        CAPTURE(dx);
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("log-determinants match finite-difference Jacobians") {
    for (std::size_t dx : {2, 3}) {
        FlowModel m = make_flow(dx, 1, small_arch(), 40 + dx);
        randomize(m, 50 + dx, 0.5);
        std::mt19937_64 rng(60 + dx);
        for (int trial = 0; trial < 20; ++trial) {
            Matrix u = random_normal(1, dx, rng);
            Matrix y = random_normal(1, 1, rng);
            for (const auto& block : m.blocks) {
                const double analytic = coupling_forward(block, u, y).logdet[0];
                const double numeric = fd_log_abs_det(
                    [&](const Matrix& p) { return coupling_forward(block, p, y).v; }, u);
                CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric)));
            }
            const double analytic = flow_forward(m, u, y).logdet[0];
            const double numeric =
                fd_log_abs_det([&](const Matrix& p) { return flow_forward(m, p, y).out; }, u);
            CAPTURE(dx);
            CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric)));
        }
    }
}

TEST_CASE("effective log-scales stay strictly inside the clamp") {
    CHECK(std::abs(soft_clamp(1e8, 2.0)) < 2.0);
    CHECK(std::abs(soft_clamp(-1e8, 2.0)) < 2.0);
    FlowModel m = make_flow(2, 1, small_arch(1), 3);
    randomize(m, 4, 50.0);  // saturate the raw scale
    std::mt19937_64 rng(5);
    Matrix u = random_normal(200, 2, rng, 10.0);
    Matrix y = random_normal(200, 1, rng, 10.0);
    for (double ld : coupling_forward(m.blocks[0], u, y).logdet) {
        CHECK(std::abs(ld) < m.blocks[0].clamp);
    }
}

TEST_CASE("flow_log_prob examples") {
    FlowModel m = make_flow(2, 1, small_arch(), 7);
    SUBCASE("identity model at the origin") {
        auto lp = flow_log_prob(m, Matrix(1, 2), Matrix(1, 1, 0.3));
        CHECK(lp[0] == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
        CHECK(lp[0] == doctest::Approx(-1.837877).epsilon(1e-6));
    }
    SUBCASE("identity model ignores y") {
        Matrix x = Matrix::from_rows({{0.5, -1.0}, {0.5, -1.0}});
        auto lp = flow_log_prob(m, x, Matrix::from_rows({{-3.0}, {8.0}}));
        CHECK(lp[0] == lp[1]);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(flow_log_prob(m, Matrix(1, 3), Matrix(1, 1)), ShapeError);
        CHECK_THROWS_AS(flow_log_prob(m, Matrix(2, 2), Matrix(1, 1)), ShapeError);
    }
}

TEST_CASE("change of variables: log q(f(z)) = log N(z) - forward logdet") {
    FlowModel m = make_flow(3, 2, small_arch(), 8);
    randomize(m, 9, 0.3);
    std::mt19937_64 rng(10);
    Matrix z = random_normal(100, 3, rng);
    Matrix y = random_normal(100, 2, rng);
    FlowPass fwd = flow_forward(m, z, y);
    auto lp = flow_log_prob(m, fwd.out, y);
    for (std::size_t r = 0; r < 100; ++r) {
        const double expected = standard_normal_log_density(z.row(r)) - fwd.logdet[r];
        CHECK(lp[r] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("flow_sample") {
    FlowModel m = make_flow(2, 1, small_arch(), 11);
    Matrix y = Matrix::from_rows({{0.0}, {1.0}});
    SUBCASE("identity model draws standard normals") {
        const std::size_t n = 20000;
        Matrix s = flow_sample(m, Matrix(1, 1, 0.5), n, 3);
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < n; ++r) mean += s(r, c);
            mean /= static_cast<double>(n);
            CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
        }
    }
    SUBCASE("seeded and grouped by target") {
        Matrix a = flow_sample(m, y, 5, 42);
        CHECK(a.rows() == 10);
        CHECK(a == flow_sample(m, y, 5, 42));
        CHECK(!(a == flow_sample(m, y, 5, 43)));
    }
    SUBCASE("samples re-score to finite log densities") {
        randomize(m, 12, 0.3);
        Matrix s = flow_sample(m, y, 50, 1);
        Matrix cond(100, 1);
        for (std::size_t r = 50; r < 100; ++r) cond(r, 0) = 1.0;
        for (double lp : flow_log_prob(m, s, cond)) CHECK(std::isfinite(lp));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(flow_sample(m, y, 0, 1), DataError);
        CHECK_THROWS_AS(flow_sample(m, Matrix(1, 2), 1, 1), ShapeError);
    }
}

TEST_CASE("WNLL graph agrees with the direct log density") {
    FlowModel m = make_flow(3, 2, small_arch(3), 13);
    randomize(m, 14, 0.3);
    std::mt19937_64 rng(15);
    Matrix x = random_normal(40, 3, rng);
    Matrix y = random_normal(40, 2, rng);
    std::vector<double> ones(40, 1.0);

    auto lp = flow_log_prob(m, x, y);
    double nll = 0.0;
    for (double v : lp) nll -= v;
    nll /= 40.0;
    const double unweighted = wnll_loss(m, x, y, ones);
    CHECK(unweighted == doctest::Approx(nll).epsilon(1e-10));

    SUBCASE("constant weights scale the loss") {
        std::vector<double> c(40, 2.5);
        CHECK(wnll_loss(m, x, y, c) == doctest::Approx(2.5 * unweighted).epsilon(1e-13));
    }
    SUBCASE("unit weights are bitwise the unweighted loss") {
        CHECK(wnll_loss(m, x, y, ones) == unweighted);
    }
    SUBCASE("weighted sum of per-row terms") {
        std::vector<double> w(40);
        double expected = 0.0;
        for (std::size_t i = 0; i < 40; ++i) {
            w[i] = 0.1 + 0.05 * static_cast<double>(i);
            expected -= w[i] * lp[i];
        }
        CHECK(wnll_loss(m, x, y, w) == doctest::Approx(expected / 40.0).epsilon(1e-10));
    }
}

TEST_CASE("WNLL gradients agree with central differences") {
    for (std::size_t dx : {1, 2, 3}) {
        FlowModel m = make_flow(dx, 1, small_arch(2), 16 + dx);
        randomize(m, 17 + dx, 0.3);
        std::mt19937_64 rng(18);
        Matrix x = random_normal(6, dx, rng);
        Matrix y = random_normal(6, 1, rng);
        std::vector<double> w{0.5, 1.0, 1.5, 0.2, 2.0, 1.0};
        WnllGraph g(m);
        CAPTURE(dx);
        CHECK(finite_diff_check(g.graph(), g.bind(m, x, y, w), g.loss(), g.parameter_names(), 1e-5) <
              1e-4);
    }
}

TEST_CASE("train_flow_wnll input validation") {
    FlowModel m = make_flow(2, 1, small_arch(2), 1);
    Dataset d{Matrix(4, 2), Matrix(4, 1), std::nullopt};
    WnllConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_flow_wnll(m, d, std::vector<double>(3, 1.0), cfg), DataError);
    CHECK_THROWS_AS(train_flow_wnll(m, d, std::vector<double>{1, 1, 0, 1}, cfg), DataError);
    CHECK_THROWS_AS(train_flow_wnll(m, d, std::vector<double>{1, 1, -1, 1}, cfg), DataError);
    Dataset wrong{Matrix(4, 3), Matrix(4, 1), std::nullopt};
    CHECK_THROWS_AS(train_flow_wnll(m, wrong, std::vector<double>(4, 1.0), cfg), ShapeError);
}

TEST_CASE("training on standard-normal data approaches its differential entropy") {
    std::mt19937_64 rng(19);
    const std::size_t n = 4000;
    Dataset d{random_normal(n, 2, rng), Matrix(n, 1, 0.5), std::nullopt};
    FlowModel m = make_flow(2, 1, small_arch(4), 20);
    randomize(m, 21, 0.2);  // start away from the optimum
    WnllConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 200;
    auto fit = train_flow_wnll(m, d, std::vector<double>(n, 1.0), cfg);
    CHECK(fit.loss_trace.size() == 30);
    const double entropy = 1.0 + std::log(2 * std::numbers::pi);  // d/2 (1 + log 2pi), d = 2
    Matrix fresh = random_normal(n, 2, rng);
    auto lp = flow_log_prob(fit.model, fresh, Matrix(n, 1, 0.5));
    double nll = 0.0;
    for (double v : lp) nll -= v;
    nll /= static_cast<double>(n);
    CHECK(std::abs(nll - entropy) < 0.1);
    CHECK(std::abs(fit.loss_trace.back() - entropy) < 0.1);
}

TEST_CASE("down-weighted point loses its mass") {
    const std::size_t n = 1000;
    Dataset d{Matrix(n, 2), Matrix(n, 1, 0.0), std::nullopt};
    std::vector<double> w(n);
    const double a[2] = {1.0, 1.0}, b[2] = {-1.0, -1.0};
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = i % 2 == 0 ? a : b;
        d.x(i, 0) = p[0];
        d.x(i, 1) = p[1];
        w[i] = i % 2 == 0 ? 1.0 : 1e-3;
    }
    WnllConfig cfg;
    cfg.epochs = 150;
    cfg.batch_size = 100;
    cfg.sigma_aug = 0.05;
    cfg.adam.learning_rate = 3e-3;
    auto fit = train_flow_wnll(make_flow(2, 1, small_arch(4, 32), 22), d, w, cfg);
    Matrix s = flow_sample(fit.model, Matrix(1, 1, 0.0), 10000, 23);
    std::size_t near_a = 0;
    for (std::size_t r = 0; r < s.rows(); ++r) {
        const double da = std::hypot(s(r, 0) - a[0], s(r, 1) - a[1]);
        const double db = std::hypot(s(r, 0) - b[0], s(r, 1) - b[1]);
        if (da < db) ++near_a;
    }
    CHECK(near_a >= 9500);
}

TEST_CASE("trained density integrates to one on a grid") {
    std::mt19937_64 rng(24);
    const std::size_t n = 3000;
    Dataset d{Matrix(n, 2), Matrix(n, 1), std::nullopt};
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = i % 2 == 0 ? 0.0 : 1.0;
        d.y(i, 0) = y;
        d.x(i, 0) = (y > 0 ? 1.0 : -1.0) + 0.5 * nd(rng);
        d.x(i, 1) = 0.5 * nd(rng) * (1.0 + y);
    }
    WnllConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 200;
    auto fit = train_flow_wnll(make_flow(2, 1, small_arch(4), 25), d, std::vector<double>(n, 1.0), cfg);
    CHECK(fit.loss_trace.back() < fit.loss_trace.front());
    for (double y : {0.0, 1.0}) {
        const double lo = -7.0, hi = 7.0;
        const std::size_t cells = 280;
        const double h = (hi - lo) / cells;
        Matrix grid(cells * cells, 2);
        for (std::size_t i = 0; i < cells; ++i) {
            for (std::size_t j = 0; j < cells; ++j) {
                grid(i * cells + j, 0) = lo + (i + 0.5) * h;
                grid(i * cells + j, 1) = lo + (j + 0.5) * h;
            }
        }
        auto lp = flow_log_prob(fit.model, grid, Matrix(cells * cells, 1, y));
        double mass = 0.0;
        for (double v : lp) mass += std::exp(v) * h * h;
        CAPTURE(y);
        CHECK(mass >= 0.98);
        CHECK(mass <= 1.02);
    }
}
