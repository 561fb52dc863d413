#include "ridnoise/evaluation.hpp"

#include "ridnoise/errors.hpp"
#include "ridnoise/seeding.hpp"
#include "ridnoise/tasks.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace ridnoise {

void EvalConfig::validate() const {
    if (n_targets == 0) throw DataError("n_targets must be >= 1");
    if (samples_per_target == 0) throw DataError("samples_per_target must be >= 1");
    if (mc_draws == 0) throw DataError("mc_draws must be >= 1");
    if (threads == 0) throw DataError("threads must be >= 1");
}

double squared_error(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

namespace {

void check_dims(const TaskSpec& task, std::span<const double> x, std::span<const double> yt) {
    if (x.size() != task.dx) {
        throw ShapeError("design has " + std::to_string(x.size()) + " coordinates, task dx = " +
                         std::to_string(task.dx));
    }
    if (yt.size() != task.dy) {
        throw ShapeError("target has " + std::to_string(yt.size()) + " coordinates, task dy = " +
                         std::to_string(task.dy));
    }
}

Matrix draw_outcomes(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                     std::size_t n, std::uint64_t seed) {
    if (n == 0) throw DataError("need at least one Monte Carlo draw");
    Matrix xs(n, x.size());
    for (std::size_t i = 0; i < n; ++i) std::copy(x.begin(), x.end(), xs.row(i).begin());
    Rng rng(seed);
    return apply_noise(task, noise, xs, rng);
}

// Accumulated as offsets from the first row, so constant columns come out exact.
std::vector<double> column_means(const Matrix& m) {
    std::vector<double> shift(m.row(0).begin(), m.row(0).end());
    std::vector<double> acc(m.cols(), 0.0);
    for (std::size_t i = 1; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += m(i, j) - shift[j];
    }
    for (std::size_t j = 0; j < m.cols(); ++j) shift[j] += acc[j] / static_cast<double>(m.rows());
    return shift;
}

double mean_loss(const Matrix& ys, std::span<const double> ref) {
    double s = 0.0;
    for (std::size_t i = 0; i < ys.rows(); ++i) s += squared_error(ys.row(i), ref);
    return s / static_cast<double>(ys.rows());
}

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
    double s = 0.0;
    for (double e : v) s += (e - mean) * (e - mean);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double mc_expected_loss(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                        std::span<const double> yt, std::size_t n, std::uint64_t seed) {
    check_dims(task, x, yt);
    return mean_loss(draw_outcomes(task, noise, x, n, seed), yt);
}

Robustness target_agnostic_robustness(const TaskSpec& task, const NoiseSpec& noise,
                                      std::span<const double> x, std::size_t n, std::uint64_t seed) {
    if (n < 2) throw DataError("target-agnostic robustness needs at least two draws");
    const Matrix ys = draw_outcomes(task, noise, x, n, seed);
    Robustness out;
    out.f_hat = column_means(ys);
    const double nn = static_cast<double>(n);
    out.r = mean_loss(ys, out.f_hat) * nn / (nn - 1.0);
    return out;
}

double decomposition_check(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                           std::span<const double> yt, std::size_t n, std::uint64_t seed) {
    check_dims(task, x, yt);
    const Matrix ys = draw_outcomes(task, noise, x, n, seed);
    const std::vector<double> f_hat = column_means(ys);
    const double loss = mean_loss(ys, yt);
    const double r = mean_loss(ys, f_hat);
    const double b = squared_error(f_hat, yt);
    return std::abs(loss - (r + b));
}

InverseDesignModel flow_idm(const FlowModel& model) {
    return [model](const Matrix& targets, std::size_t n_per_target, std::uint64_t seed) {
        return flow_sample(model, targets, n_per_target, seed);
    };
}

Matrix make_test_targets(const TaskSpec& task, const NoiseSpec& noise, std::size_t n,
                         std::uint64_t seed) {
    return generate_dataset(task, noise, n, derive_seed(seed, "test-targets")).y;
}

EvalReport resimulation_error(const InverseDesignModel& idm, const TaskSpec& task,
                              const NoiseSpec& noise, const Matrix& targets, const EvalConfig& cfg) {
    cfg.validate();
    if (targets.cols() != task.dy) {
        throw ShapeError("targets have " + std::to_string(targets.cols()) + " columns, task dy = " +
                         std::to_string(task.dy));
    }
    if (targets.rows() == 0) throw DataError("no test targets");
    const auto start = std::chrono::steady_clock::now();
    const std::size_t nt = targets.rows();
    const std::size_t m = cfg.samples_per_target;

    EvalReport report;
    report.task = to_string(task.name);
    report.noise = to_string(noise.mode);
    report.config = cfg;
    report.per_target.assign(nt, 0.0);

    auto evaluate_target = [&](std::size_t i) {
        const std::string tag = "target" + std::to_string(i);
        Matrix yt(1, task.dy);
        std::copy(targets.row(i).begin(), targets.row(i).end(), yt.row(0).begin());
        const Matrix designs = idm(yt, m, derive_seed(cfg.seed, tag + "/design"));
        if (designs.rows() != m || designs.cols() != task.dx) {
            throw ShapeError("inverse model returned " + designs.shape_string() + " for target " +
                             std::to_string(i) + ", expected " + std::to_string(m) + "x" +
                             std::to_string(task.dx));
        }
        Rng rng(derive_seed(cfg.seed, tag + "/resim"));
        const Matrix outcomes = apply_noise(task, noise, designs, rng);
        report.per_target[i] = mean_loss(outcomes, yt.row(0));
    };

    const std::size_t workers = std::min(cfg.threads, nt);
    if (workers <= 1) {
        for (std::size_t i = 0; i < nt; ++i) evaluate_target(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < nt; i = next++) {
                    try {
                        evaluate_target(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        pool.clear();
        if (failure) std::rethrow_exception(failure);
    }

    report.mse = mean_of(report.per_target);
    report.std_error =
        nt > 1 ? std::sqrt(sample_variance(report.per_target, report.mse) / static_cast<double>(nt))
               : 0.0;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

EvalReport resimulation_error(const FlowModel& model, const TaskSpec& task, const NoiseSpec& noise,
                              const Matrix& targets, const EvalConfig& cfg) {
    if (model.dx != task.dx || model.dy != task.dy) {
        throw ShapeError("model dims (" + std::to_string(model.dx) + ", " + std::to_string(model.dy) +
                         ") do not match task dims (" + std::to_string(task.dx) + ", " +
                         std::to_string(task.dy) + ")");
    }
    return resimulation_error(flow_idm(model), task, noise, targets, cfg);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw DataError("Welch test needs at least two values per sample");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    const double qa = sample_variance(a, ma) / na;
    const double qb = sample_variance(b, mb) / nb;
    const double se2 = qa + qb;
    if (se2 == 0.0) {
        if (ma == mb) return {0.0, 1.0, na + nb - 2.0};
        const double inf = std::numeric_limits<double>::infinity();
        return {ma > mb ? inf : -inf, 0.0, na + nb - 2.0};
    }
    const double t = (ma - mb) / std::sqrt(se2);
    const double df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    const boost::math::students_t dist(df);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    return {t, std::min(1.0, p), df};
}

}  // namespace ridnoise
