#include "ridnoise/robust_weights.hpp"

#include "ridnoise/errors.hpp"
#include "ridnoise/seeding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace ridnoise {

void WeightConfig::validate() const {
    if (k_folds < 2) throw DataError("k_folds must be >= 2");
    if (!(tau >= 0.0)) throw DataError("tau must be >= 0");
    if (!(eps > 0.0)) throw DataError("eps must be > 0");
    if (!(inner_valid_fraction >= 0.0 && inner_valid_fraction < 1.0)) {
        throw DataError("inner_valid_fraction must lie in [0, 1)");
    }
    training.adam.validate();
}

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > n) {
        throw DataError("k-fold split needs 2 <= k <= n (k = " + std::to_string(k) +
                        ", n = " + std::to_string(n) + ")");
    }
    std::mt19937_64 rng(seed);
    const auto order = shuffled_indices(n, rng);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(folds[f].begin(), folds[f].end());
        pos += size;
    }
    return folds;
}

std::vector<double> normalize_robustness(std::span<const double> raw) {
    std::vector<double> r(raw.begin(), raw.end());
    if (r.empty()) return r;
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    if (mean == 0.0) return std::vector<double>(r.size(), 0.0);
    for (double& v : r) v /= mean;
    return r;
}

namespace {

// Squared held-out error for one fold.
std::vector<double> score_fold(const Dataset& data, const WeightConfig& cfg,
                               const std::vector<std::vector<std::size_t>>& folds,
                               std::size_t fold) {
    std::vector<std::size_t> train_idx;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        if (f != fold) train_idx.insert(train_idx.end(), folds[f].begin(), folds[f].end());
    }
    const std::uint64_t fold_seed = derive_seed(cfg.training.seed, "fold" + std::to_string(fold));
    std::mt19937_64 rng(fold_seed);
    std::vector<std::size_t> order = shuffled_indices(train_idx.size(), rng);
    for (auto& o : order) o = train_idx[o];

    const auto n_valid = static_cast<std::size_t>(
        std::floor(cfg.inner_valid_fraction * static_cast<double>(order.size())));
    std::span<const std::size_t> all(order);
    Dataset train = data.subset(all.subspan(0, order.size() - n_valid));
    Dataset valid = data.subset(all.subspan(order.size() - n_valid));

    MlpSpec spec{data.dx(), data.dy(), cfg.surrogate_hidden, cfg.surrogate_activation};
    TrainConfig tc = cfg.training;
    tc.seed = rng();
    RegressorFit fit;
    try {
        fit = train_regressor(spec, train, valid, tc);
    } catch (const NumericalError& e) {
        throw NumericalError("surrogate for fold " + std::to_string(fold) + ": " + e.what());
    }
    Dataset held_out = data.subset(folds[fold]);
    auto loss = mse_loss(mlp_forward(fit.params, held_out.x), held_out.y);
    for (double v : loss.per_row) {
        if (!std::isfinite(v)) {
            throw NumericalError("surrogate for fold " + std::to_string(fold) +
                                 " produced a non-finite prediction");
        }
    }
    return loss.per_row;
}

}  // namespace

RobustnessEstimate estimate_sample_robustness(const Dataset& data, const WeightConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.size() < 2 * cfg.k_folds) {
        throw DataError("dataset of " + std::to_string(data.size()) + " rows is too small for " +
                        std::to_string(cfg.k_folds) + " folds (need >= 2k)");
    }
    const auto folds = kfold_split(data.size(), cfg.k_folds, derive_seed(cfg.training.seed, "kfold"));
    std::vector<std::vector<double>> scores(folds.size());

    const std::size_t workers = std::clamp<std::size_t>(cfg.threads, 1, folds.size());
    if (workers == 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) scores[f] = score_fold(data, cfg, folds, f);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t f = next++; f < folds.size(); f = next++) {
                    try {
                        scores[f] = score_fold(data, cfg, folds, f);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    RobustnessEstimate est;
    est.raw.assign(data.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (std::size_t i = 0; i < folds[f].size(); ++i) est.raw[folds[f][i]] = scores[f][i];
    }
    est.r = normalize_robustness(est.raw);
    return est;
}

std::vector<double> robustness_to_weights(std::span<const double> r, double tau, double eps) {
    if (!(tau >= 0.0)) throw DataError("tau must be >= 0");
    if (!(eps > 0.0)) throw DataError("eps must be > 0");
    std::vector<double> w(r.size());
    if (w.empty()) return w;
    // exp(-tau (r - min r)) differs from exp(-tau r) by a constant factor
    // that the normalisation removes; the shift keeps the largest weight at 1.
    const double r_min = *std::min_element(r.begin(), r.end());
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::exp(-tau * (r[i] - r_min));
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (double& v : w) v = v / mean + eps;
    return w;
}

std::vector<double> estimate_weights(const Dataset& data, const WeightConfig& cfg) {
    return robustness_to_weights(estimate_sample_robustness(data, cfg).r, cfg.tau, cfg.eps);
}

}  // namespace ridnoise
