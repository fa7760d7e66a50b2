// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// Learning task: losses, gradients, local mini-batch SGD, global loss, accuracy,
// and the curvature / noise constants consumed by the convergence bound.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "otafl/dataset.hpp"
#include "otafl/errors.hpp"

namespace otafl {

using RVec = Eigen::VectorXd;
using ModelVector = RVec;

enum class Task { multinomial_logistic, binary_logistic, mlp };

struct LossSpec {
    Task task = Task::multinomial_logistic;
    int classes = 4;      ///< V; must be 2 for binary_logistic
    int feature_dim = 20; ///< b
    int hidden = 16;      ///< MLP hidden width
    double l2_reg = 0.01;
    bool bias = true;
};

/// Number of meaningful parameters, before padding.
inline Eigen::Index raw_dim(const LossSpec& s)
{
    const Eigen::Index b = s.feature_dim;
    const Eigen::Index bias = s.bias ? 1 : 0;
    switch (s.task) {
    case Task::multinomial_logistic: return s.classes * (b + bias);
    case Task::binary_logistic: return b + bias;
    case Task::mlp: return s.hidden * (b + bias) + s.classes * (s.hidden + bias);
    }
    return 0;
}

/// Transmitted dimension D: raw dimension rounded up to even for complex packing.
inline Eigen::Index model_dim(const LossSpec& s)
{
    const auto r = raw_dim(s);
    return r + (r % 2);
}

inline void validate(const LossSpec& s)
{
    if (s.feature_dim < 1) throw InvalidConfig("LossSpec: feature_dim must be >= 1");
    if (s.classes < 2) throw InvalidConfig("LossSpec: need at least 2 classes");
    if (s.task == Task::binary_logistic && s.classes != 2)
        throw InvalidConfig("LossSpec: binary_logistic requires exactly 2 classes");
    if (s.task == Task::mlp && s.hidden < 1) throw InvalidConfig("LossSpec: MLP hidden width must be >= 1");
    if (!(s.l2_reg >= 0.0)) throw InvalidConfig("LossSpec: l2_reg must be >= 0");
}

/// Zero the padding slot (if any); it carries no gradient and is meaningless after reception.
inline void clear_padding(ModelVector& theta, const LossSpec& s)
{
    for (Eigen::Index i = raw_dim(s); i < theta.size(); ++i) theta[i] = 0.0;
}

namespace detail {

inline double log_sum_exp(const RVec& z)
{
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

inline void check_theta(const ModelVector& theta, const LossSpec& s, const Dataset& ds)
{
    if (theta.size() != model_dim(s))
        throw DomainError("model dimension " + std::to_string(theta.size()) + " does not match task dimension " +
                          std::to_string(model_dim(s)));
    if (ds.feature_dim() != s.feature_dim)
        throw DomainError("dataset feature dimension " + std::to_string(ds.feature_dim()) +
                          " does not match task feature dimension " + std::to_string(s.feature_dim));
}

/// Class scores of one sample (binary: [0, z]).
inline RVec scores(const ModelVector& theta, const LossSpec& s, const Eigen::Ref<const RVec>& x)
{
    const Eigen::Index b = s.feature_dim;
    const Eigen::Index V = s.classes;
    switch (s.task) {
    case Task::multinomial_logistic: {
        Eigen::Map<const RowMatrix> W(theta.data(), V, b);
        RVec z = W * x;
        if (s.bias) z += theta.segment(V * b, V);
        return z;
    }
    case Task::binary_logistic: {
        double z = theta.head(b).dot(x);
        if (s.bias) z += theta[b];
        RVec out(2);
        out << 0.0, z;
        return out;
    }
    case Task::mlp: {
        const Eigen::Index H = s.hidden;
        Eigen::Map<const RowMatrix> W1(theta.data(), H, b);
        Eigen::Index off = H * b;
        RVec z1 = W1 * x;
        if (s.bias) { z1 += theta.segment(off, H); off += H; }
        const RVec a = z1.array().tanh().matrix();
        Eigen::Map<const RowMatrix> W2(theta.data() + off, V, H);
        off += V * H;
        RVec z2 = W2 * a;
        if (s.bias) z2 += theta.segment(off, V);
        return z2;
    }
    }
    return {};
}

/// Adds the gradient of one sample loss into `g` (if non-null); returns the sample loss.
inline double sample_loss_grad(const ModelVector& theta, const LossSpec& s, const Eigen::Ref<const RVec>& x, int y,
                               RVec* g)
{
    const Eigen::Index b = s.feature_dim;
    const Eigen::Index V = s.classes;
    switch (s.task) {
    case Task::multinomial_logistic: {
        const RVec z = scores(theta, s, x);
        const double lse = log_sum_exp(z);
        if (g) {
            RVec d = (z.array() - lse).exp().matrix();
            d[y] -= 1.0;
            Eigen::Map<RowMatrix> gW(g->data(), V, b);
            gW.noalias() += d * x.transpose();
            if (s.bias) g->segment(V * b, V) += d;
        }
        return lse - z[y];
    }
    case Task::binary_logistic: {
        const double z = scores(theta, s, x)[1];
        // softplus(z) - y z, evaluated stably
        const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        if (g) {
            const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            const double d = sig - y;
            g->head(b) += d * x;
            if (s.bias) (*g)[b] += d;
        }
        return sp - y * z;
    }
    case Task::mlp: {
        const Eigen::Index H = s.hidden;
        Eigen::Map<const RowMatrix> W1(theta.data(), H, b);
        Eigen::Index off_b1 = H * b;
        RVec z1 = W1 * x;
        if (s.bias) z1 += theta.segment(off_b1, H);
        const RVec a = z1.array().tanh().matrix();
        const Eigen::Index off_W2 = off_b1 + (s.bias ? H : 0);
        Eigen::Map<const RowMatrix> W2(theta.data() + off_W2, V, H);
        const Eigen::Index off_b2 = off_W2 + V * H;
        RVec z2 = W2 * a;
        if (s.bias) z2 += theta.segment(off_b2, V);
        const double lse = log_sum_exp(z2);
        if (g) {
            RVec d2 = (z2.array() - lse).exp().matrix();
            d2[y] -= 1.0;
            Eigen::Map<RowMatrix> gW2(g->data() + off_W2, V, H);
            gW2.noalias() += d2 * a.transpose();
            if (s.bias) g->segment(off_b2, V) += d2;
            const RVec dz1 = ((W2.transpose() * d2).array() * (1.0 - a.array().square())).matrix();
            Eigen::Map<RowMatrix> gW1(g->data(), H, b);
            gW1.noalias() += dz1 * x.transpose();
            if (s.bias) g->segment(off_b1, H) += dz1;
        }
        return lse - z2[y];
    }
    }
    return 0.0;
}

inline double regularizer(const ModelVector& theta, const LossSpec& s)
{
    return 0.5 * s.l2_reg * theta.head(raw_dim(s)).squaredNorm();
}

} // namespace detail

/// Mean sample loss over `idx` plus (l2_reg/2)||theta||^2.
inline double loss_on(const ModelVector& theta, const Dataset& ds, std::span<const std::size_t> idx, const LossSpec& s)
{
    detail::check_theta(theta, s, ds);
    if (idx.empty()) throw DomainError("loss_on: empty index set");
    double acc = 0.0;
    for (auto i : idx)
        acc += detail::sample_loss_grad(theta, s, ds.features.row(static_cast<Eigen::Index>(i)).transpose(),
                                        ds.labels[i], nullptr);
    return acc / static_cast<double>(idx.size()) + detail::regularizer(theta, s);
}

/// Mini-batch gradient: mean of per-sample gradients over `batch` plus the regularizer gradient.
/// Duplicated indices count once per occurrence.
inline ModelVector grad_on(const ModelVector& theta, const Dataset& ds, std::span<const std::size_t> batch,
                           const LossSpec& s)
{
    detail::check_theta(theta, s, ds);
    if (batch.empty()) throw DomainError("grad_on: empty mini-batch");
    RVec g = RVec::Zero(theta.size());
    for (auto i : batch)
        detail::sample_loss_grad(theta, s, ds.features.row(static_cast<Eigen::Index>(i)).transpose(), ds.labels[i],
                                 &g);
    g /= static_cast<double>(batch.size());
    const auto r = raw_dim(s);
    g.head(r) += s.l2_reg * theta.head(r);
    return g;
}

/// F_k(theta).
inline double local_loss(const ModelVector& theta, const Dataset& ds, std::size_t k, const LossSpec& s)
{
    return loss_on(theta, ds, ds.shards.at(k), s);
}

inline ModelVector local_grad(const ModelVector& theta, const Dataset& ds, std::span<const std::size_t> batch,
                              const LossSpec& s)
{
    return grad_on(theta, ds, batch, s);
}

/// Full local gradient of F_k.
inline ModelVector full_local_grad(const ModelVector& theta, const Dataset& ds, std::size_t k, const LossSpec& s)
{
    return grad_on(theta, ds, ds.shards.at(k), s);
}

/// F(theta) = sum_k (S_k / S) F_k(theta).
inline double global_loss(const ModelVector& theta, const Dataset& ds, const LossSpec& s)
{
    const auto w = ds.shard_weights();
    double f = 0.0;
    for (std::size_t k = 0; k < ds.num_devices(); ++k) f += w[k] * local_loss(theta, ds, k, s);
    return f;
}

inline ModelVector global_grad(const ModelVector& theta, const Dataset& ds, const LossSpec& s)
{
    const auto w = ds.shard_weights();
    RVec g = RVec::Zero(theta.size());
    for (std::size_t k = 0; k < ds.num_devices(); ++k) g += w[k] * full_local_grad(theta, ds, k, s);
    return g;
}

/// Fraction of samples whose argmax score equals the label; ties go to the lowest class index.
inline double evaluate_accuracy(const ModelVector& theta, const Dataset& test, const LossSpec& s)
{
    detail::check_theta(theta, s, test);
    if (test.num_samples() == 0) throw DomainError("evaluate_accuracy: empty test set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.num_samples(); ++i) {
        const RVec z = detail::scores(theta, s, test.features.row(static_cast<Eigen::Index>(i)).transpose());
        Eigen::Index best = 0;
        for (Eigen::Index v = 1; v < z.size(); ++v)
            if (z[v] > z[best]) best = v;
        if (best == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.num_samples());
}

// ------------------------------------------------------------------------
// Local SGD

struct LocalUpdateResult {
    ModelVector theta_J;
    ModelVector delta; ///< theta_J - theta_0 (theta_J is formed as theta_0 + delta)
};

/**
 * J steps of theta <- theta - eta * grad(theta, B) with each B drawn uniformly without
 * replacement from {0..n-1}, fresh every step. `grad(theta, positions)` receives the
 * batch as positions into the caller's shard.
 */
template <class GradFn, class Engine>
LocalUpdateResult local_sgd(const ModelVector& theta0, GradFn&& grad, double eta, int J, std::size_t batch_size,
                            std::size_t n, Engine& eng)
{
    if (!(eta > 0.0)) throw DomainError("local_sgd: learning rate must be positive");
    if (J < 1) throw DomainError("local_sgd: J must be >= 1");
    if (batch_size < 1 || batch_size > n) throw DomainError("local_sgd: batch size must lie in [1, S_k]");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    RVec delta = RVec::Zero(theta0.size());
    std::vector<std::size_t> batch(batch_size);
    for (int tau = 0; tau < J; ++tau) {
        // partial Fisher-Yates: the first batch_size slots become a uniform subset
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::uniform_int_distribution<std::size_t> ud(i, n - 1);
            std::swap(pool[i], pool[ud(eng)]);
            batch[i] = pool[i];
        }
        const RVec theta = theta0 + delta;
        delta -= eta * grad(theta, std::span<const std::size_t>(batch));
    }
    return {theta0 + delta, delta};
}

/// Device k's local training from theta0 (its received estimate of the global model).
template <class Engine>
LocalUpdateResult local_update(const ModelVector& theta0, const Dataset& ds, std::size_t k, const LossSpec& s,
                               double eta, int J, std::size_t batch_size, Engine& eng)
{
    const auto& shard = ds.shards.at(k);
    std::vector<std::size_t> rows(batch_size);
    auto grad = [&](const RVec& theta, std::span<const std::size_t> pos) {
        for (std::size_t i = 0; i < pos.size(); ++i) rows[i] = shard[pos[i]];
        return grad_on(theta, ds, std::span<const std::size_t>(rows.data(), pos.size()), s);
    };
    return local_sgd(theta0, grad, eta, J, batch_size, shard.size(), eng);
}

// ------------------------------------------------------------------------
// Constants for the convergence bound

struct SmoothnessEstimate {
    double L = 0.0;
    double lambda = 0.0;
    bool heuristic = false;
};

namespace detail {

/// Rows of the shard with a trailing 1 when the model has a bias.
inline RowMatrix design_matrix(const Dataset& ds, std::span<const std::size_t> idx, bool bias)
{
    RowMatrix X(static_cast<Eigen::Index>(idx.size()), ds.feature_dim() + (bias ? 1 : 0));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        X.row(static_cast<Eigen::Index>(r)).head(ds.feature_dim()) = ds.features.row(static_cast<Eigen::Index>(idx[r]));
        if (bias) X(static_cast<Eigen::Index>(r), ds.feature_dim()) = 1.0;
    }
    return X;
}

/// Hessian-vector product by central differences of the full-shard gradient.
inline RVec hvp(const ModelVector& theta, const Dataset& ds, std::span<const std::size_t> idx, const LossSpec& s,
                const RVec& v)
{
    const double h = 1e-5;
    return (grad_on(theta + h * v, ds, idx, s) - grad_on(theta - h * v, ds, idx, s)) / (2.0 * h);
}

} // namespace detail

/**
 * Logistic tasks: L = max_k (c_V / S_k) sigma_max(X_k^T X_k) + l2_reg with c_V = 1/4
 * (binary) or 1/2 (multinomial), and lambda = l2_reg; both exact bounds.
 * MLP: spectral estimates of the Hessian at `probe` by power iteration on
 * finite-difference Hessian-vector products; flagged heuristic.
 */
inline SmoothnessEstimate estimate_smoothness(const LossSpec& s, const Dataset& ds,
                                              const ModelVector* probe = nullptr)
{
    validate(s);
    SmoothnessEstimate est;
    if (s.task != Task::mlp) {
        const double cV = s.task == Task::binary_logistic ? 0.25 : 0.5;
        double worst = 0.0;
        for (const auto& shard : ds.shards) {
            const RowMatrix X = detail::design_matrix(ds, shard, s.bias);
            const Eigen::MatrixXd G = X.transpose() * X;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
            worst = std::max(worst, cV * es.eigenvalues().maxCoeff() / static_cast<double>(shard.size()));
        }
        est.L = worst + s.l2_reg;
        est.lambda = s.l2_reg;
        return est;
    }

    est.heuristic = true;
    const auto D = model_dim(s);
    const auto r = raw_dim(s);
    RVec theta = probe ? *probe : RVec::Zero(D);
    if (!probe) {
        std::mt19937_64 eng(0x5EED);
        std::normal_distribution<double> nd(0.0, 0.1);
        for (Eigen::Index i = 0; i < r; ++i) theta[i] = nd(eng);
    }
    const auto idx = ds.all_indices();
    auto power = [&](double shift) {
        RVec v = RVec::Zero(D);
        std::mt19937_64 eng(0xC0FFEE);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (Eigen::Index i = 0; i < r; ++i) v[i] = nd(eng);
        v.normalize();
        double lam = 0.0;
        for (int it = 0; it < 60; ++it) {
            RVec w = shift * v - detail::hvp(theta, ds, idx, s, v);
            if (shift == 0.0) w = -w;
            lam = v.dot(w);
            const double n = w.norm();
            if (n == 0.0) break;
            v = w / n;
        }
        return lam;
    };
    est.L = power(0.0);
    est.lambda = est.L - power(est.L);
    return est;
}

struct SgdConstants {
    double mu = 0.0;
    double delta = 0.0;
};

/**
 * Exact variance of a without-replacement mini-batch mean of size m drawn from the
 * n per-sample gradients of shard k:  (n - m) / (m (n - 1)) * (1/n) sum_i ||g_i - gbar||^2.
 */
inline double minibatch_variance(const ModelVector& theta, const Dataset& ds, std::size_t k, std::size_t m,
                                 const LossSpec& s)
{
    const auto& shard = ds.shards.at(k);
    const std::size_t n = shard.size();
    if (m < 1 || m > n) throw DomainError("minibatch_variance: batch size must lie in [1, S_k]");
    if (m == n) return 0.0;
    std::vector<RVec> g(n);
    RVec mean = RVec::Zero(theta.size());
    for (std::size_t i = 0; i < n; ++i) {
        g[i] = RVec::Zero(theta.size());
        detail::sample_loss_grad(theta, s, ds.features.row(static_cast<Eigen::Index>(shard[i])).transpose(),
                                 ds.labels[shard[i]], &g[i]);
        mean += g[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& gi : g) ss += (gi - mean).squaredNorm();
    const double dn = static_cast<double>(n);
    const double dm = static_cast<double>(m);
    return (dn - dm) / (dm * (dn - 1.0)) * ss / dn;
}

/**
 * mu = max over theta samples and devices of the mini-batch gradient variance;
 * delta = max over theta samples of ||grad F - sum_k phi_k grad F_k||^2.
 * `phi` defaults to S_k / S.
 */
inline SgdConstants estimate_sgd_constants(std::span<const ModelVector> thetas, const LossSpec& s, const Dataset& ds,
                                           std::size_t batch_size, std::span<const double> phi = {})
{
    if (thetas.empty()) throw DomainError("estimate_sgd_constants: need at least one theta sample");
    std::vector<double> weights(phi.begin(), phi.end());
    if (weights.empty()) weights = ds.shard_weights();
    if (weights.size() != ds.num_devices()) throw DomainError("estimate_sgd_constants: phi has wrong length");
    SgdConstants c;
    for (const auto& theta : thetas) {
        RVec mix = RVec::Zero(theta.size());
        for (std::size_t k = 0; k < ds.num_devices(); ++k) {
            c.mu = std::max(c.mu, minibatch_variance(theta, ds, k, std::min(batch_size, ds.shards[k].size()), s));
            mix += weights[k] * full_local_grad(theta, ds, k, s);
        }
        c.delta = std::max(c.delta, (global_grad(theta, ds, s) - mix).squaredNorm());
    }
    return c;
}

// ------------------------------------------------------------------------
// Optimum of the global loss (logistic tasks)

/// Exact Hessian of the global loss for the logistic tasks (padding rows/cols zero).
inline Eigen::MatrixXd logistic_hessian(const ModelVector& theta, const Dataset& ds, const LossSpec& s)
{
    if (s.task == Task::mlp) throw DomainError("logistic_hessian: not available for the MLP task");
    const Eigen::Index D = theta.size();
    const Eigen::Index b = s.feature_dim;
    const Eigen::Index bx = b + (s.bias ? 1 : 0);
    const Eigen::Index V = s.classes;
    Eigen::MatrixXd Hs = Eigen::MatrixXd::Zero(D, D);
    const auto w = ds.shard_weights();
    RVec xt(bx);
    for (std::size_t k = 0; k < ds.num_devices(); ++k) {
        const double wk = w[k] / static_cast<double>(ds.shards[k].size());
        for (auto i : ds.shards[k]) {
            xt.head(b) = ds.features.row(static_cast<Eigen::Index>(i)).transpose();
            if (s.bias) xt[b] = 1.0;
            const Eigen::MatrixXd xx = xt * xt.transpose();
            const RVec z = detail::scores(theta, s, xt.head(b));
            if (s.task == Task::binary_logistic) {
                const double p = 1.0 / (1.0 + std::exp(-z[1]));
                Hs.topLeftCorner(bx, bx) += wk * p * (1.0 - p) * xx;
                continue;
            }
            const RVec p = (z.array() - detail::log_sum_exp(z)).exp().matrix();
            // parameter index of (class v, feature j): weights row-major, biases after
            auto at = [&](Eigen::Index v, Eigen::Index j) { return j < b ? v * b + j : V * b + v; };
            for (Eigen::Index v = 0; v < V; ++v)
                for (Eigen::Index u = 0; u < V; ++u) {
                    const double c = wk * ((v == u ? p[v] : 0.0) - p[v] * p[u]);
                    if (c == 0.0) continue;
                    for (Eigen::Index j = 0; j < bx; ++j)
                        for (Eigen::Index i2 = 0; i2 < bx; ++i2) Hs(at(v, j), at(u, i2)) += c * xx(j, i2);
                }
        }
    }
    const auto r = raw_dim(s);
    Hs.topLeftCorner(r, r).diagonal().array() += s.l2_reg;
    return Hs;
}

struct OptimumResult {
    ModelVector theta;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
};

/**
 * Deterministic damped Newton on the global loss until ||grad F|| < tol. Used as the
 * F* oracle for strongly convex (logistic, l2_reg > 0) tasks.
 */
inline OptimumResult solve_optimum(const Dataset& ds, const LossSpec& s, double tol = 1e-10, int max_iter = 200)
{
    if (s.task == Task::mlp || !(s.l2_reg > 0.0))
        throw DomainError("solve_optimum: requires a logistic task with l2_reg > 0");
    const auto D = model_dim(s);
    const auto r = raw_dim(s);
    OptimumResult res;
    res.theta = RVec::Zero(D);
    double f = global_loss(res.theta, ds, s);
    for (int it = 0; it < max_iter; ++it) {
        const RVec g = global_grad(res.theta, ds, s);
        res.grad_norm = g.norm();
        res.iterations = it;
        if (res.grad_norm < tol) break;
        const Eigen::MatrixXd Hs = logistic_hessian(res.theta, ds, s);
        RVec step = RVec::Zero(D);
        step.head(r) = Hs.topLeftCorner(r, r).ldlt().solve(g.head(r));
        double t = 1.0;
        const double slope = g.dot(step);
        if (res.grad_norm < 1e-6) {
            // quadratic convergence region; loss differences are below rounding here
            res.theta -= step;
            f = global_loss(res.theta, ds, s);
            continue;
        }
        for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
            const RVec cand = res.theta - t * step;
            const double fc = global_loss(cand, ds, s);
            if (fc <= f - 1e-4 * t * slope || bt == 59) {
                res.theta = cand;
                f = fc;
                break;
            }
        }
    }
    res.value = f;
    res.grad_norm = global_grad(res.theta, ds, s).norm();
    return res;
}

} // namespace otafl
