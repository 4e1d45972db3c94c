#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsvis/autodiff.hpp"

namespace lsvis::losses {

struct LossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AuxKind { None, Clustering, Contrastive };

struct LossConfig {
    AuxKind aux = AuxKind::None;
    double lambda_cl = 0.2;
    double lambda_con = 0.2;
    double margin = 1.0;
    double beta = 1.0;  // VAE only
    bool adaptive = false;
    int pretrain_epochs = 0;
};

// Per-batch record of every component and the configured combination.
struct LossReport {
    double l_rec = 0.0;
    double l_cl = 0.0;
    double l_con = 0.0;
    double l_kl = 0.0;
    double soft_silhouette = 0.0;
    double total = 0.0;
    bool aux_active = false;  // false when the batch could not support the aux term
};

// mean squared error over all elements
template <typename T>
int mse_loss(nd::Tape<T>& t, int x, int x_hat) {
    nd::require_same_shape(t.val(x), t.val(x_hat), "mse_loss");
    return nd::mean_all(t, nd::square(t, nd::sub(t, x, x_hat)));
}

// KL divergence to the unit Gaussian, scaled by beta * latent_dim/(H*W).
// Raw KL is the batch mean of 0.5 * sum_d(mu^2 + sigma^2 - 1 - log sigma^2).
template <typename T>
int kl_loss(nd::Tape<T>& t, int mu, int log_var, double beta, int64_t latent_dim, int64_t h,
            int64_t w) {
    nd::require_same_shape(t.val(mu), t.val(log_var), "kl_loss");
    int64_t batch = t.val(mu).shape[0];
    int term = nd::sub(t, nd::add(t, nd::square(t, mu), nd::exp_(t, log_var)),
                       nd::add_scalar(t, log_var, T(1)));
    double scale = 0.5 / static_cast<double>(batch) * beta * static_cast<double>(latent_dim) /
                   static_cast<double>(h * w);
    return nd::mul_scalar(t, nd::sum_all(t, term), static_cast<T>(scale));
}

template <typename T>
struct SilhouetteTerms {
    nd::ArrayT<T> a;             // mean intra-cluster distance
    nd::ArrayT<T> b;             // mean distance to the nearest other cluster
    nd::ArrayT<T> s;             // per-point silhouette
    std::vector<bool> included;  // false where the point's label has < 2 batch members
};

template <typename T>
struct SoftSilhouetteResult {
    int loss;  // L_cl = 1 - S_f
    int soft_silhouette;
    SilhouetteTerms<T> terms;
};

// Differentiable batch silhouette with one-hot memberships, built from
// pairwise in-batch distances. Points whose label has fewer than two batch
// members are masked out of the mean.
template <typename T>
SoftSilhouetteResult<T> soft_silhouette_loss(nd::Tape<T>& t, int z, const std::vector<int>& labels,
                                             int class_count) {
    const nd::ArrayT<T>& vz = t.val(z);
    if (vz.shape.size() != 2 || vz.shape[0] != static_cast<int64_t>(labels.size()))
        throw LossError("soft_silhouette_loss: z must be [N,D] matching labels");
    int64_t n = vz.shape[0];

    std::vector<int64_t> counts(static_cast<size_t>(class_count), 0);
    for (int l : labels) {
        if (l < 0 || l >= class_count) throw LossError("soft_silhouette_loss: label out of range");
        counts[static_cast<size_t>(l)]++;
    }
    std::vector<int> represented;  // classes with >= 2 members
    for (int c = 0; c < class_count; ++c)
        if (counts[static_cast<size_t>(c)] >= 2) represented.push_back(c);
    if (represented.size() < 2)
        throw LossError("clustering loss undefined for single-cluster batch");
    std::vector<bool> included(static_cast<size_t>(n));
    int64_t n_included = 0;
    std::vector<int64_t> col_of(static_cast<size_t>(class_count), -1);
    for (size_t k = 0; k < represented.size(); ++k) col_of[static_cast<size_t>(represented[k])] = static_cast<int64_t>(k);
    for (int64_t i = 0; i < n; ++i) {
        included[static_cast<size_t>(i)] = col_of[static_cast<size_t>(labels[static_cast<size_t>(i)])] >= 0;
        if (included[static_cast<size_t>(i)]) ++n_included;
    }

    int64_t kk = static_cast<int64_t>(represented.size());
    int dist = nd::pairwise_distances(t, z);

    // a(i): mean distance to same-label points, excluding self
    nd::ArrayT<T> same({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            same[i * n + j] =
                (i != j && labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) ? T(1) : T(0);
    nd::ArrayT<T> ones({n, 1});
    std::fill(ones.data.begin(), ones.data.end(), T(1));
    int same_sum = nd::matmul(t, nd::mul(t, dist, nd::constant(t, same)), nd::constant(t, ones));
    nd::ArrayT<T> inv_same({n, 1});
    for (int64_t i = 0; i < n; ++i) {
        int64_t c = counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
        inv_same[i] = c > 1 ? T(1) / static_cast<T>(c - 1) : T(0);
    }
    int a = nd::reshape(t, nd::mul(t, same_sum, nd::constant(t, inv_same)), {n});

    // b(i): min over other represented labels of the mean distance
    nd::ArrayT<T> member({n, kk});
    for (int64_t j = 0; j < n; ++j) {
        int64_t col = col_of[static_cast<size_t>(labels[static_cast<size_t>(j)])];
        if (col >= 0) member[j * kk + col] = T(1);
    }
    int cluster_sum = nd::matmul(t, dist, nd::constant(t, member));
    nd::ArrayT<T> inv_cnt({n, kk});
    nd::ArrayT<T> own_barrier({n, kk});
    const T big = static_cast<T>(1e9);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < kk; ++k) {
            inv_cnt[i * kk + k] = T(1) / static_cast<T>(counts[static_cast<size_t>(represented[static_cast<size_t>(k)])]);
            own_barrier[i * kk + k] =
                labels[static_cast<size_t>(i)] == represented[static_cast<size_t>(k)] ? big : T(0);
        }
    int cluster_mean = nd::mul(t, cluster_sum, nd::constant(t, inv_cnt));
    int b = nd::row_min(t, nd::add(t, cluster_mean, nd::constant(t, own_barrier)));

    // s = (b - a) / (max(a, b) + eps), mean over included points
    int s = nd::div(t, nd::sub(t, b, a),
                    nd::add_scalar(t, nd::maximum(t, a, b), static_cast<T>(1e-9)));
    nd::ArrayT<T> mask({n});
    for (int64_t i = 0; i < n; ++i) mask[i] = included[static_cast<size_t>(i)] ? T(1) : T(0);
    int sf = nd::mul_scalar(t, nd::sum_all(t, nd::mul(t, s, nd::constant(t, mask))),
                            T(1) / static_cast<T>(n_included));
    int loss = nd::add_scalar(t, nd::neg(t, sf), T(1));

    SoftSilhouetteResult<T> out;
    out.loss = loss;
    out.soft_silhouette = sf;
    out.terms.a = t.val(a);
    out.terms.b = t.val(b);
    out.terms.s = t.val(s);
    out.terms.included = std::move(included);
    return out;
}

// Membership-matrix entry point so a probabilistic variant can slot in later.
// Rows must currently be exactly one-hot.
template <typename T>
SoftSilhouetteResult<T> soft_silhouette_loss(nd::Tape<T>& t, int z,
                                             const nd::ArrayT<T>& membership) {
    if (membership.shape.size() != 2)
        throw LossError("soft_silhouette_loss: membership must be [N,K]");
    int64_t n = membership.shape[0], k = membership.shape[1];
    std::vector<int> labels(static_cast<size_t>(n), -1);
    for (int64_t i = 0; i < n; ++i) {
        T row_sum = T(0);
        for (int64_t c = 0; c < k; ++c) {
            T v = membership[i * k + c];
            row_sum += v;
            if (v == T(1)) labels[static_cast<size_t>(i)] = static_cast<int>(c);
            else if (v != T(0))
                throw LossError("soft_silhouette_loss: only one-hot memberships supported");
        }
        if (row_sum != T(1))
            throw LossError("soft_silhouette_loss: membership rows must sum to 1");
    }
    return soft_silhouette_loss(t, z, labels, static_cast<int>(k));
}

// Mean over all unordered in-batch pairs of
// y * D^2 + (1-y) * max(0, margin - D)^2.
template <typename T>
int contrastive_loss(nd::Tape<T>& t, int z, const std::vector<int>& labels, double margin) {
    const nd::ArrayT<T>& vz = t.val(z);
    if (vz.shape.size() != 2 || vz.shape[0] != static_cast<int64_t>(labels.size()))
        throw LossError("contrastive_loss: z must be [N,D] matching labels");
    int64_t n = vz.shape[0];
    if (n < 2) throw LossError("contrastive_loss: need at least 2 points");

    nd::ArrayT<T> pos({n, n}), neg_m({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            bool same = labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
            pos[i * n + j] = same ? T(1) : T(0);
            neg_m[i * n + j] = same ? T(0) : T(1);
        }
    int dist = nd::pairwise_distances(t, z);
    int pos_term = nd::sum_all(t, nd::mul(t, nd::square(t, dist), nd::constant(t, pos)));
    int hinge = nd::relu(t, nd::add_scalar(t, nd::neg(t, dist), static_cast<T>(margin)));
    int neg_term = nd::sum_all(t, nd::mul(t, nd::square(t, hinge), nd::constant(t, neg_m)));
    double pairs = static_cast<double>(n * (n - 1) / 2);
    return nd::mul_scalar(t, nd::add(t, pos_term, neg_term), static_cast<T>(1.0 / pairs));
}

// Linear schedule shifting weight from reconstruction to the auxiliary loss
// at 0.01 per epoch.
inline std::pair<double, double> adaptive_weights(int epoch) {
    if (epoch < 0) throw LossError("adaptive_weights: epoch must be >= 0");
    double w_aux = std::min(1.0, 0.01 * epoch);
    double w_rec = std::max(0.0, 1.0 - 0.01 * epoch);
    return {w_rec, w_aux};
}

// Effective (w_rec, w_aux) for an epoch: pretrain gating first, then either
// the adaptive schedule (which replaces lambda entirely) or the fixed lambda.
inline std::pair<double, double> loss_weights(const LossConfig& cfg, int epoch) {
    if (cfg.aux == AuxKind::None) return {1.0, 0.0};
    if (epoch < cfg.pretrain_epochs) return {1.0, 0.0};
    if (cfg.adaptive) return adaptive_weights(epoch);
    return {1.0, cfg.aux == AuxKind::Clustering ? cfg.lambda_cl : cfg.lambda_con};
}

// Combine component values into the configured total:
// L = w_rec * (L_rec + L_kl) + w_aux * L_aux.
inline double total_loss(LossReport& report, const LossConfig& cfg, int epoch) {
    auto [w_rec, w_aux] = loss_weights(cfg, epoch);
    double aux = 0.0;
    if (report.aux_active) {
        if (cfg.aux == AuxKind::Clustering) aux = report.l_cl;
        if (cfg.aux == AuxKind::Contrastive) aux = report.l_con;
    }
    report.total = w_rec * (report.l_rec + report.l_kl) + w_aux * aux;
    return report.total;
}

}  // namespace lsvis::losses
