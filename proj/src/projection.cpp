#include "lsvis/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "lsvis/rng.hpp"

namespace lsvis::proj {

KnnResult knn_graph(const nd::ArrayT<double>& z, int64_t k) {
    if (z.shape.size() != 2) throw ProjError("knn_graph: z must be [N,D]");
    int64_t n = z.shape[0], d = z.shape[1];
    if (k < 1 || k >= n) throw ProjError("knn_graph: need 1 <= k < N");

    KnnResult res;
    res.k = k;
    res.idx.resize(static_cast<size_t>(n * k));
    res.dist.resize(static_cast<size_t>(n * k));
    std::vector<std::pair<double, int64_t>> cand(static_cast<size_t>(n - 1));
    for (int64_t i = 0; i < n; ++i) {
        size_t c = 0;
        for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double sq = 0.0;
            for (int64_t t = 0; t < d; ++t) {
                double diff = z[i * d + t] - z[j * d + t];
                sq += diff * diff;
            }
            cand[c++] = {std::sqrt(sq), j};
        }
        // ties break toward the lower index via the pair ordering
        std::partial_sort(cand.begin(), cand.begin() + static_cast<int64_t>(k), cand.end());
        for (int64_t t = 0; t < k; ++t) {
            res.dist[static_cast<size_t>(i * k + t)] = cand[static_cast<size_t>(t)].first;
            res.idx[static_cast<size_t>(i * k + t)] = cand[static_cast<size_t>(t)].second;
        }
    }
    return res;
}

FuzzyGraph fuzzy_simplicial_set(const KnnResult& knn, int64_t k) {
    if (knn.k != k || k < 2) throw ProjError("fuzzy_simplicial_set: invalid kNN result");
    int64_t n = knn.count();
    FuzzyGraph g;
    g.n = n;
    g.rho.resize(static_cast<size_t>(n));
    g.sigma.resize(static_cast<size_t>(n));

    const double target = std::log2(static_cast<double>(k));
    std::vector<double> directed(static_cast<size_t>(n * k));
    for (int64_t i = 0; i < n; ++i) {
        const double* di = knn.dist.data() + i * k;
        double rho = di[0];
        g.rho[static_cast<size_t>(i)] = rho;

        auto weight_sum = [&](double sigma) {
            double s = 0.0;
            for (int64_t t = 0; t < k; ++t) s += std::exp(-std::max(0.0, di[t] - rho) / sigma);
            return s;
        };
        double lo = 1e-12, hi = 1.0;
        while (weight_sum(hi) < target && hi < 1e12) hi *= 2.0;
        double sigma = 0.5 * (lo + hi);
        bool converged = false;
        for (int it = 0; it < 64; ++it) {
            sigma = 0.5 * (lo + hi);
            double s = weight_sum(sigma);
            if (std::abs(s - target) <= 1e-5) {
                converged = true;
                break;
            }
            (s > target ? hi : lo) = sigma;
        }
        if (!converged && std::abs(weight_sum(sigma) - target) > 1e-3)
            std::cerr << "warning: sigma search did not converge for point " << i
                      << "; clamping to bracket midpoint\n";
        g.sigma[static_cast<size_t>(i)] = sigma;
        for (int64_t t = 0; t < k; ++t)
            directed[static_cast<size_t>(i * k + t)] =
                std::exp(-std::max(0.0, di[t] - rho) / sigma);
    }

    // fuzzy union a + b - ab over the directed pair map
    std::vector<std::pair<std::pair<int64_t, int64_t>, double>> pairs;
    pairs.reserve(static_cast<size_t>(n * k));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t t = 0; t < k; ++t) {
            int64_t j = knn.idx[static_cast<size_t>(i * k + t)];
            auto key = i < j ? std::make_pair(i, j) : std::make_pair(j, i);
            pairs.push_back({key, directed[static_cast<size_t>(i * k + t)]});
        }
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (size_t p = 0; p < pairs.size();) {
        double a = pairs[p].second, b = 0.0;
        if (p + 1 < pairs.size() && pairs[p + 1].first == pairs[p].first) {
            b = pairs[p + 1].second;
            ++p;
        }
        double w = fuzzy_union(a, b);
        if (w > 0.0) g.edges.push_back({pairs[p].first.first, pairs[p].first.second, w});
        ++p;
    }
    return g;
}

static double psi(double d, double a, double b) {
    return 1.0 / (1.0 + a * std::pow(d * d, b));
}

std::pair<double, double> fit_ab(double min_dist, double spread) {
    if (!(min_dist > 0.0 && min_dist < spread)) throw ProjError("fit_ab: need 0 < min_dist < spread");
    // target curve sampled on (0, 3*spread]
    const int m = 300;
    std::vector<double> xs(m), ys(m);
    for (int i = 0; i < m; ++i) {
        double x = 3.0 * spread * static_cast<double>(i + 1) / m;
        xs[static_cast<size_t>(i)] = x;
        ys[static_cast<size_t>(i)] =
            x <= min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
    }

    double a = 1.0, b = 1.0, lambda = 1e-3;
    auto residual_sq = [&](double aa, double bb) {
        double r = 0.0;
        for (int i = 0; i < m; ++i) {
            double e = psi(xs[static_cast<size_t>(i)], aa, bb) - ys[static_cast<size_t>(i)];
            r += e * e;
        }
        return r;
    };
    double r2 = residual_sq(a, b);
    for (int it = 0; it < 300; ++it) {
        // Levenberg-Marquardt step on the 2x2 normal equations
        double jtj[3] = {0, 0, 0}, jtr[2] = {0, 0};
        for (int i = 0; i < m; ++i) {
            double x = xs[static_cast<size_t>(i)];
            double d2b = std::pow(x * x, b);
            double denom = 1.0 + a * d2b;
            double f = 1.0 / denom;
            double da = -d2b / (denom * denom);
            double db = -a * d2b * std::log(x * x) / (denom * denom);
            double e = f - ys[static_cast<size_t>(i)];
            jtj[0] += da * da;
            jtj[1] += da * db;
            jtj[2] += db * db;
            jtr[0] += da * e;
            jtr[1] += db * e;
        }
        double m00 = jtj[0] * (1.0 + lambda), m11 = jtj[2] * (1.0 + lambda), m01 = jtj[1];
        double det = m00 * m11 - m01 * m01;
        if (std::abs(det) < 1e-300) break;
        double step_a = -(m11 * jtr[0] - m01 * jtr[1]) / det;
        double step_b = -(-m01 * jtr[0] + m00 * jtr[1]) / det;
        double na = a + step_a, nb = b + step_b;
        double nr2 = na > 0.0 && nb > 0.0 ? residual_sq(na, nb) : 1e300;
        if (nr2 < r2) {
            if (std::abs(step_a) < 1e-12 && std::abs(step_b) < 1e-12) {
                a = na;
                b = nb;
                return {a, b};
            }
            a = na;
            b = nb;
            r2 = nr2;
            lambda = std::max(lambda * 0.5, 1e-12);
        } else {
            lambda *= 4.0;
            if (lambda > 1e12) break;
        }
    }
    if (r2 > 1.0)
        throw ProjError("fit_ab: least squares did not converge, residual " + std::to_string(r2));
    return {a, b};
}

namespace {

double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

void check_finite(const nd::Array& coords, int epoch) {
    for (int64_t i = 0; i < coords.shape[0]; ++i)
        if (!std::isfinite(coords[i * 2]) || !std::isfinite(coords[i * 2 + 1]))
            throw ProjError("optimize_embedding: non-finite coordinate at epoch " +
                            std::to_string(epoch) + ", point " + std::to_string(i));
}

}  // namespace

Embedding2D optimize_embedding(const FuzzyGraph& graph, const ProjectionConfig& cfg) {
    if (graph.n < 2 || graph.edges.empty()) throw ProjError("optimize_embedding: empty graph");
    if (cfg.epochs < 1) throw ProjError("optimize_embedding: epochs must be >= 1");
    auto [a, b] = fit_ab(cfg.min_dist, cfg.spread);

    Rng rng(cfg.seed);
    Rng init_rng = rng.stream(1);
    Rng sgd_rng = rng.stream(2);

    Embedding2D e;
    e.coords = nd::Array({graph.n, 2});
    for (auto& v : e.coords.data) v = static_cast<float>(init_rng.uniform(-10.0, 10.0) * 1e-3);

    double w_max = 0.0;
    for (const auto& edge : graph.edges) w_max = std::max(w_max, edge.w);

    std::vector<double> y(static_cast<size_t>(graph.n * 2));
    for (size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(e.coords[static_cast<int64_t>(i)]);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double alpha =
            cfg.learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
        for (const auto& edge : graph.edges) {
            if (sgd_rng.uniform() >= edge.w / w_max) continue;
            double* yi = y.data() + edge.i * 2;
            double* yj = y.data() + edge.j * 2;
            double dx = yi[0] - yj[0], dy = yi[1] - yj[1];
            double d2 = dx * dx + dy * dy;
            if (d2 > 0.0) {
                double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
                double gx = clip4(coeff * dx), gy = clip4(coeff * dy);
                yi[0] += alpha * gx;
                yi[1] += alpha * gy;
                yj[0] -= alpha * gx;
                yj[1] -= alpha * gy;
            }
            for (int s = 0; s < cfg.negative_samples; ++s) {
                int64_t nidx = sgd_rng.below(graph.n);
                if (nidx == edge.i) continue;
                double* yn = y.data() + nidx * 2;
                double ndx = yi[0] - yn[0], ndy = yi[1] - yn[1];
                double nd2 = ndx * ndx + ndy * ndy;
                double coeff = 2.0 * b / ((0.001 + nd2) * (a * std::pow(nd2, b) + 1.0));
                yi[0] += alpha * clip4(coeff * ndx);
                yi[1] += alpha * clip4(coeff * ndy);
            }
        }
        for (size_t i = 0; i < y.size(); ++i) e.coords[static_cast<int64_t>(i)] = static_cast<float>(y[i]);
        check_finite(e.coords, epoch);
    }
    return e;
}

Embedding2D project(const nd::Array& z, const std::vector<int>& labels,
                    const ProjectionConfig& cfg) {
    if (z.shape.size() != 2) throw ProjError("project: z must be [N,D]");
    int64_t n = z.shape[0], d = z.shape[1];
    if (!labels.empty() && static_cast<int64_t>(labels.size()) != n)
        throw ProjError("project: labels length mismatch");
    if (n < cfg.n_neighbors + 1) throw ProjError("project: need N >= n_neighbors + 1");

    // canonical lexicographic order makes the whole run (and its RNG
    // consumption) independent of the input permutation
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t x, int64_t yy) {
        for (int64_t t = 0; t < d; ++t) {
            float ax = z[x * d + t], ay = z[yy * d + t];
            if (ax != ay) return ax < ay;
        }
        return false;  // identical points are interchangeable
    });

    nd::ArrayT<double> zc({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t t = 0; t < d; ++t)
            zc[i * d + t] = static_cast<double>(z[order[static_cast<size_t>(i)] * d + t]);

    auto knn = knn_graph(zc, cfg.n_neighbors);
    auto graph = fuzzy_simplicial_set(knn, cfg.n_neighbors);
    Embedding2D canon = optimize_embedding(graph, cfg);

    Embedding2D out;
    out.coords = nd::Array({n, 2});
    out.labels = labels;
    for (int64_t i = 0; i < n; ++i) {
        out.coords[order[static_cast<size_t>(i)] * 2] = canon.coords[i * 2];
        out.coords[order[static_cast<size_t>(i)] * 2 + 1] = canon.coords[i * 2 + 1];
    }
    return out;
}

void write_embedding_csv(const Embedding2D& e, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ProjError("write_embedding_csv: cannot open " + path);
    f << "index,x,y,label\n";
    for (int64_t i = 0; i < e.coords.shape[0]; ++i) {
        char buf[96];
        int label = i < static_cast<int64_t>(e.labels.size()) ? e.labels[static_cast<size_t>(i)] : -1;
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%d\n", static_cast<long long>(i),
                      static_cast<double>(e.coords[i * 2]),
                      static_cast<double>(e.coords[i * 2 + 1]), label);
        f << buf;
    }
    if (!f) throw ProjError("write_embedding_csv: write failed on " + path);
}

Embedding2D read_embedding_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ProjError("read_embedding_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "index,x,y,label")
        throw ProjError("read_embedding_csv: bad header in " + path);
    std::vector<float> xs, ys;
    std::vector<int> labels;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        long long idx;
        double x, yv;
        int label;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%d", &idx, &x, &yv, &label) != 4)
            throw ProjError("read_embedding_csv: bad row '" + line + "'");
        xs.push_back(static_cast<float>(x));
        ys.push_back(static_cast<float>(yv));
        labels.push_back(label);
    }
    Embedding2D e;
    e.coords = nd::Array({static_cast<int64_t>(xs.size()), 2});
    for (size_t i = 0; i < xs.size(); ++i) {
        e.coords[static_cast<int64_t>(i) * 2] = xs[i];
        e.coords[static_cast<int64_t>(i) * 2 + 1] = ys[i];
    }
    e.labels = std::move(labels);
    return e;
}

}  // namespace lsvis::proj
