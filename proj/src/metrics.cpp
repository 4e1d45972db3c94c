#include "lsvis/metrics.hpp"

#include <cmath>
#include <limits>

namespace lsvis::metrics {

EvaluationReport silhouette_score(const nd::ArrayT<double>& points,
                                  const std::vector<int>& labels) {
    if (points.shape.size() != 2) throw MetricError("silhouette: points must be [N,D]");
    int64_t n = points.shape[0], d = points.shape[1];
    if (n < 3) throw MetricError("silhouette: need at least 3 points");
    if (static_cast<int64_t>(labels.size()) != n)
        throw MetricError("silhouette: label count mismatch");

    std::map<int, int64_t> counts;
    for (int l : labels) counts[l]++;
    if (counts.size() < 2) throw MetricError("silhouette: need at least 2 clusters");

    std::vector<double> dist(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            double sq = 0.0;
            for (int64_t k = 0; k < d; ++k) {
                double diff = points[i * d + k] - points[j * d + k];
                sq += diff * diff;
            }
            dist[static_cast<size_t>(i * n + j)] = dist[static_cast<size_t>(j * n + i)] =
                std::sqrt(sq);
        }

    EvaluationReport rep;
    rep.n = n;
    rep.k = static_cast<int>(counts.size());
    std::map<int, double> class_sum;
    std::map<int, int64_t> class_n;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        int li = labels[static_cast<size_t>(i)];
        double s = 0.0;
        if (counts[li] > 1) {
            std::map<int, double> sum_to;
            for (int64_t j = 0; j < n; ++j)
                if (j != i) sum_to[labels[static_cast<size_t>(j)]] += dist[static_cast<size_t>(i * n + j)];
            double a = sum_to[li] / static_cast<double>(counts[li] - 1);
            double b = std::numeric_limits<double>::infinity();
            for (auto& [cls, cnt] : counts)
                if (cls != li) b = std::min(b, sum_to[cls] / static_cast<double>(cnt));
            double m = std::max(a, b);
            s = m > 0.0 ? (b - a) / m : 0.0;
        }
        total += s;
        class_sum[li] += s;
        class_n[li] += 1;
    }
    rep.silhouette = total / static_cast<double>(n);
    for (auto& [cls, sum] : class_sum)
        rep.per_class_mean[cls] = sum / static_cast<double>(class_n[cls]);
    return rep;
}

EvaluationReport silhouette_score(const nd::Array& points, const std::vector<int>& labels) {
    return silhouette_score(points.cast<double>(), labels);
}

EvaluationReport evaluate_projection(const Embedding2DView& e) {
    if (e.coords.shape.size() != 2 || e.coords.shape[1] != 2)
        throw MetricError("evaluate_projection: coords must be [N,2]");
    return silhouette_score(e.coords, e.labels);
}

}  // namespace lsvis::metrics
