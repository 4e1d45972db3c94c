#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "lsvis/array.hpp"

namespace lsvis::metrics {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvaluationReport {
    double silhouette = 0.0;
    std::map<int, double> per_class_mean;  // mean s(i) per label
    int64_t n = 0;
    int k = 0;
};

// Exact brute-force silhouette over all pairwise Euclidean distances.
// Singleton clusters score s(i) = 0; so does the max(a,b)=0 degeneracy.
EvaluationReport silhouette_score(const nd::ArrayT<double>& points,
                                  const std::vector<int>& labels);
EvaluationReport silhouette_score(const nd::Array& points, const std::vector<int>& labels);

struct Embedding2DView {
    const nd::Array& coords;  // [N,2]
    const std::vector<int>& labels;
};

EvaluationReport evaluate_projection(const Embedding2DView& e);

}  // namespace lsvis::metrics
