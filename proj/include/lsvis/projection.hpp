#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsvis/array.hpp"

namespace lsvis::proj {

struct ProjError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exact brute-force k nearest neighbors, row i sorted by (distance, index).
struct KnnResult {
    int64_t k = 0;
    std::vector<int64_t> idx;   // [N*k]
    std::vector<double> dist;   // [N*k]
    int64_t count() const { return k == 0 ? 0 : static_cast<int64_t>(idx.size()) / k; }
};

struct FuzzyEdge {
    int64_t i, j;   // i < j after symmetrization
    double w;       // fuzzy union weight in (0,1]
};

struct FuzzyGraph {
    int64_t n = 0;
    std::vector<FuzzyEdge> edges;
    std::vector<double> rho;    // per-point nearest-neighbor distance
    std::vector<double> sigma;  // per-point calibrated bandwidth
};

struct ProjectionConfig {
    int64_t n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    int epochs = 200;
    int negative_samples = 5;
    double learning_rate = 1.0;  // decays linearly to 0
    uint64_t seed = 0;
};

struct Embedding2D {
    nd::Array coords;  // [N,2]
    std::vector<int> labels;
};

inline double fuzzy_union(double a, double b) { return a + b - a * b; }

KnnResult knn_graph(const nd::ArrayT<double>& z, int64_t k);
FuzzyGraph fuzzy_simplicial_set(const KnnResult& knn, int64_t k);

// Calibrates the low-dimensional curve psi(d) = 1/(1 + a*d^(2b)) against the
// min_dist/spread target by damped least squares.
std::pair<double, double> fit_ab(double min_dist, double spread);

Embedding2D optimize_embedding(const FuzzyGraph& graph, const ProjectionConfig& cfg);

// knn_graph -> fuzzy_simplicial_set -> fit_ab -> optimize_embedding, run in a
// canonical point order so the result is independent of input permutation.
Embedding2D project(const nd::Array& z, const std::vector<int>& labels,
                    const ProjectionConfig& cfg);

// CSV with header `index,x,y,label`
void write_embedding_csv(const Embedding2D& e, const std::string& path);
Embedding2D read_embedding_csv(const std::string& path);

}  // namespace lsvis::proj
