#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tab2img/dataset.hpp"

namespace tab2img::ordering {

// Row-wise field ranking derived from the sample covariance matrix: in row i,
// the field with the largest |cov(i, j)| gets rank 1, the next rank 2, and so
// on. Ties break toward the lower field index. Diagonal entries hold 0 and
// never enter a path cost.
struct RankMatrix {
    std::size_t d = 0;
    std::vector<int> ranks;         // d x d, row-major
    std::vector<double> covariance; // the basis it was derived from, d x d
    std::vector<std::size_t> zero_variance_fields;

    int rank(std::size_t i, std::size_t j) const { return ranks[i * d + j]; }
};

struct FieldOrdering {
    std::vector<std::size_t> permutation;  // 0-based field indices
    long long cost = 0;
};

struct GAConfig {
    std::size_t population = 50;
    std::size_t generations = 100;
    double crossover_rate = 0.9;
    double mutation_rate = 0.2;
    std::size_t tournament = 3;
    std::uint64_t seed = 1;

    void validate() const;
};

RankMatrix rank_adjacency(const ingest::TabularDataset& dataset);

// Directed open-path cost: sum of ranks[p[k]][p[k+1]].
long long path_cost(const RankMatrix& ranks, std::span<const std::size_t> permutation);

struct GAResult {
    FieldOrdering best;
    std::vector<long long> trace;  // best cost per generation, non-increasing
};

// Permutation-encoded GA: tournament selection, order crossover, swap
// mutation, elitism of one. Deterministic for a fixed seed.
GAResult ga_optimize(const RankMatrix& ranks, const GAConfig& config);

// Exact minimum over all d! permutations; ties resolve to the
// lexicographically smallest permutation. Guarded to d <= 10.
FieldOrdering brute_force_order(const RankMatrix& ranks);

// Column permutation: new column k is old column permutation[k]. Labels and
// split tags are untouched.
ingest::TabularDataset reorder_fields(ingest::TabularDataset dataset,
                                      std::span<const std::size_t> permutation);

// Ordering files hold one comma-separated list of 1-based field indices.
void write_ordering(const std::string& path, std::span<const std::size_t> permutation);
std::vector<std::size_t> read_ordering(const std::string& path);

// Two-column text: generation index and best cost.
void write_trace(const std::string& path, std::span<const long long> trace);

}  // namespace tab2img::ordering
