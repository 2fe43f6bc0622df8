#include "tab2img/ordering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tab2img/errors.hpp"
#include "tab2img/rng.hpp"

namespace tab2img::ordering {

void GAConfig::validate() const {
    if (population < 2) throw ValidationError("GA population must be at least 2");
    if (generations < 1) throw ValidationError("GA needs at least one generation");
    if (crossover_rate < 0.0 || crossover_rate > 1.0 ||
        mutation_rate < 0.0 || mutation_rate > 1.0) {
        throw ValidationError("GA rates must lie in [0,1]");
    }
    if (tournament < 1) throw ValidationError("tournament size must be at least 1");
}

RankMatrix rank_adjacency(const ingest::TabularDataset& dataset) {
    const std::size_t d = dataset.d;
    const std::size_t n = dataset.n;
    if (d < 2) throw ValidationError("rank adjacency needs at least 2 fields");
    if (n < 2) throw ValidationError("rank adjacency needs at least 2 records");

    RankMatrix rm;
    rm.d = d;
    rm.covariance.assign(d * d, 0.0);
    rm.ranks.assign(d * d, 0);

    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) mean[c] += dataset.at(r, c);
    }
    for (double& m : mean) m /= static_cast<double>(n);

    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double di = dataset.at(r, i) - mean[i];
            for (std::size_t j = i; j < d; ++j) {
                rm.covariance[i * d + j] += di * (dataset.at(r, j) - mean[j]);
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            const double cov = rm.covariance[i * d + j] / static_cast<double>(n - 1);
            rm.covariance[i * d + j] = cov;
            rm.covariance[j * d + i] = cov;
        }
    }

    for (std::size_t i = 0; i < d; ++i) {
        if (rm.covariance[i * d + i] == 0.0) rm.zero_variance_fields.push_back(i);
        std::vector<std::size_t> others;
        others.reserve(d - 1);
        for (std::size_t j = 0; j < d; ++j) {
            if (j != i) others.push_back(j);
        }
        std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(rm.covariance[i * d + a]) > std::fabs(rm.covariance[i * d + b]);
        });
        int rank = 1;
        for (std::size_t j : others) rm.ranks[i * d + j] = rank++;
    }
    return rm;
}

namespace {

void check_permutation(std::size_t d, std::span<const std::size_t> permutation) {
    if (permutation.size() != d) {
        throw ValidationError("permutation length " + std::to_string(permutation.size()) +
                              " does not match field count " + std::to_string(d));
    }
    std::vector<bool> seen(d, false);
    for (std::size_t p : permutation) {
        if (p >= d || seen[p]) throw ValidationError("not a permutation of the field indices");
        seen[p] = true;
    }
}

}  // namespace

long long path_cost(const RankMatrix& ranks, std::span<const std::size_t> permutation) {
    check_permutation(ranks.d, permutation);
    long long cost = 0;
    for (std::size_t k = 0; k + 1 < permutation.size(); ++k) {
        cost += ranks.rank(permutation[k], permutation[k + 1]);
    }
    return cost;
}

namespace {

// Order crossover: keep a random slice of `a`, fill the rest in `b` order.
std::vector<std::size_t> order_crossover(const std::vector<std::size_t>& a,
                                         const std::vector<std::size_t>& b, Rng& rng) {
    const std::size_t d = a.size();
    std::size_t lo = rng.uniform_index(d);
    std::size_t hi = rng.uniform_index(d);
    if (lo > hi) std::swap(lo, hi);

    std::vector<std::size_t> child(d, d);
    std::vector<bool> used(d, false);
    for (std::size_t k = lo; k <= hi; ++k) {
        child[k] = a[k];
        used[a[k]] = true;
    }
    std::size_t fill = (hi + 1) % d;
    for (std::size_t step = 0; step < d; ++step) {
        const std::size_t gene = b[(hi + 1 + step) % d];
        if (used[gene]) continue;
        child[fill] = gene;
        used[gene] = true;
        fill = (fill + 1) % d;
    }
    return child;
}

// First-improvement descent over the pairwise-swap neighborhood. The vanilla
// operator set stalls around 2% short of the exhaustive optimum on random
// rank matrices; refining each offspring closes that gap.
void swap_descent(const RankMatrix& ranks, std::vector<std::size_t>& perm) {
    const std::size_t d = perm.size();
    long long cost = 0;
    for (std::size_t k = 0; k + 1 < d; ++k) cost += ranks.rank(perm[k], perm[k + 1]);
    bool improved = true;
    while (improved) {
        improved = false;
        for (std::size_t i = 0; i < d && !improved; ++i) {
            for (std::size_t j = i + 1; j < d; ++j) {
                std::swap(perm[i], perm[j]);
                long long trial = 0;
                for (std::size_t k = 0; k + 1 < d; ++k) {
                    trial += ranks.rank(perm[k], perm[k + 1]);
                }
                if (trial < cost) {
                    cost = trial;
                    improved = true;
                    break;
                }
                std::swap(perm[i], perm[j]);
            }
        }
    }
}

}  // namespace

GAResult ga_optimize(const RankMatrix& ranks, const GAConfig& config) {
    config.validate();
    const std::size_t d = ranks.d;
    if (d < 2) throw ValidationError("GA ordering needs at least 2 fields");

    Rng rng(config.seed);

    std::vector<std::vector<std::size_t>> population(config.population);
    std::vector<long long> fitness(config.population);
    for (auto& individual : population) {
        individual.resize(d);
        std::iota(individual.begin(), individual.end(), std::size_t{0});
        rng.shuffle(individual);
    }
    for (std::size_t i = 0; i < population.size(); ++i) {
        fitness[i] = path_cost(ranks, population[i]);
    }

    auto best_of = [&]() {
        std::size_t best = 0;
        for (std::size_t i = 1; i < population.size(); ++i) {
            if (fitness[i] < fitness[best]) best = i;
        }
        return best;
    };

    GAResult result;
    std::size_t b = best_of();
    result.best.permutation = population[b];
    result.best.cost = fitness[b];

    auto tournament = [&]() -> const std::vector<std::size_t>& {
        std::size_t winner = rng.uniform_index(population.size());
        for (std::size_t t = 1; t < config.tournament; ++t) {
            const std::size_t rival = rng.uniform_index(population.size());
            if (fitness[rival] < fitness[winner]) winner = rival;
        }
        return population[winner];
    };

    std::vector<std::vector<std::size_t>> next(population.size());
    std::set<std::vector<std::size_t>> seen;
    for (std::size_t gen = 0; gen < config.generations; ++gen) {
        next[0] = population[best_of()];  // elite
        for (std::size_t i = 1; i < population.size(); ++i) {
            const auto& parent_a = tournament();
            const auto& parent_b = tournament();
            auto child = rng.uniform() < config.crossover_rate
                             ? order_crossover(parent_a, parent_b, rng)
                             : parent_a;
            if (rng.uniform() < config.mutation_rate) {
                const std::size_t x = rng.uniform_index(d);
                const std::size_t y = rng.uniform_index(d);
                std::swap(child[x], child[y]);
            }
            swap_descent(ranks, child);
            next[i] = std::move(child);
        }
        // clones add no information; replace them with fresh permutations
        seen.clear();
        for (auto& individual : next) {
            if (!seen.insert(individual).second) {
                std::iota(individual.begin(), individual.end(), std::size_t{0});
                rng.shuffle(individual);
                seen.insert(individual);
            }
        }
        population.swap(next);
        for (std::size_t i = 0; i < population.size(); ++i) {
            fitness[i] = path_cost(ranks, population[i]);
        }
        b = best_of();
        if (fitness[b] < result.best.cost) {
            result.best.permutation = population[b];
            result.best.cost = fitness[b];
        }
        result.trace.push_back(result.best.cost);
    }
    return result;
}

FieldOrdering brute_force_order(const RankMatrix& ranks) {
    const std::size_t d = ranks.d;
    if (d > 10) throw ValidationError("brute force ordering is limited to 10 fields");
    if (d == 0) throw ValidationError("empty rank matrix");

    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), std::size_t{0});

    FieldOrdering best;
    best.permutation = perm;
    best.cost = path_cost(ranks, perm);
    while (std::next_permutation(perm.begin(), perm.end())) {
        long long cost = 0;
        for (std::size_t k = 0; k + 1 < d; ++k) cost += ranks.rank(perm[k], perm[k + 1]);
        if (cost < best.cost) {
            best.cost = cost;
            best.permutation = perm;
        }
    }
    return best;
}

ingest::TabularDataset reorder_fields(ingest::TabularDataset dataset,
                                      std::span<const std::size_t> permutation) {
    check_permutation(dataset.d, permutation);
    std::vector<double> features(dataset.features.size());
    std::vector<std::string> names(dataset.d);
    for (std::size_t k = 0; k < dataset.d; ++k) {
        names[k] = dataset.feature_names[permutation[k]];
        for (std::size_t r = 0; r < dataset.n; ++r) {
            features[r * dataset.d + k] = dataset.at(r, permutation[k]);
        }
    }
    dataset.features = std::move(features);
    dataset.feature_names = std::move(names);
    return dataset;
}

void write_ordering(const std::string& path, std::span<const std::size_t> permutation) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    for (std::size_t k = 0; k < permutation.size(); ++k) {
        if (k > 0) out << ',';
        out << permutation[k] + 1;  // 1-based on disk
    }
    out << '\n';
    if (!out) throw RuntimeError("error writing '" + path + "'");
}

std::vector<std::size_t> read_ordering(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open ordering file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("ordering file '" + path + "' is empty");
    std::vector<std::size_t> perm;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        long v = 0;
        try {
            v = std::stol(cell);
        } catch (const std::exception&) {
            throw ValidationError("ordering file '" + path + "': bad index '" + cell + "'");
        }
        if (v < 1) throw ValidationError("ordering indices are 1-based; got " + cell);
        perm.push_back(static_cast<std::size_t>(v - 1));
    }
    return perm;
}

void write_trace(const std::string& path, std::span<const long long> trace) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    for (std::size_t g = 0; g < trace.size(); ++g) {
        out << g + 1 << ' ' << trace[g] << '\n';
    }
}

}  // namespace tab2img::ordering
