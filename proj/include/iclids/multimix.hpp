#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iclids/dataset.hpp"

namespace iclids {

// Dense row-major matrix of packet features (rows = packets).
struct Matrix {
    int rows{0};
    int cols{0};
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct MixtureEntry {
    int label{0};
    std::vector<int> sources;   // distinct source-class indices, ascending
    std::vector<double> weights;  // per source, multiplicity / k; sums to 1
};

struct SyntheticClassSet {
    // (label, data) in label order; labels are consecutive starting at 1.
    std::vector<std::pair<int, Matrix>> classes;
    int K_ori{0};  // number of source classes
    int K_syn{0};  // total attack classes generated (== classes.size())
    std::vector<MixtureEntry> mixture_log;
};

// Element-wise mean of identically shaped matrices.
Matrix mix_classes(const std::vector<Matrix>& mixture);

// Enumerates combinations-with-replacement of the source classes at sizes
// k = 1, 2, 3, ... in ascending lexicographic index order, averaging each
// combination, until total_attack_classes classes exist. The k = 1 pass
// reproduces each source class verbatim, so the originals always lead the
// output. Sources are row-shuffled per seed and truncated to the smallest
// per-class row count before mixing.
SyntheticClassSet multi_mix(const std::vector<Matrix>& known_attacks, int total_attack_classes,
                            uint64_t seed);

// Extracts the per-attack-class matrices of a dataset (ascending class id,
// class 0 excluded) together with their ids.
std::vector<Matrix> attack_matrices(const Dataset& ds, std::vector<int>* class_ids = nullptr);

// Assembles the training dataset: normal rows as class 0 plus one class per
// synthetic attack, labeled 1..K_syn and named syn0001, syn0002, ...
Dataset assemble_training_set(const Matrix& normal_rows, const SyntheticClassSet& synth);

void save_mixture_log(const SyntheticClassSet& synth, const std::string& path);

}  // namespace iclids
