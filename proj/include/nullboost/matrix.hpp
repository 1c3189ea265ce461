#pragma once

#include <cstddef>
#include <vector>

namespace nb {

/// Dense examples x features block produced by one pipeline configuration.
/// Row-major, float: feature values are bounded pooled correlations, so
/// single precision is plenty and halves the memory of large blocks.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
    float* row(std::size_t r) { return data.data() + r * cols; }
};

/// Per-example, per-class real values. Used both for decision margins and
/// for the frozen carry-forward margins of previously accepted rounds.
struct Margins {
    std::size_t rows = 0;
    std::size_t classes = 0;
    std::vector<double> data;

    Margins() = default;
    Margins(std::size_t r, std::size_t k) : rows(r), classes(k), data(r * k, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * classes + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * classes + c]; }
    bool empty() const { return data.empty(); }
};

}  // namespace nb
