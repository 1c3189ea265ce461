#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "nullboost/common.hpp"
#include "nullboost/pipeline.hpp"

namespace nb::data {

using json = nlohmann::json;

/// Grayscale images with integer class labels and a named fit / validation /
/// test partition. Selection code receives only the fit and valid gathers;
/// every access to the test partition bumps `test_access_count` so runs can
/// assert the test split stayed untouched until prediction export.
struct Dataset {
    std::vector<pipe::Image> images;
    std::vector<int> labels;  // empty for unlabeled (test-only) sets
    int class_count = 0;
    std::vector<int> fit_idx, valid_idx, test_idx;

    mutable std::uint64_t test_access_count = 0;

    std::size_t size() const { return images.size(); }
    bool labeled() const { return !labels.empty(); }

    const std::vector<int>& test_indices() const {
        ++test_access_count;
        return test_idx;
    }

    std::vector<pipe::Image> gather_images(const std::vector<int>& idx) const;
    std::vector<int> gather_labels(const std::vector<int>& idx) const;

    /// Stable content hash (pixels + labels), used to key the feature cache.
    std::uint64_t fingerprint() const;
};

/// Parses the competition-style CSV: header `emotion,pixels` (or just
/// `pixels` for unlabeled files), one row per image, pixels as
/// space-separated integers 0-255 scanned row-major. Values are divided by
/// 255. `expected_side` 0 infers the side from the first row (must be a
/// perfect square) and enforces it on the rest.
Dataset load_expression_csv(const std::string& path, int expected_side = 0);

/// Writes a dataset back out in the same CSV layout.
void save_expression_csv(const Dataset& ds, const std::string& path);

/// Seeded shuffle then contiguous assignment: the first n_fit indices go to
/// the fit split, the next n_valid to validation, the next n_test to test
/// (0 by default), and the remainder stays unassigned. Throws
/// ConfigError("insufficient-examples...") when the sizes do not fit.
void split(Dataset& ds, int n_fit, int n_valid, std::uint64_t seed, int n_test = 0);

struct SynthSpec {
    std::string generator;  // "blobs", "oriented-textures", "two-view"
    int n = 0;
    int side = 0;
    int classes = 0;
    std::uint64_t seed = 0;

    static SynthSpec from_json(const json& j);
    json to_json() const;
};

/// Deterministic labeled image sets for desk-scale experiments.
///
/// - blobs: one bright Gaussian bump per class at a class-specific position.
/// - oriented-textures: sinusoidal gratings, one orientation per class.
/// - two-view (4 classes): every image carries two independent binary
///   attributes, the sign of a centered bump (readable only through
///   sign-preserving pooling plus a signed readout) and the orientation of
///   period-2 stripes (readable only through energy pooling); no single
///   feature family separates all four classes.
Dataset make_synthetic(const SynthSpec& spec);

}  // namespace nb::data
