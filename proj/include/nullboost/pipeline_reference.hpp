#pragma once

#include "nullboost/pipeline.hpp"

namespace nb::pipe::reference {

/// Naive per-window implementations of the layer kernels, recomputing every
/// window statistic directly from the definition. Kept as the oracle the
/// production kernels are tested against, and as the serial baseline of the
/// kernel benchmark.
Stack ncc_layer(const Stack& maps, const FilterBank& bank, double epsilon);
Stack pool(const Stack& maps, int pool_size, int pool_stride, PoolMode mode = PoolMode::L2);
std::vector<float> dihist_readout(const Stack& maps, int grid, bool signed_hist);

/// Full extraction through the reference kernels, one image at a time on the
/// calling thread.
FeatureMatrix transform(const FeatureExtractor& fe, const std::vector<Image>& images);

}  // namespace nb::pipe::reference
