// Benchmark comparing the naive serial reference kernels against the
// production path (windowed statistics via prefix sums, OpenMP over
// examples) on a synthetic extraction workload.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nullboost/dataset.hpp"
#include "nullboost/pipeline.hpp"
#include "nullboost/pipeline_reference.hpp"

using Clock = std::chrono::steady_clock;

static double seconds(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

int main(int argc, char** argv) {
    int n_images = 128;
    int side = 48;
    if (argc > 1) n_images = std::atoi(argv[1]);
    if (argc > 2) side = std::atoi(argv[2]);

    nb::data::SynthSpec spec;
    spec.generator = "oriented-textures";
    spec.n = n_images;
    spec.side = side;
    spec.classes = 4;
    spec.seed = 7;
    const nb::data::Dataset ds = nb::data::make_synthetic(spec);

    nb::pipe::PipelineConfig cfg;
    cfg.target_resolution = side;
    nb::pipe::LayerSpec l1;
    l1.filter_count = 32;
    l1.filter_size = 9;
    l1.method = nb::pipe::FilterMethod::Gaussian;
    l1.epsilon = 1e-3;
    l1.pool_size = 2;
    l1.pool_stride = 2;
    cfg.layers.push_back(l1);
    nb::pipe::LayerSpec l2;
    l2.filter_count = 16;
    l2.filter_size = 3;
    l2.method = nb::pipe::FilterMethod::Gaussian;
    l2.epsilon = 1e-3;
    l2.pool_size = 2;
    l2.pool_stride = 2;
    cfg.layers.push_back(l2);
    cfg.readout.grid = 2;
    cfg.readout.signed_hist = true;

    const auto fe = nb::pipe::FeatureExtractor::build(cfg, ds.images, 42);
    std::printf("workload: %d images %dx%d, 2 NCC layers, %zu features/image\n", n_images, side,
                side, fe.feature_count());

    // Warm-up and correctness cross-check.
    const auto t0 = Clock::now();
    const nb::FeatureMatrix ref = nb::pipe::reference::transform(fe, ds.images);
    const auto t1 = Clock::now();
    const nb::FeatureMatrix prod = fe.transform(ds.images);
    const auto t2 = Clock::now();

    double max_diff = 0.0;
    for (std::size_t i = 0; i < ref.data.size(); ++i)
        max_diff = std::max(max_diff,
                            static_cast<double>(std::abs(ref.data[i] - prod.data[i])));

    const double t_ref = seconds(t0, t1);
    const double t_prod = seconds(t1, t2);
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::printf("%-28s %10.3fs\n", "reference (serial, naive)", t_ref);
    std::printf("%-28s %10.3fs  (%d threads)\n", "production (OpenMP)", t_prod, threads);
    std::printf("%-28s %10.2fx\n", "speedup", t_ref / t_prod);
    std::printf("%-28s %10.2e\n", "max elementwise difference", max_diff);
    return max_diff < 1e-4 ? 0 : 1;
}
