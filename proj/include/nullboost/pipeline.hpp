#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "nullboost/common.hpp"
#include "nullboost/matrix.hpp"
#include "nullboost/searchspace.hpp"

namespace nb::pipe {

using json = nlohmann::json;

/// Grayscale image, intensities in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, 0.0f) {}
    float& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    float at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

/// A stack of c feature maps of size h x w (c = 1 for the input image).
struct Stack {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Stack() = default;
    Stack(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0f) {}
    float& at(int ch, int y, int x) {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    float at(int ch, int y, int x) const {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    const float* map(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    float* map(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
};

enum class FilterMethod { Gaussian, PcaProjection, PatchProjection };
enum class PoolMode { L2, Mean, Max };

FilterMethod filter_method_from_name(const std::string& s);
std::string filter_method_name(FilterMethod m);
PoolMode pool_mode_from_name(const std::string& s);
std::string pool_mode_name(PoolMode m);

struct LayerSpec {
    int filter_count = 0;
    int filter_size = 0;  // odd
    FilterMethod method = FilterMethod::Gaussian;
    int pca_rank = 0;  // pca-projection only
    double epsilon = 1e-3;
    int pool_size = 1;
    int pool_stride = 1;
    PoolMode pool_mode = PoolMode::L2;
};

struct WarpSpec {
    bool enabled = false;
    double rot_range = 0.0;    // degrees; draw in [-rot_range, rot_range]
    double scale_range = 0.0;  // draw scale in [1 - range, 1 + range]
    double trans_range = 0.0;  // pixels; draw dx, dy in [-range, range]
};

struct ReadoutSpec {
    bool signed_hist = true;
    int grid = 1;
};

/// One concrete feature-extraction architecture: rescale, optional fixed
/// warp, 1-3 normalized-cross-correlation filterbank layers with pooling,
/// and a di-histogram readout.
struct PipelineConfig {
    int target_resolution = 0;
    WarpSpec warp;
    std::vector<LayerSpec> layers;  // 1 to 3
    ReadoutSpec readout;
    std::size_t feature_cap = 9000;

    /// Maps a sampled configuration of the shipped spaces (canonical
    /// parameter names) onto an architecture. The "C" parameter is the SVM's
    /// and is ignored here.
    static PipelineConfig from_configuration(const space::Configuration& cfg,
                                             std::size_t feature_cap = 9000);
    json to_json() const;
    static PipelineConfig from_json(const json& j);
};

/// Unit-L2-normalized filters of one layer; channels match the layer input.
struct FilterBank {
    int count = 0;
    int channels = 0;
    int size = 0;
    std::vector<double> w;  // [filter][channel][y][x]

    const double* filter(int f) const {
        return w.data() + static_cast<std::size_t>(f) * channels * size * size;
    }
    std::size_t filter_len() const {
        return static_cast<std::size_t>(channels) * size * size;
    }
};

// ---------------------------------------------------------------------------
// Kernels. Production versions use precomputed window statistics and are
// invoked per image; parallelism lives one level up, over examples, so
// results are bit-identical for any thread count.

/// Bilinear resampling to side x side.
Image rescale(const Image& img, int side);

/// Inverse-mapped bilinear warp about the image center; samples falling
/// outside the source are filled with the source mean.
Image affine_warp(const Image& img, double rot_deg, double scale, double dx, double dy);

/// Valid-mode normalized cross-correlation: each input window (across all
/// channels) is mean-subtracted and divided by sqrt(||window||^2 + epsilon)
/// before the dot product with each unit-norm filter. Output is signed.
Stack ncc_layer(const Stack& maps, const FilterBank& bank, double epsilon);

/// Strided window reduction per map: L2 (root mean square), mean, or max.
Stack pool(const Stack& maps, int pool_size, int pool_stride, PoolMode mode = PoolMode::L2);

/// Partition each map into grid x grid near-equal cells; per cell emit
/// sum|v| (unsigned) or the pair (sum max(0,v), sum max(0,-v)) (signed).
std::vector<float> dihist_readout(const Stack& maps, int grid, bool signed_hist);

/// Builds one layer's filters from sampled input patches (each patch a
/// channels*size*size vector). Gaussian needs no patches.
FilterBank build_filters(FilterMethod method, const std::vector<std::vector<float>>& patches,
                         int count, int channels, int size, Rng& rng, int pca_rank = 0);

// ---------------------------------------------------------------------------
// Symbolic geometry

struct GeometryInfo {
    std::vector<int> ncc_sides;   // per layer
    std::vector<int> pool_sides;  // per layer
    std::size_t feature_len = 0;
};

/// Pure shape arithmetic: computes per-stage output sides and the feature
/// length without touching pixels. Throws DegenerateConfig naming the stage
/// as soon as a side collapses below 1, the readout grid does not fit, or
/// the feature length exceeds the cap.
GeometryInfo check_geometry(const PipelineConfig& cfg, int input_side);

// ---------------------------------------------------------------------------

/// The full feature extractor f(x, lambda) for one configuration: built once
/// from fit-split images (filters are sampled from data as it appears at
/// each layer's input; warp parameters are drawn once and fixed), then
/// applied identically to any split.
class FeatureExtractor {
  public:
    FeatureExtractor() = default;  // empty shell; fill via build() or load()

    struct WarpDraw {
        bool enabled = false;
        double rot = 0.0, scale = 1.0, dx = 0.0, dy = 0.0;
    };

    static FeatureExtractor build(const PipelineConfig& cfg,
                                  const std::vector<Image>& fit_images, std::uint64_t seed);

    /// Examples x features; deterministic and embarrassingly parallel over
    /// examples (OpenMP).
    FeatureMatrix transform(const std::vector<Image>& images) const;

    std::size_t feature_count() const { return geometry_.feature_len; }
    const PipelineConfig& config() const { return cfg_; }
    const WarpDraw& warp() const { return warp_; }
    const std::vector<FilterBank>& banks() const { return banks_; }
    std::uint64_t seed() const { return seed_; }

    void save(const std::string& path) const;
    static FeatureExtractor load(const std::string& path);

    /// Number of images run through the pixel pipeline so far (transform and
    /// filter building). Used to assert that degenerate configurations are
    /// rejected before any pixel work.
    static std::uint64_t pixel_work_counter();

  private:
    std::vector<float> extract_row(const Image& img) const;
    Stack run_layers(const Image& img, std::size_t n_layers) const;

    PipelineConfig cfg_;
    GeometryInfo geometry_;
    WarpDraw warp_;
    std::vector<FilterBank> banks_;
    std::uint64_t seed_ = 0;
};

}  // namespace nb::pipe
