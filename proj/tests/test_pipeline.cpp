#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "nullboost/pipeline.hpp"
#include "nullboost/pipeline_reference.hpp"
#include "nullboost/searchspace.hpp"
#include "test_util.hpp"

using namespace nb;
using namespace nb::pipe;

namespace {

Image random_image(Rng& rng, int side) {
    Image img(side, side);
    for (auto& v : img.px) v = static_cast<float>(rng.uniform());
    return img;
}

std::vector<Image> random_images(Rng& rng, int n, int side) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) out.push_back(random_image(rng, side));
    return out;
}

Stack random_stack(Rng& rng, int c, int h, int w) {
    Stack s(c, h, w);
    for (auto& v : s.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return s;
}

FilterBank gaussian_bank(Rng& rng, int count, int channels, int size) {
    return build_filters(FilterMethod::Gaussian, {}, count, channels, size, rng);
}

/// Rank via Gaussian elimination with partial pivoting (independent of the
/// library's linear algebra).
int matrix_rank(std::vector<std::vector<double>> m, double tol = 1e-8) {
    const std::size_t rows = m.size();
    if (rows == 0) return 0;
    const std::size_t cols = m[0].size();
    int rank = 0;
    std::size_t row = 0;
    for (std::size_t col = 0; col < cols && row < rows; ++col) {
        std::size_t pivot = row;
        for (std::size_t r = row + 1; r < rows; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        if (std::abs(m[pivot][col]) < tol) continue;
        std::swap(m[row], m[pivot]);
        for (std::size_t r = 0; r < rows; ++r) {
            if (r == row) continue;
            const double f = m[r][col] / m[row][col];
            for (std::size_t c2 = col; c2 < cols; ++c2) m[r][c2] -= f * m[row][c2];
        }
        ++row;
        ++rank;
    }
    return rank;
}

double max_abs_diff(const Stack& a, const Stack& b) {
    REQUIRE(a.v.size() == b.v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        d = std::max(d, static_cast<double>(std::abs(a.v[i] - b.v[i])));
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// rescale / warp

TEST_CASE("rescale: identity, constants, shape") {
    Rng rng(1);
    const Image img = random_image(rng, 48);
    const Image same = rescale(img, 48);
    CHECK(same.px == img.px);  // half-pixel mapping is exact at identity

    Image flat(7, 7);
    for (auto& v : flat.px) v = 0.42f;
    const Image up = rescale(flat, 13);
    for (float v : up.px) CHECK(v == doctest::Approx(0.42f));

    const Image down = rescale(img, 24);
    CHECK(down.h == 24);
    CHECK(down.w == 24);
    CHECK(down.px.size() == 576);
}

TEST_CASE("affine_warp: identity transform is exact") {
    Rng rng(2);
    const Image img = random_image(rng, 16);
    const Image out = affine_warp(img, 0.0, 1.0, 0.0, 0.0);
    CHECK(out.px == img.px);
}

TEST_CASE("affine_warp: full rotation returns to the input") {
    Rng rng(3);
    const Image img = random_image(rng, 16);
    const Image out = affine_warp(img, 360.0, 1.0, 0.0, 0.0);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        CHECK(std::abs(out.px[i] - img.px[i]) < 1e-6);
}

TEST_CASE("affine_warp: translate there and back restores the interior") {
    Rng rng(4);
    const Image img = random_image(rng, 16);
    const Image shifted = affine_warp(img, 0.0, 1.0, 1.0, 0.0);
    const Image restored = affine_warp(shifted, 0.0, 1.0, -1.0, 0.0);
    for (int y = 2; y < 14; ++y)
        for (int x = 2; x < 14; ++x)
            CHECK(std::abs(restored.at(y, x) - img.at(y, x)) < 1e-6);
}

TEST_CASE("affine_warp: out-of-bounds samples take the image mean") {
    Image img(8, 8);
    for (auto& v : img.px) v = 1.0f;
    img.at(0, 0) = 0.0f;  // mean slightly below 1
    double mean = 0.0;
    for (float v : img.px) mean += v;
    mean /= 64.0;
    const Image out = affine_warp(img, 0.0, 1.0, 6.0, 0.0);  // shift right by 6
    CHECK(out.at(4, 0) == doctest::Approx(mean));
}

// ---------------------------------------------------------------------------
// build_filters

TEST_CASE("build_filters: every filter is unit-norm") {
    Rng rng(5);
    for (FilterMethod m :
         {FilterMethod::Gaussian, FilterMethod::PatchProjection, FilterMethod::PcaProjection}) {
        std::vector<std::vector<float>> patches;
        for (int i = 0; i < 120; ++i) {
            std::vector<float> p(9);
            for (auto& v : p) v = static_cast<float>(rng.uniform());
            patches.push_back(std::move(p));
        }
        const FilterBank bank = build_filters(m, patches, 12, 1, 3, rng, 4);
        for (int f = 0; f < bank.count; ++f) {
            double n2 = 0.0;
            for (std::size_t i = 0; i < bank.filter_len(); ++i)
                n2 += static_cast<double>(bank.filter(f)[i]) * bank.filter(f)[i];
            CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("build_filters: full-rank pca on white noise spans the space") {
    Rng rng(6);
    const int dim = 9;
    std::vector<std::vector<float>> patches;
    for (int i = 0; i < 200; ++i) {
        std::vector<float> p(dim);
        for (auto& v : p) v = static_cast<float>(rng.normal());
        patches.push_back(std::move(p));
    }
    const int count = 14;
    const FilterBank bank =
        build_filters(FilterMethod::PcaProjection, patches, count, 1, 3, rng, dim);
    std::vector<std::vector<double>> rows;
    for (int f = 0; f < count; ++f)
        rows.emplace_back(bank.filter(f), bank.filter(f) + dim);
    CHECK(matrix_rank(rows) == std::min(count, dim));
}

TEST_CASE("build_filters: pca filters lie in the top-k principal subspace") {
    // Patches constructed exactly inside a known 3-dimensional subspace
    // (plus a mean offset), so the top-3 components span that subspace and
    // the filters must too.
    Rng rng(7);
    const int dim = 16;
    std::vector<std::vector<double>> basis(3, std::vector<double>(dim));
    for (auto& b : basis)
        for (auto& v : b) v = rng.normal();
    // Orthonormalize the known basis (Gram-Schmidt) for the projection test.
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < i; ++j) {
            double dot = 0.0;
            for (int k = 0; k < dim; ++k) dot += basis[i][k] * basis[j][k];
            for (int k = 0; k < dim; ++k) basis[i][k] -= dot * basis[j][k];
        }
        double n2 = 0.0;
        for (double v : basis[i]) n2 += v * v;
        for (auto& v : basis[i]) v /= std::sqrt(n2);
    }
    std::vector<std::vector<float>> patches;
    for (int i = 0; i < 150; ++i) {
        std::vector<float> p(dim, 0.25f);  // common mean component
        const double g0 = 3.0 * rng.normal(), g1 = 2.0 * rng.normal(), g2 = 1.0 * rng.normal();
        for (int k = 0; k < dim; ++k)
            p[k] += static_cast<float>(g0 * basis[0][k] + g1 * basis[1][k] + g2 * basis[2][k]);
        patches.push_back(std::move(p));
    }
    const FilterBank bank =
        build_filters(FilterMethod::PcaProjection, patches, 10, 1, 4, rng, 3);
    for (int f = 0; f < bank.count; ++f) {
        std::vector<double> residual(bank.filter(f), bank.filter(f) + dim);
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < dim; ++k) dot += residual[k] * basis[j][k];
            for (int k = 0; k < dim; ++k) residual[k] -= dot * basis[j][k];
        }
        double r2 = 0.0;
        for (double v : residual) r2 += v * v;
        CHECK(std::sqrt(r2) < 1e-8);
    }
}

TEST_CASE("build_filters: insufficient patches is an error") {
    Rng rng(8);
    std::vector<std::vector<float>> few(10, std::vector<float>(9, 0.5f));
    CHECK_THROWS_WITH_AS(build_filters(FilterMethod::PatchProjection, few, 4, 1, 3, rng),
                         doctest::Contains("insufficient-patches"), ConfigError);
}

// ---------------------------------------------------------------------------
// ncc / pool / dihist kernels

TEST_CASE("ncc_layer: window matching its filter responds with 1") {
    Rng rng(9);
    const Image img = random_image(rng, 12);
    const int k = 5;
    const int y0 = 3, x0 = 4;
    // Filter = the mean-subtracted, unit-normalized window at (y0, x0).
    std::vector<double> win;
    double mean = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            win.push_back(img.at(y0 + y, x0 + x));
            mean += win.back();
        }
    mean /= win.size();
    double n2 = 0.0;
    for (auto& v : win) {
        v -= mean;
        n2 += v * v;
    }
    FilterBank bank;
    bank.count = 1;
    bank.channels = 1;
    bank.size = k;
    for (double v : win) bank.w.push_back(static_cast<float>(v / std::sqrt(n2)));

    Stack maps(1, 12, 12);
    std::copy(img.px.begin(), img.px.end(), maps.v.begin());
    const Stack out = ncc_layer(maps, bank, 1e-10);
    CHECK(out.at(0, y0, x0) == doctest::Approx(1.0).epsilon(1e-5));
    // Cauchy-Schwarz: no response exceeds 1 anywhere.
    for (float v : out.v) CHECK(std::abs(v) <= 1.0f + 1e-5f);
}

TEST_CASE("ncc_layer: constant window responds 0") {
    Rng rng(10);
    Stack maps(1, 10, 10);
    for (auto& v : maps.v) v = 0.6f;
    const FilterBank bank = gaussian_bank(rng, 3, 1, 3);
    const Stack out = ncc_layer(maps, bank, 1e-6);
    for (float v : out.v) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("ncc_layer: valid-mode shape and degenerate geometry") {
    Rng rng(11);
    Stack maps(1, 48, 48);
    for (auto& v : maps.v) v = static_cast<float>(rng.uniform());
    const FilterBank bank = gaussian_bank(rng, 2, 1, 9);
    const Stack out = ncc_layer(maps, bank, 1e-3);
    CHECK(out.h == 40);
    CHECK(out.w == 40);

    Stack tiny(1, 4, 4);
    const FilterBank big = gaussian_bank(rng, 2, 1, 9);
    CHECK_THROWS_AS(ncc_layer(tiny, big, 1e-3), DegenerateConfig);
}

TEST_CASE("ncc_layer: production matches the naive reference") {
    Rng rng(12);
    for (int rep = 0; rep < 5; ++rep) {
        const int c = 1 + static_cast<int>(rng.uniform_int(3));
        const int side = 8 + static_cast<int>(rng.uniform_int(9));
        const int k = 3 + 2 * static_cast<int>(rng.uniform_int(2));
        const Stack maps = random_stack(rng, c, side, side);
        const FilterBank bank = gaussian_bank(rng, 4, c, k);
        const double eps = std::exp(rng.uniform(-8.0, 0.0));
        const Stack a = ncc_layer(maps, bank, eps);
        const Stack b = reference::ncc_layer(maps, bank, eps);
        CHECK(max_abs_diff(a, b) < 1e-8);
    }
}

TEST_CASE("pool: single-element L2 pooling is absolute value") {
    Rng rng(13);
    const Stack maps = random_stack(rng, 2, 6, 6);
    const Stack out = pool(maps, 1, 1, PoolMode::L2);
    for (std::size_t i = 0; i < maps.v.size(); ++i)
        CHECK(out.v[i] == doctest::Approx(std::abs(maps.v[i])));
}

TEST_CASE("pool: constants, shapes, modes") {
    Stack maps(1, 40, 40);
    for (auto& v : maps.v) v = -0.7f;
    const Stack l2 = pool(maps, 2, 2, PoolMode::L2);
    CHECK(l2.h == 20);
    CHECK(l2.w == 20);
    for (float v : l2.v) CHECK(v == doctest::Approx(0.7));
    const Stack mean = pool(maps, 2, 2, PoolMode::Mean);
    for (float v : mean.v) CHECK(v == doctest::Approx(-0.7));
    const Stack mx = pool(maps, 2, 2, PoolMode::Max);
    for (float v : mx.v) CHECK(v == doctest::Approx(-0.7));

    Stack small(1, 3, 3);
    CHECK_THROWS_AS(pool(small, 4, 4, PoolMode::L2), DegenerateConfig);
}

TEST_CASE("pool: production matches the naive reference") {
    Rng rng(14);
    for (PoolMode mode : {PoolMode::L2, PoolMode::Mean, PoolMode::Max}) {
        const Stack maps = random_stack(rng, 3, 11, 11);
        const Stack a = pool(maps, 3, 2, mode);
        const Stack b = reference::pool(maps, 3, 2, mode);
        CHECK(max_abs_diff(a, b) < 1e-8);
    }
}

TEST_CASE("dihist_readout: signed halves, lengths, negation symmetry") {
    Rng rng(15);
    Stack positive = random_stack(rng, 4, 8, 8);
    for (auto& v : positive.v) v = std::abs(v);
    const auto s = dihist_readout(positive, 2, true);
    const auto u = dihist_readout(positive, 2, false);
    REQUIRE(s.size() == 32);  // F=4, g=2, signed
    REQUIRE(u.size() == 16);
    for (std::size_t i = 0; i < u.size(); ++i) {
        CHECK(s[2 * i] == doctest::Approx(u[i]));  // positive half = unsigned
        CHECK(s[2 * i + 1] == 0.0f);               // negative half empty
    }

    Stack mixed = random_stack(rng, 2, 9, 9);
    Stack negated = mixed;
    for (auto& v : negated.v) v = -v;
    const auto a = dihist_readout(mixed, 3, true);
    const auto b = dihist_readout(negated, 3, true);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); i += 2) {
        CHECK(a[i] == b[i + 1]);  // halves swap exactly
        CHECK(a[i + 1] == b[i]);
    }

    CHECK_THROWS_AS(dihist_readout(mixed, 10, true), DegenerateConfig);
}

TEST_CASE("dihist_readout matches the reference on uneven grids") {
    Rng rng(16);
    const Stack maps = random_stack(rng, 2, 10, 10);
    for (int g : {1, 2, 3}) {
        for (bool sh : {true, false}) {
            const auto a = dihist_readout(maps, g, sh);
            const auto b = reference::dihist_readout(maps, g, sh);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK(std::abs(a[i] - b[i]) < 1e-8f);
        }
    }
}

TEST_CASE("translation by the pool stride permutes pooled cells") {
    const int side = 20, k = 3, stride = 2;
    Image a(side, side);
    a.at(8, 9) = 1.0f;
    Image b(side, side);
    b.at(8 + stride, 9) = 1.0f;

    Rng rng(17);
    const FilterBank bank = gaussian_bank(rng, 2, 1, k);
    auto run = [&](const Image& img) {
        Stack s(1, side, side);
        std::copy(img.px.begin(), img.px.end(), s.v.begin());
        return pool(ncc_layer(s, bank, 1e-4), stride, stride, PoolMode::L2);
    };
    const Stack pa = run(a);
    const Stack pb = run(b);
    for (int c = 0; c < pa.c; ++c)
        for (int y = 0; y + 1 < pa.h; ++y)
            for (int x = 0; x < pa.w; ++x)
                CHECK(pb.at(c, y + 1, x) == doctest::Approx(pa.at(c, y, x)).epsilon(1e-6));
}

// ---------------------------------------------------------------------------
// Geometry and the full extractor

static PipelineConfig simple_config() {
    PipelineConfig cfg;
    cfg.target_resolution = 48;
    LayerSpec l1;
    l1.filter_count = 10;
    l1.filter_size = 9;
    l1.method = FilterMethod::Gaussian;
    l1.epsilon = 1e-3;
    l1.pool_size = 2;
    l1.pool_stride = 2;
    cfg.layers.push_back(l1);
    cfg.readout.grid = 2;
    cfg.readout.signed_hist = true;
    return cfg;
}

TEST_CASE("check_geometry: composition arithmetic and degenerate detection") {
    const PipelineConfig cfg = simple_config();
    const GeometryInfo info = check_geometry(cfg, 48);
    CHECK(info.ncc_sides == std::vector<int>{40});
    CHECK(info.pool_sides == std::vector<int>{20});
    CHECK(info.feature_len == 80);  // 10 * 2*2 * 2

    PipelineConfig collapse = simple_config();
    collapse.target_resolution = 8;
    collapse.layers[0].pool_size = 1;
    collapse.layers[0].pool_stride = 1;
    collapse.layers[0].filter_size = 9;  // 8 - 9 + 1 < 1
    CHECK_THROWS_AS(check_geometry(collapse, 48), DegenerateConfig);

    PipelineConfig capped = simple_config();
    capped.readout.grid = 6;
    capped.layers[0].filter_count = 128;  // 128 * 36 * 2 = 9216 > 9000
    CHECK_THROWS_WITH_AS(check_geometry(capped, 48), doctest::Contains("cap exceeded"),
                         DegenerateConfig);
}

TEST_CASE("extractor: feature length and determinism are bit-exact") {
    Rng rng(18);
    const std::vector<Image> fit = random_images(rng, 6, 48);
    const std::vector<Image> eval = random_images(rng, 4, 48);
    const PipelineConfig cfg = simple_config();

    const FeatureExtractor fe1 = FeatureExtractor::build(cfg, fit, 777);
    const FeatureExtractor fe2 = FeatureExtractor::build(cfg, fit, 777);
    const FeatureMatrix a = fe1.transform(eval);
    const FeatureMatrix b = fe2.transform(eval);
    CHECK(a.cols == 80);
    CHECK(a.data == b.data);  // bit-identical

    const FeatureExtractor fe3 = FeatureExtractor::build(cfg, fit, 778);
    const FeatureMatrix c = fe3.transform(eval);
    CHECK(a.data != c.data);  // a different seed draws different filters
}

TEST_CASE("extractor: warp draw is fixed per configuration") {
    Rng rng(19);
    const std::vector<Image> fit = random_images(rng, 5, 16);
    PipelineConfig cfg = simple_config();
    cfg.target_resolution = 16;
    cfg.layers[0].filter_size = 3;
    cfg.warp.enabled = true;
    cfg.warp.rot_range = 10.0;
    cfg.warp.scale_range = 0.1;
    cfg.warp.trans_range = 2.0;
    const FeatureExtractor fe = FeatureExtractor::build(cfg, fit, 5);
    CHECK(fe.warp().enabled);
    CHECK(std::abs(fe.warp().rot) <= 10.0);
    const FeatureMatrix a = fe.transform(fit);
    const FeatureMatrix b = fe.transform(fit);
    CHECK(a.data == b.data);
}

TEST_CASE("extractor: production transform matches the serial reference") {
    Rng rng(20);
    const std::vector<Image> fit = random_images(rng, 8, 16);
    const std::vector<Image> eval = random_images(rng, 6, 16);
    PipelineConfig cfg;
    cfg.target_resolution = 16;
    LayerSpec l1;
    l1.filter_count = 8;
    l1.filter_size = 3;
    l1.method = FilterMethod::PatchProjection;
    l1.epsilon = 1e-2;
    l1.pool_size = 2;
    l1.pool_stride = 2;
    cfg.layers.push_back(l1);
    LayerSpec l2 = l1;
    l2.filter_count = 6;
    l2.method = FilterMethod::PcaProjection;
    l2.pca_rank = 5;
    l2.pool_size = 1;
    l2.pool_stride = 1;
    cfg.layers.push_back(l2);
    cfg.readout.grid = 2;
    cfg.readout.signed_hist = false;

    const FeatureExtractor fe = FeatureExtractor::build(cfg, fit, 99);
    const FeatureMatrix prod = fe.transform(eval);
    const FeatureMatrix ref = reference::transform(fe, eval);
    REQUIRE(prod.data.size() == ref.data.size());
    for (std::size_t i = 0; i < prod.data.size(); ++i)
        CHECK(std::abs(prod.data[i] - ref.data[i]) < 1e-5f);
}

TEST_CASE("extractor: save/load round trip preserves the transform") {
    Rng rng(21);
    const std::vector<Image> fit = random_images(rng, 6, 16);
    PipelineConfig cfg = simple_config();
    cfg.target_resolution = 16;
    cfg.layers[0].filter_size = 5;
    cfg.warp.enabled = true;
    cfg.warp.rot_range = 5.0;
    const FeatureExtractor fe = FeatureExtractor::build(cfg, fit, 1234);
    const std::string path =
        (std::filesystem::temp_directory_path() / "nb_extractor.bin").string();
    fe.save(path);
    const FeatureExtractor back = FeatureExtractor::load(path);
    const FeatureMatrix a = fe.transform(fit);
    const FeatureMatrix b = back.transform(fit);
    CHECK(a.data == b.data);
    std::filesystem::remove(path);
}

TEST_CASE("from_configuration: canonical names map onto the architecture") {
    const space::SearchSpace s =
        space::SearchSpace::from_file(std::string(SOURCE_DIR) + "/spaces/two_view_16.json");
    Rng rng(22);
    for (int i = 0; i < 200; ++i) {
        const space::Configuration c = s.sample(rng);
        const PipelineConfig cfg = PipelineConfig::from_configuration(c, 9000);
        CHECK(cfg.target_resolution == static_cast<int>(c.num("res")));
        const bool two_layers = c.str("layer2") == "on";
        CHECK(cfg.layers.size() == (two_layers ? 2 : 1));
        CHECK((cfg.layers[0].method == FilterMethod::PcaProjection) ==
              (c.str("l1_method") == "pca"));
        if (cfg.layers[0].method == FilterMethod::PcaProjection)
            CHECK(cfg.layers[0].pca_rank == static_cast<int>(c.num("l1_pca_rank")));
        CHECK(cfg.readout.signed_hist == (c.str("readout") == "signed"));
        CHECK(cfg.layers[0].pool_stride <= cfg.layers[0].pool_size);
    }
}

TEST_CASE("property: sampled configurations yield finite features or clean degenerates") {
    const space::SearchSpace s =
        space::SearchSpace::from_file(std::string(SOURCE_DIR) + "/spaces/two_view_16.json");
    Rng rng(23);
    const std::vector<Image> fit = random_images(rng, 8, 16);
    const std::vector<Image> eval = random_images(rng, 5, 16);
    int extracted = 0, degenerate = 0;
    for (int i = 0; i < 300; ++i) {
        const space::Configuration c = s.sample(rng);
        try {
            const PipelineConfig cfg = PipelineConfig::from_configuration(c, 1500);
            const FeatureExtractor fe = FeatureExtractor::build(cfg, fit, 1000 + i);
            const FeatureMatrix m = fe.transform(eval);
            for (float v : m.data) REQUIRE(std::isfinite(v));
            REQUIRE(m.cols >= 1);
            ++extracted;
        } catch (const DegenerateConfig&) {
            ++degenerate;
        }
    }
    CHECK(extracted + degenerate == 300);
    CHECK(extracted > 50);  // the space is not degenerate-dominated
}
