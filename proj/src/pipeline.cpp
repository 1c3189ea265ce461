#include "nullboost/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nb::pipe {

FilterMethod filter_method_from_name(const std::string& s) {
    if (s == "gaussian") return FilterMethod::Gaussian;
    if (s == "pca" || s == "pca-projection") return FilterMethod::PcaProjection;
    if (s == "patch" || s == "patch-projection") return FilterMethod::PatchProjection;
    throw ConfigError("unknown filter method '" + s + "'");
}

std::string filter_method_name(FilterMethod m) {
    switch (m) {
        case FilterMethod::Gaussian: return "gaussian";
        case FilterMethod::PcaProjection: return "pca";
        case FilterMethod::PatchProjection: return "patch";
    }
    return "?";
}

PoolMode pool_mode_from_name(const std::string& s) {
    if (s == "l2") return PoolMode::L2;
    if (s == "mean") return PoolMode::Mean;
    if (s == "max") return PoolMode::Max;
    throw ConfigError("unknown pool mode '" + s + "'");
}

std::string pool_mode_name(PoolMode m) {
    switch (m) {
        case PoolMode::L2: return "l2";
        case PoolMode::Mean: return "mean";
        case PoolMode::Max: return "max";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Kernels

Image rescale(const Image& img, int side) {
    if (side < 1) throw ConfigError("rescale: side must be >= 1");
    Image out(side, side);
    const double sy_step = static_cast<double>(img.h) / side;
    const double sx_step = static_cast<double>(img.w) / side;
    for (int y = 0; y < side; ++y) {
        double sy = (y + 0.5) * sy_step - 0.5;
        sy = std::min(static_cast<double>(img.h - 1), std::max(0.0, sy));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < side; ++x) {
            double sx = (x + 0.5) * sx_step - 0.5;
            sx = std::min(static_cast<double>(img.w - 1), std::max(0.0, sx));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const double fx = sx - x0;
            const double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
            const double bot = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
            out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return out;
}

Image affine_warp(const Image& img, double rot_deg, double scale, double dx, double dy) {
    if (!(scale > 0.0)) throw ConfigError("affine_warp: scale must be positive");
    double mean = 0.0;
    for (float v : img.px) mean += v;
    mean /= static_cast<double>(img.px.size());

    const double theta = rot_deg * M_PI / 180.0;
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    const double cx = 0.5 * (img.w - 1);
    const double cy = 0.5 * (img.h - 1);

    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            // Inverse of: rotate by theta and scale about the center, then
            // translate by (dx, dy).
            const double u = (x - dx) - cx;
            const double v = (y - dy) - cy;
            double sx = (ct * u + st * v) / scale + cx;
            double sy = (-st * u + ct * v) / scale + cy;
            // Boundary jitter from finite precision must not flip a border
            // sample into the fill region.
            const double edge = 1e-9;
            if (sx < -edge || sx > img.w - 1 + edge || sy < -edge || sy > img.h - 1 + edge) {
                out.at(y, x) = static_cast<float>(mean);
                continue;
            }
            sx = std::min(static_cast<double>(img.w - 1), std::max(0.0, sx));
            sy = std::min(static_cast<double>(img.h - 1), std::max(0.0, sy));
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const int y1 = std::min(y0 + 1, img.h - 1);
            const double fx = sx - x0;
            const double fy = sy - y0;
            const double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
            const double bot = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
            out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return out;
}

Stack ncc_layer(const Stack& maps, const FilterBank& bank, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("ncc_layer: epsilon must be positive");
    if (maps.c != bank.channels)
        throw DimensionMismatch("ncc_layer: input has " + std::to_string(maps.c) +
                                " channels, bank expects " + std::to_string(bank.channels));
    const int k = bank.size;
    const int oh = maps.h - k + 1;
    const int ow = maps.w - k + 1;
    if (oh < 1 || ow < 1)
        throw DegenerateConfig("ncc", "filter size " + std::to_string(k) +
                                          " exceeds input side " +
                                          std::to_string(std::min(maps.h, maps.w)));

    const int h = maps.h, w = maps.w, C = maps.c;
    const double n_win = static_cast<double>(C) * k * k;

    // Channel-summed value and squared-value planes, then 2D prefix sums, so
    // every window's mean and energy are O(1).
    std::vector<double> ii((h + 1) * (w + 1), 0.0);
    std::vector<double> ii2((h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double rowsum = 0.0, rowsum2 = 0.0;
        for (int x = 0; x < w; ++x) {
            double s = 0.0, s2 = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = maps.at(c, y, x);
                s += v;
                s2 += v * v;
            }
            rowsum += s;
            rowsum2 += s2;
            ii[(y + 1) * (w + 1) + (x + 1)] = ii[y * (w + 1) + (x + 1)] + rowsum;
            ii2[(y + 1) * (w + 1) + (x + 1)] = ii2[y * (w + 1) + (x + 1)] + rowsum2;
        }
    }
    auto window_sum = [&](const std::vector<double>& t, int y, int x) {
        return t[(y + k) * (w + 1) + (x + k)] - t[y * (w + 1) + (x + k)] -
               t[(y + k) * (w + 1) + x] + t[y * (w + 1) + x];
    };

    Stack out(bank.count, oh, ow);
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow);
    for (int f = 0; f < bank.count; ++f) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const double* filt = bank.filter(f);
        double filt_sum = 0.0;
        for (std::size_t i = 0; i < bank.filter_len(); ++i) filt_sum += filt[i];
        // Raw correlation, accumulated tap by tap over contiguous rows.
        for (int c = 0; c < C; ++c) {
            const float* plane = maps.map(c);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = filt[(static_cast<std::size_t>(c) * k + ky) * k + kx];
                    const float* base = plane + ky * w + kx;
                    for (int y = 0; y < oh; ++y) {
                        const float* src = base + y * w;
                        double* dst = acc.data() + static_cast<std::size_t>(y) * ow;
                        for (int x = 0; x < ow; ++x) dst[x] += wv * src[x];
                    }
                }
            }
        }
        float* omap = out.map(f);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const double wsum = window_sum(ii, y, x);
                const double wsum2 = window_sum(ii2, y, x);
                const double mu = wsum / n_win;
                const double centered_energy = std::max(0.0, wsum2 - wsum * mu);
                const double den = std::sqrt(centered_energy + epsilon);
                omap[y * ow + x] = static_cast<float>(
                    (acc[static_cast<std::size_t>(y) * ow + x] - mu * filt_sum) / den);
            }
        }
    }
    return out;
}

Stack pool(const Stack& maps, int pool_size, int pool_stride, PoolMode mode) {
    if (pool_size < 1 || pool_stride < 1) throw ConfigError("pool: size and stride must be >= 1");
    if (pool_stride > pool_size) throw ConfigError("pool: stride must be <= size");
    if (pool_size > std::min(maps.h, maps.w))
        throw DegenerateConfig("pool", "pool size " + std::to_string(pool_size) +
                                           " exceeds side " +
                                           std::to_string(std::min(maps.h, maps.w)));
    const int oh = (maps.h - pool_size) / pool_stride + 1;
    const int ow = (maps.w - pool_size) / pool_stride + 1;
    if (oh < 1 || ow < 1) throw DegenerateConfig("pool", "output side collapsed below 1");

    Stack out(maps.c, oh, ow);
    const double inv_area = 1.0 / (static_cast<double>(pool_size) * pool_size);
    for (int c = 0; c < maps.c; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int y0 = y * pool_stride;
                const int x0 = x * pool_stride;
                double r;
                switch (mode) {
                    case PoolMode::L2: {
                        double s2 = 0.0;
                        for (int yy = 0; yy < pool_size; ++yy)
                            for (int xx = 0; xx < pool_size; ++xx) {
                                const double v = maps.at(c, y0 + yy, x0 + xx);
                                s2 += v * v;
                            }
                        r = std::sqrt(s2 * inv_area);
                        break;
                    }
                    case PoolMode::Mean: {
                        double s = 0.0;
                        for (int yy = 0; yy < pool_size; ++yy)
                            for (int xx = 0; xx < pool_size; ++xx)
                                s += maps.at(c, y0 + yy, x0 + xx);
                        r = s * inv_area;
                        break;
                    }
                    case PoolMode::Max: {
                        double best = -std::numeric_limits<double>::infinity();
                        for (int yy = 0; yy < pool_size; ++yy)
                            for (int xx = 0; xx < pool_size; ++xx)
                                best = std::max(best,
                                                static_cast<double>(maps.at(c, y0 + yy, x0 + xx)));
                        r = best;
                        break;
                    }
                    default: r = 0.0;
                }
                out.at(c, y, x) = static_cast<float>(r);
            }
        }
    }
    return out;
}

std::vector<float> dihist_readout(const Stack& maps, int grid, bool signed_hist) {
    if (grid < 1) throw ConfigError("dihist_readout: grid must be >= 1");
    if (grid > maps.h || grid > maps.w)
        throw DegenerateConfig("readout", "grid " + std::to_string(grid) + " exceeds side " +
                                              std::to_string(std::min(maps.h, maps.w)));
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(maps.c) * grid * grid * (signed_hist ? 2 : 1));
    for (int c = 0; c < maps.c; ++c) {
        for (int gy = 0; gy < grid; ++gy) {
            const int y0 = gy * maps.h / grid;
            const int y1 = (gy + 1) * maps.h / grid;
            for (int gx = 0; gx < grid; ++gx) {
                const int x0 = gx * maps.w / grid;
                const int x1 = (gx + 1) * maps.w / grid;
                double pos = 0.0, neg = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        const double v = maps.at(c, y, x);
                        if (v > 0.0)
                            pos += v;
                        else
                            neg -= v;
                    }
                if (signed_hist) {
                    out.push_back(static_cast<float>(pos));
                    out.push_back(static_cast<float>(neg));
                } else {
                    out.push_back(static_cast<float>(pos + neg));
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Filter generation

static void normalize_filter(std::vector<double>& f) {
    double n2 = 0.0;
    for (double v : f) n2 += v * v;
    const double n = std::sqrt(n2);
    for (double& v : f) v /= n;
}

static double filter_norm(const std::vector<double>& f) {
    double n2 = 0.0;
    for (double v : f) n2 += v * v;
    return std::sqrt(n2);
}

FilterBank build_filters(FilterMethod method, const std::vector<std::vector<float>>& patches,
                         int count, int channels, int size, Rng& rng, int pca_rank) {
    if (count < 1 || channels < 1 || size < 1) throw ConfigError("build_filters: bad geometry");
    const std::size_t dim = static_cast<std::size_t>(channels) * size * size;
    FilterBank bank;
    bank.count = count;
    bank.channels = channels;
    bank.size = size;
    bank.w.resize(static_cast<std::size_t>(count) * dim);

    const std::size_t need =
        static_cast<std::size_t>(std::max({count, pca_rank, 100}));
    if (method != FilterMethod::Gaussian) {
        if (patches.size() < need)
            throw ConfigError("insufficient-patches: have " + std::to_string(patches.size()) +
                              ", need " + std::to_string(need));
        for (const auto& p : patches)
            if (p.size() != dim)
                throw DimensionMismatch("build_filters: patch dimensionality mismatch");
    }

    auto store = [&](int f, const std::vector<double>& vals) {
        for (std::size_t i = 0; i < dim; ++i)
            bank.w[static_cast<std::size_t>(f) * dim + i] = vals[i];
    };

    switch (method) {
        case FilterMethod::Gaussian: {
            std::vector<double> f(dim);
            for (int fi = 0; fi < count; ++fi) {
                do {
                    for (auto& v : f) v = rng.normal();
                } while (filter_norm(f) < 1e-12);
                normalize_filter(f);
                store(fi, f);
            }
            break;
        }
        case FilterMethod::PatchProjection: {
            std::vector<double> f(dim);
            for (int fi = 0; fi < count; ++fi) {
                bool ok = false;
                for (int tries = 0; tries < 100 && !ok; ++tries) {
                    const std::size_t a = rng.uniform_int(patches.size());
                    std::size_t b = rng.uniform_int(patches.size());
                    while (b == a && patches.size() > 1) b = rng.uniform_int(patches.size());
                    const double sa = rng.uniform() < 0.5 ? -1.0 : 1.0;
                    const double sb = rng.uniform() < 0.5 ? -1.0 : 1.0;
                    for (std::size_t i = 0; i < dim; ++i)
                        f[i] = sa * patches[a][i] + sb * patches[b][i];
                    ok = filter_norm(f) > 1e-10;
                }
                if (!ok)
                    throw ConfigError("insufficient-patches: sampled patches are degenerate");
                normalize_filter(f);
                store(fi, f);
            }
            break;
        }
        case FilterMethod::PcaProjection: {
            const std::size_t n = patches.size();
            // A rank above what the data supports is clamped: the covariance
            // of n mean-centered patches has at most min(dim, n - 1)
            // informative directions.
            const int rank = std::max(
                1, std::min({pca_rank, static_cast<int>(dim), static_cast<int>(n) - 1}));

            Eigen::MatrixXd x(n, dim);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dim; ++j) x(i, j) = patches[i][j];
            const Eigen::RowVectorXd mean = x.colwise().mean();
            x.rowwise() -= mean;

            Eigen::MatrixXd components(dim, rank);
            if (dim <= n) {
                const Eigen::MatrixXd cov = x.transpose() * x;
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
                for (int r = 0; r < rank; ++r)
                    components.col(r) = eig.eigenvectors().col(static_cast<int>(dim) - 1 - r);
            } else {
                // Gram trick: eigenvectors of x x^T lift to component space.
                const Eigen::MatrixXd gram = x * x.transpose();
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
                for (int r = 0; r < rank; ++r) {
                    Eigen::VectorXd v = x.transpose() * eig.eigenvectors().col(
                                                            static_cast<int>(n) - 1 - r);
                    const double vn = v.norm();
                    if (vn > 1e-12) v /= vn;
                    components.col(r) = v;
                }
            }
            // Sign convention: largest-magnitude entry positive.
            for (int r = 0; r < rank; ++r) {
                int arg = 0;
                components.col(r).cwiseAbs().maxCoeff(&arg);
                if (components(arg, r) < 0.0) components.col(r) = -components.col(r);
            }

            std::vector<double> f(dim);
            std::vector<double> g(rank);
            for (int fi = 0; fi < count; ++fi) {
                bool ok = false;
                for (int tries = 0; tries < 100 && !ok; ++tries) {
                    for (auto& v : g) v = rng.normal();
                    for (std::size_t i = 0; i < dim; ++i) {
                        double acc = 0.0;
                        for (int r = 0; r < rank; ++r) acc += g[r] * components(i, r);
                        f[i] = acc;
                    }
                    ok = filter_norm(f) > 1e-12;
                }
                if (!ok) throw ConfigError("insufficient-patches: rank-deficient components");
                normalize_filter(f);
                store(fi, f);
            }
            break;
        }
    }
    return bank;
}

// ---------------------------------------------------------------------------
// Geometry

GeometryInfo check_geometry(const PipelineConfig& cfg, int input_side) {
    if (cfg.layers.empty() || cfg.layers.size() > 3)
        throw ConfigError("pipeline must have 1 to 3 layers");
    if (cfg.target_resolution < 1) throw ConfigError("target resolution must be >= 1");
    (void)input_side;  // rescaling makes the pipeline side-independent
    GeometryInfo info;
    int side = cfg.target_resolution;
    for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        const LayerSpec& layer = cfg.layers[l];
        if (layer.filter_size < 1 || layer.filter_size % 2 == 0)
            throw ConfigError("layer " + std::to_string(l + 1) + ": filter size must be odd");
        if (layer.pool_stride > layer.pool_size || layer.pool_stride < 1)
            throw ConfigError("layer " + std::to_string(l + 1) + ": bad pool stride");
        if (!(layer.epsilon > 0.0))
            throw ConfigError("layer " + std::to_string(l + 1) + ": epsilon must be positive");
        if (layer.filter_count < 1)
            throw ConfigError("layer " + std::to_string(l + 1) + ": filter count must be >= 1");

        const int ncc_side = side - layer.filter_size + 1;
        if (ncc_side < 1)
            throw DegenerateConfig("ncc", "layer " + std::to_string(l + 1) + ": filter size " +
                                              std::to_string(layer.filter_size) +
                                              " exceeds side " + std::to_string(side));
        info.ncc_sides.push_back(ncc_side);
        if (layer.pool_size > ncc_side)
            throw DegenerateConfig("pool", "layer " + std::to_string(l + 1) + ": pool size " +
                                               std::to_string(layer.pool_size) +
                                               " exceeds side " + std::to_string(ncc_side));
        const int pool_side = (ncc_side - layer.pool_size) / layer.pool_stride + 1;
        if (pool_side < 1)
            throw DegenerateConfig("pool",
                                   "layer " + std::to_string(l + 1) + ": side collapsed to 0");
        info.pool_sides.push_back(pool_side);
        side = pool_side;
    }
    if (cfg.readout.grid < 1) throw ConfigError("readout grid must be >= 1");
    if (cfg.readout.grid > side)
        throw DegenerateConfig("readout", "grid " + std::to_string(cfg.readout.grid) +
                                              " exceeds final side " + std::to_string(side));
    info.feature_len = static_cast<std::size_t>(cfg.layers.back().filter_count) *
                       cfg.readout.grid * cfg.readout.grid * (cfg.readout.signed_hist ? 2 : 1);
    if (info.feature_len < 1) throw DegenerateConfig("readout", "0 features remain");
    if (info.feature_len > cfg.feature_cap)
        throw DegenerateConfig("readout", "cap exceeded: " + std::to_string(info.feature_len) +
                                              " > " + std::to_string(cfg.feature_cap));
    return info;
}

// ---------------------------------------------------------------------------
// PipelineConfig mapping and serialization

PipelineConfig PipelineConfig::from_configuration(const space::Configuration& cfg,
                                                  std::size_t feature_cap) {
    PipelineConfig pc;
    pc.feature_cap = feature_cap;
    pc.target_resolution = static_cast<int>(cfg.num("res"));
    if (cfg.has("warp") && cfg.str("warp") == "on") {
        pc.warp.enabled = true;
        pc.warp.rot_range = cfg.num("warp_rot");
        pc.warp.scale_range = cfg.num("warp_scale");
        pc.warp.trans_range = cfg.num("warp_trans");
    }
    auto read_layer = [&](const std::string& prefix) {
        LayerSpec l;
        l.filter_count = static_cast<int>(cfg.num(prefix + "_nf"));
        l.filter_size = static_cast<int>(cfg.num(prefix + "_fsize"));
        const std::string method = cfg.str(prefix + "_method");
        l.method = filter_method_from_name(method);
        if (l.method == FilterMethod::PcaProjection)
            l.pca_rank = static_cast<int>(cfg.num(prefix + "_pca_rank"));
        l.epsilon = cfg.num(prefix + "_eps");
        l.pool_size = std::stoi(cfg.str(prefix + "_pool"));
        l.pool_stride =
            cfg.has(prefix + "_pstride") ? static_cast<int>(cfg.num(prefix + "_pstride")) : 1;
        l.pool_mode = pool_mode_from_name(cfg.str(prefix + "_pmode"));
        return l;
    };
    pc.layers.push_back(read_layer("l1"));
    if (cfg.has("layer2") && cfg.str("layer2") == "on") {
        pc.layers.push_back(read_layer("l2"));
        if (cfg.has("layer3") && cfg.str("layer3") == "on") pc.layers.push_back(read_layer("l3"));
    }
    pc.readout.signed_hist = cfg.str("readout") == "signed";
    pc.readout.grid = static_cast<int>(cfg.num("grid"));
    return pc;
}

json PipelineConfig::to_json() const {
    json j;
    j["res"] = target_resolution;
    j["warp"] = {{"enabled", warp.enabled},
                 {"rot", warp.rot_range},
                 {"scale", warp.scale_range},
                 {"trans", warp.trans_range}};
    json layers_j = json::array();
    for (const auto& l : layers) {
        layers_j.push_back({{"count", l.filter_count},
                            {"size", l.filter_size},
                            {"method", filter_method_name(l.method)},
                            {"pca_rank", l.pca_rank},
                            {"eps", l.epsilon},
                            {"pool", l.pool_size},
                            {"stride", l.pool_stride},
                            {"pmode", pool_mode_name(l.pool_mode)}});
    }
    j["layers"] = std::move(layers_j);
    j["readout"] = {{"signed", readout.signed_hist}, {"grid", readout.grid}};
    j["cap"] = feature_cap;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig pc;
    pc.target_resolution = j.at("res").get<int>();
    pc.warp.enabled = j.at("warp").at("enabled").get<bool>();
    pc.warp.rot_range = j.at("warp").at("rot").get<double>();
    pc.warp.scale_range = j.at("warp").at("scale").get<double>();
    pc.warp.trans_range = j.at("warp").at("trans").get<double>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.filter_count = lj.at("count").get<int>();
        l.filter_size = lj.at("size").get<int>();
        l.method = filter_method_from_name(lj.at("method").get<std::string>());
        l.pca_rank = lj.at("pca_rank").get<int>();
        l.epsilon = lj.at("eps").get<double>();
        l.pool_size = lj.at("pool").get<int>();
        l.pool_stride = lj.at("stride").get<int>();
        l.pool_mode = pool_mode_from_name(lj.at("pmode").get<std::string>());
        pc.layers.push_back(l);
    }
    pc.readout.signed_hist = j.at("readout").at("signed").get<bool>();
    pc.readout.grid = j.at("readout").at("grid").get<int>();
    pc.feature_cap = j.at("cap").get<std::size_t>();
    return pc;
}

// ---------------------------------------------------------------------------
// FeatureExtractor

namespace {
std::atomic<std::uint64_t> g_pixel_work{0};
}

std::uint64_t FeatureExtractor::pixel_work_counter() { return g_pixel_work.load(); }

Stack FeatureExtractor::run_layers(const Image& img, std::size_t n_layers) const {
    g_pixel_work.fetch_add(1, std::memory_order_relaxed);
    Image work = rescale(img, cfg_.target_resolution);
    if (warp_.enabled) work = affine_warp(work, warp_.rot, warp_.scale, warp_.dx, warp_.dy);
    Stack maps(1, work.h, work.w);
    std::copy(work.px.begin(), work.px.end(), maps.v.begin());
    for (std::size_t l = 0; l < n_layers; ++l) {
        const LayerSpec& layer = cfg_.layers[l];
        maps = ncc_layer(maps, banks_[l], layer.epsilon);
        maps = pool(maps, layer.pool_size, layer.pool_stride, layer.pool_mode);
    }
    return maps;
}

std::vector<float> FeatureExtractor::extract_row(const Image& img) const {
    const Stack maps = run_layers(img, cfg_.layers.size());
    return dihist_readout(maps, cfg_.readout.grid, cfg_.readout.signed_hist);
}

FeatureExtractor FeatureExtractor::build(const PipelineConfig& cfg,
                                         const std::vector<Image>& fit_images,
                                         std::uint64_t seed) {
    FeatureExtractor fe;
    fe.cfg_ = cfg;
    fe.seed_ = seed;
    fe.geometry_ = check_geometry(cfg, fit_images.empty() ? cfg.target_resolution
                                                          : fit_images.front().h);
    if (fit_images.empty()) throw DataError("feature extractor needs at least one fit image");

    Rng rng(seed);
    if (cfg.warp.enabled) {
        fe.warp_.enabled = true;
        fe.warp_.rot = rng.uniform(-cfg.warp.rot_range, cfg.warp.rot_range);
        fe.warp_.scale = std::max(0.05, 1.0 + rng.uniform(-cfg.warp.scale_range,
                                                          cfg.warp.scale_range));
        fe.warp_.dx = rng.uniform(-cfg.warp.trans_range, cfg.warp.trans_range);
        fe.warp_.dy = rng.uniform(-cfg.warp.trans_range, cfg.warp.trans_range);
    }

    // Patch source: a deterministic subsample of fit images, advanced layer
    // by layer so patches reflect each layer's actual input.
    const std::size_t n_sample = std::min<std::size_t>(fit_images.size(), 64);

    // Symbolic patch-availability check, before any pixel work: a config
    // whose data-driven layer cannot see enough distinct patches is
    // degenerate, like any other collapsed geometry.
    for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        const LayerSpec& layer = cfg.layers[l];
        if (layer.method == FilterMethod::Gaussian) continue;
        const int in_side = l == 0 ? cfg.target_resolution : fe.geometry_.pool_sides[l - 1];
        const int positions = in_side - layer.filter_size + 1;
        const std::size_t available =
            n_sample * static_cast<std::size_t>(positions) * positions;
        const std::size_t need =
            static_cast<std::size_t>(std::max({layer.filter_count, layer.pca_rank, 100}));
        if (available < need)
            throw DegenerateConfig("filters", "layer " + std::to_string(l + 1) + " offers " +
                                                  std::to_string(available) + " patches, needs " +
                                                  std::to_string(need));
    }
    std::vector<std::size_t> order(fit_images.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n_sample; ++i) {
        const std::size_t j = i + rng.uniform_int(order.size() - i);
        std::swap(order[i], order[j]);
    }

    std::vector<Stack> sample_maps;
    sample_maps.reserve(n_sample);
    for (std::size_t i = 0; i < n_sample; ++i) {
        const Image& src = fit_images[order[i]];
        g_pixel_work.fetch_add(1, std::memory_order_relaxed);
        Image work = rescale(src, cfg.target_resolution);
        if (fe.warp_.enabled)
            work = affine_warp(work, fe.warp_.rot, fe.warp_.scale, fe.warp_.dx, fe.warp_.dy);
        Stack s(1, work.h, work.w);
        std::copy(work.px.begin(), work.px.end(), s.v.begin());
        sample_maps.push_back(std::move(s));
    }

    for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        const LayerSpec& layer = cfg.layers[l];
        const int k = layer.filter_size;
        const int channels = sample_maps.front().c;

        std::vector<std::vector<float>> patches;
        if (layer.method != FilterMethod::Gaussian) {
            const int ph = sample_maps.front().h - k + 1;
            const int pw = sample_maps.front().w - k + 1;
            const std::size_t available =
                sample_maps.size() * static_cast<std::size_t>(ph) * pw;
            const std::size_t need = static_cast<std::size_t>(
                std::max({layer.filter_count, layer.pca_rank, 100}));
            if (available < need)
                throw ConfigError("insufficient-patches: layer " + std::to_string(l + 1) +
                                  " offers " + std::to_string(available) + ", needs " +
                                  std::to_string(need));
            const std::size_t n_draw = std::min(available, std::max<std::size_t>(256, need));
            patches.reserve(n_draw);
            const std::size_t dim = static_cast<std::size_t>(channels) * k * k;
            for (std::size_t t = 0; t < n_draw; ++t) {
                const Stack& s = sample_maps[rng.uniform_int(sample_maps.size())];
                const int y0 = static_cast<int>(rng.uniform_int(ph));
                const int x0 = static_cast<int>(rng.uniform_int(pw));
                std::vector<float> p(dim);
                std::size_t idx = 0;
                for (int c = 0; c < channels; ++c)
                    for (int y = 0; y < k; ++y)
                        for (int x = 0; x < k; ++x) p[idx++] = s.at(c, y0 + y, x0 + x);
                patches.push_back(std::move(p));
            }
        }

        fe.banks_.push_back(build_filters(layer.method, patches, layer.filter_count, channels, k,
                                          rng, layer.pca_rank));

        if (l + 1 < cfg.layers.size()) {
            for (auto& s : sample_maps) {
                s = ncc_layer(s, fe.banks_.back(), layer.epsilon);
                s = pool(s, layer.pool_size, layer.pool_stride, layer.pool_mode);
            }
        }
    }
    return fe;
}

FeatureMatrix FeatureExtractor::transform(const std::vector<Image>& images) const {
    FeatureMatrix out(images.size(), geometry_.feature_len);
#pragma omp parallel for schedule(dynamic)
    for (long ii = 0; ii < static_cast<long>(images.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const std::vector<float> row = extract_row(images[i]);
        std::copy(row.begin(), row.end(), out.row(i));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extractor serialization: small JSON header + raw filter data.

static constexpr char kMagic[4] = {'N', 'B', 'X', '1'};

void FeatureExtractor::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write extractor file '" + path + "'");
    json header;
    header["config"] = cfg_.to_json();
    header["seed"] = seed_;
    header["warp"] = {{"enabled", warp_.enabled},
                      {"rot", warp_.rot},
                      {"scale", warp_.scale},
                      {"dx", warp_.dx},
                      {"dy", warp_.dy}};
    json banks_j = json::array();
    for (const auto& b : banks_)
        banks_j.push_back({{"count", b.count}, {"channels", b.channels}, {"size", b.size}});
    header["banks"] = std::move(banks_j);
    const std::string hs = header.dump();
    const std::uint64_t hlen = hs.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& b : banks_)
        out.write(reinterpret_cast<const char*>(b.w.data()),
                  static_cast<std::streamsize>(b.w.size() * sizeof(double)));
    if (!out) throw DataError("failed writing extractor file '" + path + "'");
}

FeatureExtractor FeatureExtractor::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open extractor file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("'" + path + "' is not an extractor file");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated extractor file '" + path + "'");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw DataError("extractor header: " + std::string(e.what()));
    }
    FeatureExtractor fe;
    fe.cfg_ = PipelineConfig::from_json(header.at("config"));
    fe.seed_ = header.at("seed").get<std::uint64_t>();
    fe.warp_.enabled = header.at("warp").at("enabled").get<bool>();
    fe.warp_.rot = header.at("warp").at("rot").get<double>();
    fe.warp_.scale = header.at("warp").at("scale").get<double>();
    fe.warp_.dx = header.at("warp").at("dx").get<double>();
    fe.warp_.dy = header.at("warp").at("dy").get<double>();
    for (const auto& bj : header.at("banks")) {
        FilterBank b;
        b.count = bj.at("count").get<int>();
        b.channels = bj.at("channels").get<int>();
        b.size = bj.at("size").get<int>();
        b.w.resize(static_cast<std::size_t>(b.count) * b.channels * b.size * b.size);
        in.read(reinterpret_cast<char*>(b.w.data()),
                static_cast<std::streamsize>(b.w.size() * sizeof(double)));
        if (!in) throw DataError("truncated extractor file '" + path + "'");
        fe.banks_.push_back(std::move(b));
    }
    fe.geometry_ = check_geometry(fe.cfg_, fe.cfg_.target_resolution);
    return fe;
}

}  // namespace nb::pipe
