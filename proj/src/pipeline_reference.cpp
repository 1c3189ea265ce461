#include "nullboost/pipeline_reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nb::pipe::reference {

Stack ncc_layer(const Stack& maps, const FilterBank& bank, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("ncc_layer: epsilon must be positive");
    if (maps.c != bank.channels) throw DimensionMismatch("ncc_layer: channel mismatch");
    const int k = bank.size;
    const int oh = maps.h - k + 1;
    const int ow = maps.w - k + 1;
    if (oh < 1 || ow < 1) throw DegenerateConfig("ncc", "output side collapsed below 1");

    const double n_win = static_cast<double>(maps.c) * k * k;
    Stack out(bank.count, oh, ow);
    for (int f = 0; f < bank.count; ++f) {
        const double* filt = bank.filter(f);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double mean = 0.0;
                for (int c = 0; c < maps.c; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) mean += maps.at(c, y + ky, x + kx);
                mean /= n_win;
                double energy = 0.0;
                double dot = 0.0;
                std::size_t idx = 0;
                for (int c = 0; c < maps.c; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const double v = maps.at(c, y + ky, x + kx) - mean;
                            energy += v * v;
                            dot += v * filt[idx++];
                        }
                out.at(f, y, x) = static_cast<float>(dot / std::sqrt(energy + epsilon));
            }
        }
    }
    return out;
}

Stack pool(const Stack& maps, int pool_size, int pool_stride, PoolMode mode) {
    if (pool_size < 1 || pool_stride < 1 || pool_stride > pool_size)
        throw ConfigError("pool: bad size/stride");
    if (pool_size > std::min(maps.h, maps.w))
        throw DegenerateConfig("pool", "pool size exceeds side");
    const int oh = (maps.h - pool_size) / pool_stride + 1;
    const int ow = (maps.w - pool_size) / pool_stride + 1;
    Stack out(maps.c, oh, ow);
    for (int c = 0; c < maps.c; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s2 = 0.0, s = 0.0;
                double mx = -std::numeric_limits<double>::infinity();
                for (int ky = 0; ky < pool_size; ++ky)
                    for (int kx = 0; kx < pool_size; ++kx) {
                        const double v = maps.at(c, y * pool_stride + ky, x * pool_stride + kx);
                        s += v;
                        s2 += v * v;
                        mx = std::max(mx, v);
                    }
                const double area = static_cast<double>(pool_size) * pool_size;
                double r = 0.0;
                if (mode == PoolMode::L2)
                    r = std::sqrt(s2 / area);
                else if (mode == PoolMode::Mean)
                    r = s / area;
                else
                    r = mx;
                out.at(c, y, x) = static_cast<float>(r);
            }
    return out;
}

std::vector<float> dihist_readout(const Stack& maps, int grid, bool signed_hist) {
    if (grid < 1 || grid > maps.h || grid > maps.w)
        throw DegenerateConfig("readout", "grid does not fit");
    std::vector<float> out;
    for (int c = 0; c < maps.c; ++c)
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                double pos = 0.0, neg = 0.0;
                for (int y = gy * maps.h / grid; y < (gy + 1) * maps.h / grid; ++y)
                    for (int x = gx * maps.w / grid; x < (gx + 1) * maps.w / grid; ++x) {
                        const double v = maps.at(c, y, x);
                        pos += std::max(0.0, v);
                        neg += std::max(0.0, -v);
                    }
                if (signed_hist) {
                    out.push_back(static_cast<float>(pos));
                    out.push_back(static_cast<float>(neg));
                } else {
                    out.push_back(static_cast<float>(pos + neg));
                }
            }
    return out;
}

FeatureMatrix transform(const FeatureExtractor& fe, const std::vector<Image>& images) {
    const PipelineConfig& cfg = fe.config();
    FeatureMatrix out(images.size(), fe.feature_count());
    for (std::size_t i = 0; i < images.size(); ++i) {
        Image work = rescale(images[i], cfg.target_resolution);
        const auto& wd = fe.warp();
        if (wd.enabled) work = affine_warp(work, wd.rot, wd.scale, wd.dx, wd.dy);
        Stack maps(1, work.h, work.w);
        std::copy(work.px.begin(), work.px.end(), maps.v.begin());
        for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
            maps = reference::ncc_layer(maps, fe.banks()[l], cfg.layers[l].epsilon);
            maps = reference::pool(maps, cfg.layers[l].pool_size, cfg.layers[l].pool_stride,
                                   cfg.layers[l].pool_mode);
        }
        const std::vector<float> row =
            reference::dihist_readout(maps, cfg.readout.grid, cfg.readout.signed_hist);
        std::copy(row.begin(), row.end(), out.row(i));
    }
    return out;
}

}  // namespace nb::pipe::reference
