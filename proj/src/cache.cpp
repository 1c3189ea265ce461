#include "nullboost/cache.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace nb {

namespace {
constexpr char kMagic[4] = {'N', 'B', 'F', '1'};
}

FeatureCache FeatureCache::from_env() {
    const char* dir = std::getenv("NULLBOOST_CACHE_DIR");
    if (!dir || !*dir) return FeatureCache();
    std::filesystem::create_directories(dir);
    return FeatureCache(dir);
}

std::string FeatureCache::key(std::uint64_t config_hash, std::uint64_t seed,
                              const std::string& split_id) {
    return hex64(config_hash) + "-" + hex64(seed) + "-" + hex64(fnv1a(split_id));
}

std::string FeatureCache::path_for(const std::string& key) const {
    return dir_ + "/" + key + ".nbf";
}

std::optional<FeatureMatrix> FeatureCache::lookup(const std::string& key) const {
    if (!enabled()) return std::nullopt;
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) return std::nullopt;
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in) return std::nullopt;
    FeatureMatrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!in) return std::nullopt;
    return m;
}

void FeatureCache::store(const std::string& key, const FeatureMatrix& m) const {
    if (!enabled()) return;
    const std::string tmp = path_for(key) + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) return;  // cache is best-effort
        out.write(kMagic, 4);
        const std::uint64_t rows = m.rows, cols = m.cols;
        out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(float)));
        if (!out) return;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_for(key), ec);
}

}  // namespace nb
