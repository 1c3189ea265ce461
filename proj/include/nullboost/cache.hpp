#pragma once

#include <optional>
#include <string>

#include "nullboost/common.hpp"
#include "nullboost/matrix.hpp"

namespace nb {

/// Optional on-disk cache of extracted feature matrices, keyed by
/// (configuration hash, seed, split id). Enabled by pointing
/// NULLBOOST_CACHE_DIR at a writable directory; disabled otherwise.
class FeatureCache {
  public:
    FeatureCache() = default;
    explicit FeatureCache(std::string dir) : dir_(std::move(dir)) {}
    static FeatureCache from_env();

    bool enabled() const { return !dir_.empty(); }

    static std::string key(std::uint64_t config_hash, std::uint64_t seed,
                           const std::string& split_id);

    std::optional<FeatureMatrix> lookup(const std::string& key) const;
    void store(const std::string& key, const FeatureMatrix& m) const;

  private:
    std::string path_for(const std::string& key) const;
    std::string dir_;
};

}  // namespace nb
