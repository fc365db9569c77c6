#include "tpinv/rng.hpp"

namespace tpinv {

uint64_t derive_seed(uint64_t seed, const std::string& tag) {
    // FNV-1a over the tag, mixed with the base seed through splitmix64.
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    Rng mix(seed ^ h);
    return mix.next_u64();
}

}  // namespace tpinv
