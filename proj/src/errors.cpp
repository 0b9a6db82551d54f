#include "dforge/errors.hpp"

#include <cstdlib>

namespace dforge {

unsigned long long cost_guard() {
    static const unsigned long long value = [] {
        if (const char* env = std::getenv("DFORGE_COST_GUARD")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end && *end == '\0' && v > 0) return v;
            throw std::invalid_argument("DFORGE_COST_GUARD must be a positive integer");
        }
        return 1ull << 22;
    }();
    return value;
}

}
