#pragma once

// Label sets are sorted ascending vectors of class ids. Two items are
// relevant to each other when their sets intersect.

#include <cstdint>
#include <vector>

namespace vith {

inline bool labels_intersect(const std::vector<std::uint32_t>& a,
                             const std::vector<std::uint32_t>& b) {
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) return true;
        if (a[i] < b[j]) ++i; else ++j;
    }
    return false;
}

inline std::size_t label_intersection_size(const std::vector<std::uint32_t>& a,
                                           const std::vector<std::uint32_t>& b) {
    std::size_t i = 0, j = 0, k = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) { ++k; ++i; ++j; }
        else if (a[i] < b[j]) ++i;
        else ++j;
    }
    return k;
}

}  // namespace vith
