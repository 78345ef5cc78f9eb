#pragma once

#include <cstdint>
#include <vector>

#include "promptseg/errors.hpp"

namespace promptseg {

// Dense row-major H x W plane.
template <typename T>
struct Plane {
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Plane() = default;
    Plane(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Plane& o) const { return h == o.h && w == o.w; }
};

// Values in {0,1}.
using BinaryMask = Plane<uint8_t>;
// Integer label ids, 0 = background.
using LabelMap = Plane<uint8_t>;
// Real-valued plane (probabilities, logits).
using Grid = Plane<double>;

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_shape(b))
        throw ValidationError(std::string(what) + ": shape mismatch");
}

inline size_t count_foreground(const BinaryMask& m) {
    size_t n = 0;
    for (uint8_t p : m.v) n += (p != 0);
    return n;
}

} // namespace promptseg
