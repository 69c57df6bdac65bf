// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "crossmatch/common.hpp"

namespace crossmatch {

// Plain dense grayscale image, channel-major. All pipeline images are kept in
// [0, 1] doubles; channel count is usually 1.
struct Image {
    int c = 1;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Image() = default;
    Image(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

    double& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
    size_t size() const { return v.size(); }

    bool operator==(const Image& o) const { return c == o.c && h == o.h && w == o.w && v == o.v; }
};

// Class-id raster, 0 = background.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<int32_t> v;

    Mask() = default;
    Mask(int h_, int w_, int32_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }

    bool operator==(const Mask& o) const { return h == o.h && w == o.w && v == o.v; }
};

}  // namespace crossmatch
