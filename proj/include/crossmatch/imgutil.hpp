// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "crossmatch/array.hpp"

namespace crossmatch {

inline double clip01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

inline void clip01_inplace(Image& img) {
    for (auto& v : img.v) v = clip01(v);
}

// Separable Gaussian with clamp-to-edge borders; sigma <= 0 is identity.
inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + r];
    }
    for (auto& v : k) v /= sum;

    Image tmp(img.c, img.h, img.w), out(img.c, img.h, img.w);
    for (int c = 0; c < img.c; ++c) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[i + r] * img.at(c, y, std::clamp(x + i, 0, img.w - 1));
                tmp.at(c, y, x) = acc;
            }
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, img.h - 1), x);
                out.at(c, y, x) = acc;
            }
    }
    return out;
}

// Quantize to the 16-bit grid used by the on-disk format, so that an image
// written and re-read compares bit-equal to its in-memory source.
inline void quantize16(Image& img) {
    for (auto& v : img.v) v = std::lround(clip01(v) * 65535.0) / 65535.0;
}

}  // namespace crossmatch
