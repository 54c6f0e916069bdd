#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace usra {

using Rgb = std::array<float, 3>;
using Hsv = std::array<float, 3>;  // h in [0,1), s and v in [0,1]

inline Hsv rgb_to_hsv(const Rgb& c) {
    const float mx = std::max({c[0], c[1], c[2]});
    const float mn = std::min({c[0], c[1], c[2]});
    const float d = mx - mn;
    float h = 0.0f;
    if (d > 0.0f) {
        if (mx == c[0])
            h = (c[1] - c[2]) / d;
        else if (mx == c[1])
            h = 2.0f + (c[2] - c[0]) / d;
        else
            h = 4.0f + (c[0] - c[1]) / d;
        h /= 6.0f;
        if (h < 0.0f) h += 1.0f;
    }
    const float s = mx > 0.0f ? d / mx : 0.0f;
    return {h, s, mx};
}

inline Rgb hsv_to_rgb(const Hsv& c) {
    const float h = c[0] - std::floor(c[0]);
    const float s = c[1], v = c[2];
    if (s <= 0.0f) return {v, v, v};
    const float h6 = h * 6.0f;
    const int sector = std::min(5, static_cast<int>(h6));
    const float f = h6 - static_cast<float>(sector);
    const float p = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

inline float fract(float x) { return x - std::floor(x); }

}  // namespace usra
