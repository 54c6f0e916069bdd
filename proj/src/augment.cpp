#include "usra/augment.hpp"

#include <algorithm>
#include <cmath>

#include "usra/colorspace.hpp"
#include "usra/error.hpp"
#include "usra/graph.hpp"
#include "usra/rng.hpp"

namespace usra {

const char* aug_kind_name(AugKind k) { return k == AugKind::randconv ? "randconv" : "jitter"; }

AugKind aug_kind_from_name(const std::string& name) {
    if (name == "randconv") return AugKind::randconv;
    if (name == "jitter") return AugKind::jitter;
    raise(ErrorKind::config, "unknown augmentation '" + name + "' (expected randconv or jitter)");
}

AugmentOp sample_aug(AugKind kind, uint64_t seed) {
    AugmentOp op;
    op.kind = kind;
    op.seed = seed;
    Rng rng(derive_seed(seed, 0xa06, static_cast<uint64_t>(kind)));
    if (kind == AugKind::randconv) {
        op.kernel = Tensor({3, 3});
        for (std::size_t i = 0; i < 9; ++i) op.kernel[i] = rng.normal(0.0f, 1.0f / 3.0f);
    } else {
        op.hue_shift = rng.uniform(-0.5f, 0.5f);
        op.brightness = rng.uniform(0.9f, 1.1f);
        op.contrast = rng.uniform(0.9f, 1.1f);
        op.saturation = rng.uniform(0.9f, 1.1f);
    }
    return op;
}

namespace {

Tensor apply_randconv(const Tensor& kernel, const Tensor& obs) {
    if (!(kernel.rank() == 2 && kernel.dim(0) == 3 && kernel.dim(1) == 3))
        raise(ErrorKind::logic, "randconv kernel must be [3,3], got " + kernel.shape_str());
    if (obs.rank() != 3) raise(ErrorKind::logic, "augment expects [C,H,W], got " + obs.shape_str());
    const int channels = obs.dim(0), h = obs.dim(1), w = obs.dim(2);
    const int wp = w + 2;
    const float* k = kernel.data();
    Tensor out(obs.shape());
    std::vector<float> pad(static_cast<std::size_t>(h + 2) * wp);
    // the same kernel convolves every channel independently (depthwise),
    // with replicate padding
    for (int c = 0; c < channels; ++c) {
        const float* src = obs.data() + static_cast<std::size_t>(c) * h * w;
        for (int y = -1; y <= h; ++y) {
            const float* row = src + std::clamp(y, 0, h - 1) * w;
            float* dst = pad.data() + static_cast<std::size_t>(y + 1) * wp;
            dst[0] = row[0];
            std::copy_n(row, w, dst + 1);
            dst[w + 1] = row[w - 1];
        }
        float* o = out.data() + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < h; ++y) {
            const float* r0 = pad.data() + static_cast<std::size_t>(y) * wp;
            const float* r1 = r0 + wp;
            const float* r2 = r1 + wp;
            for (int x = 0; x < w; ++x) {
                const float v = k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] +  //
                                k[3] * r1[x] + k[4] * r1[x + 1] + k[5] * r1[x + 2] +  //
                                k[6] * r2[x] + k[7] * r2[x + 1] + k[8] * r2[x + 2];
                o[static_cast<std::size_t>(y) * w + x] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

Tensor apply_jitter(const AugmentOp& op, const Tensor& obs) {
    if (obs.rank() != 3 || obs.dim(0) % 3 != 0)
        raise(ErrorKind::logic, "jitter expects stacked RGB frames [3k,H,W], got " + obs.shape_str());
    const int frames = obs.dim(0) / 3;
    const int h = obs.dim(1), w = obs.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out(obs.shape());
    std::vector<float> vals(plane);
    for (int f = 0; f < frames; ++f) {
        const float* r = obs.data() + plane * (3 * f + 0);
        const float* g = obs.data() + plane * (3 * f + 1);
        const float* b = obs.data() + plane * (3 * f + 2);
        std::vector<float> hs(plane), ss(plane);
        double v_sum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            Hsv hsv = rgb_to_hsv({r[i], g[i], b[i]});
            hs[i] = fract(hsv[0] + op.hue_shift);
            ss[i] = std::clamp(hsv[1] * op.saturation, 0.0f, 1.0f);
            vals[i] = hsv[2] * op.brightness;
            v_sum += static_cast<double>(vals[i]);
        }
        // contrast pivots on the frame's mean brightness; written so that
        // contrast == 1 leaves values bit-identical
        const float v_mean = static_cast<float>(v_sum / static_cast<double>(plane));
        float* ro = out.data() + plane * (3 * f + 0);
        float* go = out.data() + plane * (3 * f + 1);
        float* bo = out.data() + plane * (3 * f + 2);
        for (std::size_t i = 0; i < plane; ++i) {
            const float v = (1.0f - op.contrast) * v_mean + op.contrast * vals[i];
            const Rgb rgb = hsv_to_rgb({hs[i], ss[i], std::clamp(v, 0.0f, 1.0f)});
            ro[i] = std::clamp(rgb[0], 0.0f, 1.0f);
            go[i] = std::clamp(rgb[1], 0.0f, 1.0f);
            bo[i] = std::clamp(rgb[2], 0.0f, 1.0f);
        }
    }
    return out;
}

}  // namespace

Tensor apply_aug(const AugmentOp& op, const Tensor& obs) {
    return op.kind == AugKind::randconv ? apply_randconv(op.kernel, obs) : apply_jitter(op, obs);
}

Tensor random_conv(const Tensor& obs, uint64_t seed) { return apply_aug(sample_aug(AugKind::randconv, seed), obs); }

Tensor color_jitter(const Tensor& obs, uint64_t seed) { return apply_aug(sample_aug(AugKind::jitter, seed), obs); }

Tensor augment(AugKind kind, const Tensor& obs, uint64_t seed) { return apply_aug(sample_aug(kind, seed), obs); }

}  // namespace usra
