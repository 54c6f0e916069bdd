#pragma once

#include <cstdint>
#include <string>

#include "usra/tensor.hpp"

namespace usra {

enum class AugKind { randconv, jitter };

const char* aug_kind_name(AugKind k);
AugKind aug_kind_from_name(const std::string& name);  // error on unknown name

/// One sampled augmentation: a shared 3x3 kernel (randconv) or a
/// (hue_shift, brightness, contrast, saturation) tuple (jitter).
struct AugmentOp {
    AugKind kind = AugKind::randconv;
    Tensor kernel;  // [3,3], randconv only
    float hue_shift = 0.0f;
    float brightness = 1.0f;
    float contrast = 1.0f;
    float saturation = 1.0f;
    uint64_t seed = 0;
};

/// Kernel weights i.i.d. Gaussian(0, (1/3)^2); jitter hue_shift in
/// [-0.5,0.5], the other factors in [0.9,1.1].
AugmentOp sample_aug(AugKind kind, uint64_t seed);

/// Applies the op to a stacked observation [9,48,48] (any [3k,H,W] works).
/// Output clamped to [0,1]. Pure function of (op, obs).
Tensor apply_aug(const AugmentOp& op, const Tensor& obs);

Tensor random_conv(const Tensor& obs, uint64_t seed);
Tensor color_jitter(const Tensor& obs, uint64_t seed);
Tensor augment(AugKind kind, const Tensor& obs, uint64_t seed);

}  // namespace usra
