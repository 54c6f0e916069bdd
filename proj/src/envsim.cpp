#include "usra/envsim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "usra/colorspace.hpp"
#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

namespace {

constexpr std::array<float, 5> kForces = {-1.0f, -0.5f, 0.0f, 0.5f, 1.0f};

constexpr std::array<float, 3> kCanonBackground = {0.2f, 0.3f, 0.6f};
constexpr std::array<float, 3> kCanonPlatform = {0.5f, 0.5f, 0.5f};
constexpr std::array<float, 3> kCanonAgent = {0.9f, 0.1f, 0.1f};

// geometry
constexpr int kPlatformTop = 36;
constexpr int kAgentLeft = 21, kAgentRight = 26;
constexpr int kAgentTop = 28, kAgentBottom = 35;
constexpr int kMarkerRow = 27;

std::array<float, 3> sample_hue_color(Rng& rng) {
    const float h = rng.uniform01();
    const float v = rng.uniform(0.5f, 1.0f);
    const Rgb c = hsv_to_rgb({h, 0.6f, v});
    return {c[0], c[1], c[2]};
}

Rgb pattern_color(const DomainSpec& spec, int col, int row, int t) {
    const float h0 = Rng(spec.pattern_seed).uniform01();
    const float h = fract(h0 + spec.pattern_speed * static_cast<float>(t) + 0.02f * static_cast<float>(col) +
                          0.03f * static_cast<float>(row));
    return hsv_to_rgb({h, 0.6f, 0.9f});
}

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::train: return "train";
        case Variant::color_easy: return "color_easy";
        case Variant::color_hard: return "color_hard";
        case Variant::video_easy: return "video_easy";
        case Variant::video_hard: return "video_hard";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : all_variants())
        if (name == variant_name(v)) return v;
    raise(ErrorKind::config, "unknown domain variant '" + name + "'");
}

const std::array<Variant, 5>& all_variants() {
    static const std::array<Variant, 5> vs = {Variant::train, Variant::color_easy, Variant::color_hard,
                                              Variant::video_easy, Variant::video_hard};
    return vs;
}

float ActionId::force() const { return kForces[static_cast<std::size_t>(index)]; }

ActionId ActionId::from_index(int i) {
    if (i < 0 || i >= kActionCount) raise(ErrorKind::logic, "action index " + std::to_string(i) + " out of range");
    return ActionId{i};
}

Observation Observation::repeated(FramePtr frame) {
    Observation o;
    o.frames_ = {frame, frame, frame};
    return o;
}

Observation Observation::shifted(FramePtr next) const {
    Observation o;
    o.frames_ = {frames_[1], frames_[2], std::move(next)};
    return o;
}

Tensor Observation::stacked() const {
    if (!valid()) raise(ErrorKind::logic, "observation has no frames");
    Tensor out({kObsChannels, kFrameSize, kFrameSize});
    const std::size_t frame_elems = static_cast<std::size_t>(3) * kFrameSize * kFrameSize;
    for (int i = 0; i < 3; ++i)
        std::copy_n(frames_[static_cast<std::size_t>(i)]->data(), frame_elems, out.data() + frame_elems * i);
    return out;
}

bool Observation::same_frames(const Observation& other) const {
    for (int i = 0; i < 3; ++i)
        if (frames_[static_cast<std::size_t>(i)] != other.frames_[static_cast<std::size_t>(i)]) return false;
    return true;
}

DomainSpec make_domain(Variant variant, uint64_t seed) {
    DomainSpec spec;
    spec.variant = variant;
    spec.background_color = kCanonBackground;
    spec.platform_color = kCanonPlatform;
    spec.agent_color = kCanonAgent;
    Rng rng(derive_seed(seed, 0xd07a11, static_cast<uint64_t>(variant)));
    switch (variant) {
        case Variant::train:
            break;
        case Variant::color_hard:
            spec.background_color = sample_hue_color(rng);
            spec.platform_color = sample_hue_color(rng);
            spec.agent_color = sample_hue_color(rng);
            break;
        case Variant::color_easy:
            spec.background_color = sample_hue_color(rng);
            spec.platform_color = sample_hue_color(rng);
            break;
        case Variant::video_easy:
        case Variant::video_hard:
            spec.pattern_seed = rng.next_u32();
            spec.pattern_speed = rng.uniform(0.01f, 0.05f);
            break;
    }
    return spec;
}

Tensor render(const PhysState& state, const DomainSpec& spec) {
    Tensor img({3, kFrameSize, kFrameSize});
    const bool video = spec.variant == Variant::video_easy || spec.variant == Variant::video_hard;
    const bool video_platform = spec.variant == Variant::video_hard;
    const int scroll = static_cast<int>(std::lround(state.x * 200.0));

    auto put = [&img](int r, int c, const std::array<float, 3>& col) {
        for (int ch = 0; ch < 3; ++ch) img.at({ch, r, c}) = col[static_cast<std::size_t>(ch)];
    };

    for (int r = 0; r < kFrameSize; ++r) {
        const bool platform_row = r >= kPlatformTop;
        for (int c = 0; c < kFrameSize; ++c) {
            if (platform_row) {
                if (video_platform) {
                    const Rgb p = pattern_color(spec, c, r, state.t);
                    put(r, c, {p[0], p[1], p[2]});
                } else {
                    put(r, c, spec.platform_color);
                }
            } else if (video) {
                const Rgb p = pattern_color(spec, c, r, state.t);
                put(r, c, {p[0], p[1], p[2]});
            } else {
                // scrolling vertical stripes, period 12 px, 6 px at 0.8 then 6 px at 1.0
                const int band = ((c + scroll) % 12) < 6 ? 0 : 1;
                const float f = band == 0 ? 0.8f : 1.0f;
                put(r, c, {spec.background_color[0] * f, spec.background_color[1] * f, spec.background_color[2] * f});
            }
        }
    }

    for (int r = kAgentTop; r <= kAgentBottom; ++r)
        for (int c = kAgentLeft; c <= kAgentRight; ++c) put(r, c, spec.agent_color);

    // 2x2 velocity marker just above the body
    const int mc = 23 + static_cast<int>(std::lround(2.0 * state.v));
    for (int r = kMarkerRow; r <= kMarkerRow + 1; ++r)
        for (int c = mc; c <= mc + 1; ++c) put(r, c, spec.agent_color);

    return img;
}

void phys_step(PhysState& state, ActionId action, float& reward, bool& done) {
    if (state.t >= kEpisodeLength) raise(ErrorKind::logic, "step on a finished episode (t=200)");
    const double f = static_cast<double>(action.force());
    double v = 0.95 * state.v + 0.1 * f;
    v = std::clamp(v, -1.0, 1.0);
    double x = state.x + 0.05 * v;
    x -= std::floor(x);
    state.v = v;
    state.x = x;
    state.t += 1;
    reward = static_cast<float>(v);
    done = state.t == kEpisodeLength;
}

void StriderEnv::reset(const DomainSpec& spec, uint64_t seed) {
    spec_ = spec;
    Rng rng(derive_seed(seed, 0x5e7, static_cast<uint64_t>(spec.variant)));
    state_ = PhysState{};
    state_.x = static_cast<double>(rng.uniform01());
    state_.v = 0.0;
    state_.t = 0;
    obs_ = Observation::repeated(std::make_shared<const Tensor>(render(state_, spec_)));
    done_ = false;
}

StepResult StriderEnv::step(ActionId action) {
    if (done_) raise(ErrorKind::logic, "step on a finished episode (t=200)");
    StepResult res;
    phys_step(state_, action, res.reward, res.done);
    obs_ = obs_.shifted(std::make_shared<const Tensor>(render(state_, spec_)));
    res.state = state_;
    res.obs = obs_;
    done_ = res.done;
    return res;
}

void write_ppm(const std::string& path, const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(0) != 3)
        raise(ErrorKind::logic, "write_ppm expects [3,H,W], got " + frame.shape_str());
    const int h = frame.dim(1), w = frame.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const float v = std::clamp(frame.at({ch, r, c}), 0.0f, 1.0f);
                out.put(static_cast<char>(std::lround(v * 255.0f)));
            }
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

}  // namespace usra
