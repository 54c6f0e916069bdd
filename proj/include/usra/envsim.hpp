#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "usra/tensor.hpp"

namespace usra {

// StriderWorld: a deterministic 48x48 pixel-control task. The agent pushes
// itself along a wrapping 1-D track; the camera tracks the agent, so motion is
// visible as background scroll (and a small velocity marker) across the
// 3-frame stack.

constexpr int kFrameSize = 48;
constexpr int kFrameStack = 3;
constexpr int kActionCount = 5;
constexpr int kEpisodeLength = 200;
constexpr int kObsChannels = 9;  // 3 stacked RGB frames

enum class Variant { train, color_easy, color_hard, video_easy, video_hard };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // error on unknown name
const std::array<Variant, 5>& all_variants();

struct PhysState {
    double x = 0.0;  // position, wraps modulo 1
    double v = 0.0;  // velocity in [-1,1]
    int t = 0;       // step index
};

/// Discrete action index 0..4 mapped onto symmetric forces.
struct ActionId {
    int index = 0;
    float force() const;
    static ActionId from_index(int i);  // error outside 0..4
};

struct DomainSpec {
    Variant variant = Variant::train;
    std::array<float, 3> background_color{};
    std::array<float, 3> platform_color{};
    std::array<float, 3> agent_color{};
    uint32_t pattern_seed = 0;
    float pattern_speed = 0.0f;
};

/// 3 stacked RGB frames, newest last. Frames are shared, immutable [3,48,48]
/// tensors so replay storage does not duplicate the overlap between
/// consecutive observations.
class Observation {
public:
    using FramePtr = std::shared_ptr<const Tensor>;

    Observation() = default;
    static Observation repeated(FramePtr frame);
    /// Drops the oldest frame and appends the new one.
    Observation shifted(FramePtr next) const;

    const Tensor& frame(int i) const { return *frames_[static_cast<std::size_t>(i)]; }
    /// Materializes the [9,48,48] stack.
    Tensor stacked() const;
    bool valid() const { return frames_[0] && frames_[1] && frames_[2]; }
    bool same_frames(const Observation& other) const;

private:
    std::array<FramePtr, 3> frames_;
};

struct Transition {
    Observation obs;
    ActionId action;
    float reward = 0.0f;
    Observation next_obs;
    bool done = false;
};

DomainSpec make_domain(Variant variant, uint64_t seed);

/// Pure renderer: [3,48,48], values in [0,1].
Tensor render(const PhysState& state, const DomainSpec& spec);

/// One dynamics update (no rendering): v' = clamp(0.95 v + 0.1 f, -1, 1),
/// x' = (x + 0.05 v') mod 1, reward = v'. Errors if state.t is already at the
/// episode end.
void phys_step(PhysState& state, ActionId action, float& reward, bool& done);

struct StepResult {
    PhysState state;
    Observation obs;
    float reward = 0.0f;
    bool done = false;
};

/// Stateful wrapper holding the frame stack between steps.
class StriderEnv {
public:
    StriderEnv() = default;

    /// x ~ uniform[0,1), v = 0, t = 0; all three stacked frames identical.
    void reset(const DomainSpec& spec, uint64_t seed);
    StepResult step(ActionId action);

    const PhysState& state() const { return state_; }
    const Observation& observation() const { return obs_; }
    const DomainSpec& spec() const { return spec_; }
    bool done() const { return done_; }

private:
    DomainSpec spec_;
    PhysState state_;
    Observation obs_;
    bool done_ = true;
};

/// 8-bit binary PPM (P6) dump of one [3,48,48] frame, values round(v*255).
void write_ppm(const std::string& path, const Tensor& frame);

}  // namespace usra
