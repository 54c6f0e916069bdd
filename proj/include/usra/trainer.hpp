#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "usra/augment.hpp"
#include "usra/envsim.hpp"
#include "usra/losses.hpp"
#include "usra/models.hpp"
#include "usra/optim.hpp"
#include "usra/replay.hpp"

namespace usra {

enum class Method { usra, lusr, svea };

const char* method_name(Method m);
Method method_from_name(const std::string& name);  // error on unknown name

struct TrainConfig {
    float gamma = 0.99f;
    float zeta = 0.01f;   // target-network momentum
    float beta1 = 1.0f;
    float beta2 = 1.0f;
    float kl_weight = 1e-3f;
    float lr_base = 0.001f;
    int encoder_lr_divisor = 10;  // 1 = static lr, 10 = differential lr after pretraining
    int pretrain_frames = 1000;
    int pretrain_epochs = 40;
    int batch_lusr = 16;   // pair batches for the cycle losses
    int batch_svea = 128;  // transition batches for Q-consistency
    int episodes = 150;
    int episode_length = 200;
    int replay_capacity = 100000;
    int warmup_steps = 1000;
    int update_every = 2;
    float epsilon_start = 1.0f;
    float epsilon_final = 0.05f;
    float epsilon_fraction = 0.3f;  // portion of env steps the decay spans
    AugKind aug_kind = AugKind::randconv;
    Method method = Method::usra;
    uint64_t seed = 1;
    bool p2_cycle_losses = false;  // keep the cycle terms during agent learning

    /// Raises a config error naming the offending field.
    void validate() const;
    LossWeights loss_weights() const { return {beta1, method == Method::lusr ? 0.0f : beta2, kl_weight}; }
};

/// Random-policy rollout on the source domain; observations keep their
/// episode id so same-domain pairs can be formed later.
struct FrameDataset {
    std::vector<Observation> observations;
    std::vector<int> episode_ids;
    std::vector<Transition> transitions;
};

FrameDataset collect_random(const DomainSpec& spec, int n_frames, uint64_t seed);

/// One per-episode (phase 2) or per-epoch (phase 1) metrics record. The
/// wall_time_s column of the CSV schema is pinned to 0 so reruns with equal
/// seeds stay byte-identical; real timings live in the run manifest.
struct MetricsRow {
    int episode = 0;
    int phase = 0;
    float train_return = 0.0f;
    float loss_forward = 0.0f;
    float loss_reverse = 0.0f;
    float loss_svea = 0.0f;
    float epsilon = 0.0f;
    long env_steps = 0;
};

extern const char* const kMetricsHeader;

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);  // config error on bad file

struct PretrainResult {
    ModelBundle bundle;
    std::vector<MetricsRow> log;  // one row per epoch, phase 1
};

/// Cycle + (for usra) Q-consistency pretraining on random frames. Errors for
/// the svea method, which has no pretraining phase.
PretrainResult pretrain_phase1(const FrameDataset& dataset, const TrainConfig& config);

struct TrainResult {
    std::vector<MetricsRow> log;  // one row per episode, phase 2
};

/// Epsilon-greedy Q-learning on the train domain. usra: Q-consistency loss
/// with augmented branches and the encoder at lr_base/encoder_lr_divisor.
/// lusr: encoder/projection/decoder frozen, plain TD loss on the
/// domain-general path. svea: same loss as usra from a fresh bundle, uniform
/// lr. The bundle is updated in place.
TrainResult finetune_phase2(ModelBundle& bundle, const TrainConfig& config);

/// Greedy action with lowest-index tie-break; explores uniformly with
/// probability epsilon.
ActionId epsilon_greedy(const Tensor& q, float epsilon, uint64_t seed);

float epsilon_at(const TrainConfig& config, long env_step);

/// Learning rates for phase 2 under the given method/config (exposed so the
/// rate contract is testable).
LrMap phase2_lr_map(const TrainConfig& config);

}  // namespace usra
