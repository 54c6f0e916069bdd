#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "usra/augment.hpp"
#include "usra/models.hpp"

namespace usra {

struct LossWeights {
    float beta1 = 1.0f;
    float beta2 = 1.0f;
    float kl_weight = 1e-3f;
};

/// Same-domain (forward cycle) or cross-domain (reverse cycle) pairs,
/// stacked row-wise.
struct PairBatch {
    Tensor s1;  // [B,9,48,48]
    Tensor s2;  // [B,9,48,48]
    int size() const { return s1.empty() ? 0 : s1.dim(0); }
};

struct TransitionBatch {
    Tensor obs;       // [B,9,48,48]
    Tensor next_obs;  // [B,9,48,48]
    std::vector<int> actions;
    std::vector<float> rewards;
    std::vector<uint8_t> done;
    int size() const { return static_cast<int>(actions.size()); }
};

/// Which networks bind as trainable parameters when losses are built.
struct TrainFlags {
    bool encoder = true;
    bool projection = true;
    bool decoder = true;
    bool q_head = true;
};

/// The network surface the cycle losses run on. Tests may substitute stubs;
/// training uses cycle_ops(bundle, flags).
struct CycleOps {
    std::function<Var(Graph&, Var obs)> encode;                      // [B,9,48,48] -> [B,64]
    std::function<LatentVars(Graph&, Var z)> project;                // -> (specific, mu, logvar)
    std::function<Var(Graph&, Var specific, Var general)> decode;    // -> [B,9,48,48]
};
CycleOps cycle_ops(const ModelBundle& bundle, TrainFlags flags);

struct QOps {
    std::function<Var(Graph&, Var obs)> q_of_obs;                    // online path, [B,5]
    std::function<Tensor(const Tensor& obs)> target_q;               // no-grad target path, [B,5]
};
QOps q_ops(const ModelBundle& bundle, TrainFlags flags);

// ---- loss graph builders ----

/// Swapped-specific reconstruction: Dec(s2_specific, s1_general) ~ s1 and
/// vice versa; mean pixel squared error over both reconstructions plus
/// kl_weight * KL(general posterior || N(0,1)), averaged over the batch.
Var forward_cycle_loss_g(Graph& g, const PairBatch& batch, const CycleOps& ops, float kl_weight,
                         uint64_t noise_seed);

/// Shared random general latent decoded with each pair's specific embedding,
/// re-encoded; mean L1 distance between the two re-encoded general means.
Var reverse_cycle_loss_g(Graph& g, const PairBatch& batch, const CycleOps& ops, uint64_t noise_seed);

/// Which target the Q-consistency branches regress on. Agent learning uses
/// the bootstrapped max; pretraining anchors on the observed reward alone.
/// A discounted bootstrap cannot settle during the short pretraining phase
/// (the value scale keeps expanding toward the random-policy value, so the
/// residual grows), while the reward target is stationary and converges.
enum class TdMode { max_action, reward_only };

/// r + gamma * (1-done) * max_a target_q(next_obs); no gradients flow.
std::vector<float> td_target(const std::vector<float>& rewards, const Tensor& next_obs,
                             const std::vector<uint8_t>& done, const QOps& ops, float gamma);

/// Q-consistency on a clean and a pre-augmented branch against the shared
/// clean TD target: mean over the batch of the two squared errors summed.
Var svea_loss_g(Graph& g, const TransitionBatch& batch, const Tensor& aug_obs, const QOps& ops, float gamma,
                TdMode td_mode = TdMode::max_action);
/// Samples one augmentation per transition (seed stream per row).
Var svea_loss_g(Graph& g, const TransitionBatch& batch, AugKind aug, const QOps& ops, float gamma,
                uint64_t seed, TdMode td_mode = TdMode::max_action);

/// Plain one-branch TD regression (the frozen-encoder baseline's update).
Var td_loss_g(Graph& g, const TransitionBatch& batch, const QOps& ops, float gamma);

struct UsraLossVars {
    Var total;
    // component values for logging (0 when the weighted term was skipped)
    float forward = 0.0f;
    float reverse = 0.0f;
    float svea = 0.0f;
};

/// The combined objective over already-computed components:
/// beta1 * (forward + reverse) + beta2 * svea.
float usra_combine(float forward, float reverse, float svea, const LossWeights& weights);

/// beta1 * (forward + reverse) + beta2 * svea. Reverse-cycle pairs are
/// (s1, augmented s1) built from the forward pair batch. Terms with a zero
/// weight are skipped and logged as exactly 0.
UsraLossVars usra_loss_g(Graph& g, const PairBatch& pair_batch, const TransitionBatch& transition_batch,
                         const LossWeights& weights, AugKind aug, const CycleOps& cops, const QOps& qops,
                         float gamma, uint64_t seed, TdMode td_mode = TdMode::max_action);

/// Per-row augmentation of a stacked batch; row i uses stream (seed, i).
Tensor augment_batch(AugKind kind, const Tensor& obs_batch, uint64_t seed);

/// N(0,1) leaf of the given shape, deterministic in seed.
Var normal_noise_leaf(Graph& g, std::vector<int> shape, uint64_t seed);

}  // namespace usra
