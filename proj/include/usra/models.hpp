#pragma once

#include <cstdint>
#include <string>

#include "usra/graph.hpp"

namespace usra {

constexpr int kLatentDim = 64;
constexpr int kSpecificDim = 16;
constexpr int kGeneralDim = 48;
constexpr int kQHiddenDim = 128;
constexpr float kLogvarClamp = 10.0f;

struct ConvLayer {
    Parameter kernel;  // [O,C,3,3]
    Parameter bias;    // [O]
};

struct DenseLayer {
    Parameter weight;  // [I,O]
    Parameter bias;    // [O]
};

/// 4 stride-2 convs (9->32->32->64->64) + dense to the 64-d unified latent.
struct EncoderNet {
    ConvLayer c1, c2, c3, c4;
    DenseLayer fc;
};

/// Splits z into the deterministic domain-specific head and the variational
/// domain-general head (mu, logvar clamped to [-10,10]).
struct ProjectionNet {
    DenseLayer specific, general_mu, general_logvar;
};

/// Mirror of the encoder: dense 64->576, then 4 upsample+conv stages down to
/// 9 channels with a final sigmoid squash.
struct DecoderNet {
    DenseLayer fc;
    ConvLayer c1, c2, c3, c4;
};

struct QHeadNet {
    DenseLayer hidden, out;
    int input_dim = kLatentDim;
};

/// Which representation the Q-head consumes: the full unified latent
/// (usra/svea) or only the domain-general mean (the frozen-encoder baseline).
enum class QInput { full_z, general_mu };

struct ModelBundle {
    EncoderNet encoder;
    ProjectionNet projection;
    DecoderNet decoder;
    QHeadNet q_head;
    EncoderNet target_encoder;
    QHeadNet target_q_head;
    QInput q_input = QInput::full_z;

    /// Seeded fan-in-scaled uniform init; targets start as copies of the
    /// online nets.
    static ModelBundle init(uint64_t seed, QInput q_input = QInput::full_z);

    ParamSet online_params();   // encoder + projection + decoder + q_head
    ParamSet target_params();   // target_encoder + target_q_head
    ParamSet encoder_online();  // encoder only (mirrors target_encoder order)
    ParamSet q_head_online();
    ParamSet encoder_paramset();
    ParamSet projection_paramset();
    ParamSet decoder_paramset();
    ParamSet q_head_paramset();

    /// Hard copy theta -> psi.
    void sync_targets();
};

// ---- graph builders (trainable=true binds parameters for gradients) ----

/// obs [B,9,48,48] -> z [B,64]
Var encode(Graph& g, const EncoderNet& net, Var obs, bool trainable);

struct LatentVars {
    Var specific;        // [B,16]
    Var general_mu;      // [B,48]
    Var general_logvar;  // [B,48], clamped
};
LatentVars project_split(Graph& g, const ProjectionNet& net, Var z, bool trainable);

/// specific [B,16] + general [B,48] -> reconstruction [B,9,48,48] in [0,1]
Var decode(Graph& g, const DecoderNet& net, Var specific, Var general, bool trainable);

/// input [B,input_dim] -> q [B,5]
Var q_values(Graph& g, const QHeadNet& net, Var input, bool trainable);

/// mu + exp(0.5*logvar) * noise, with noise a fixed leaf.
Var reparam(Graph& g, Var mu, Var logvar, Var noise);

// ---- plain forward passes (no gradients) ----

/// Batched LatentState; rows are the batch.
struct LatentState {
    Tensor z;               // [B,64]
    Tensor specific;        // [B,16]
    Tensor general_mu;      // [B,48]
    Tensor general_logvar;  // [B,48]
};

Tensor encode_eval(const EncoderNet& net, const Tensor& obs_batch);
LatentState infer_latent(const ModelBundle& bundle, const Tensor& obs_batch);
/// Online Q-values routed per bundle.q_input: [B, 5].
Tensor q_values_eval(const ModelBundle& bundle, const Tensor& obs_batch);
/// Target-network Q-values (psi); the general_mu route goes through the
/// online projection, which is frozen whenever that route is in use.
Tensor target_q_values_eval(const ModelBundle& bundle, const Tensor& obs_batch);

/// psi <- (1-zeta) psi + zeta theta, elementwise over aligned sets.
void ema_update(ParamSet& target, const ParamSet& online, float zeta);

}  // namespace usra
