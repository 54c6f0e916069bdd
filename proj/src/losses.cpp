#include "usra/losses.hpp"

#include <algorithm>
#include <cmath>

#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

CycleOps cycle_ops(const ModelBundle& bundle, TrainFlags flags) {
    CycleOps ops;
    ops.encode = [&bundle, flags](Graph& g, Var obs) { return encode(g, bundle.encoder, obs, flags.encoder); };
    ops.project = [&bundle, flags](Graph& g, Var z) {
        return project_split(g, bundle.projection, z, flags.projection);
    };
    ops.decode = [&bundle, flags](Graph& g, Var specific, Var general) {
        return decode(g, bundle.decoder, specific, general, flags.decoder);
    };
    return ops;
}

QOps q_ops(const ModelBundle& bundle, TrainFlags flags) {
    QOps ops;
    ops.q_of_obs = [&bundle, flags](Graph& g, Var obs) {
        Var z = encode(g, bundle.encoder, obs, flags.encoder);
        Var qin = z;
        if (bundle.q_input == QInput::general_mu)
            qin = project_split(g, bundle.projection, z, flags.projection).general_mu;
        return q_values(g, bundle.q_head, qin, flags.q_head);
    };
    ops.target_q = [&bundle](const Tensor& obs) { return target_q_values_eval(bundle, obs); };
    return ops;
}

Var normal_noise_leaf(Graph& g, std::vector<int> shape, uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(derive_seed(seed, 0x4015e));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return g.leaf(std::move(t));
}

namespace {

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar), as a graph expression
Var kl_sum_g(Graph& g, Var mu, Var logvar) {
    Var t = g.add(g.square(mu), g.exp(logvar));
    t = g.sub(t, logvar);
    t = g.add_scalar(t, -1.0f);
    return g.scale(g.sum(t), 0.5f);
}

void require_nonempty(int n, const char* what) {
    if (n <= 0) raise(ErrorKind::logic, std::string(what) + ": empty batch");
}

// plain row-wise concatenation of two equally shaped stacks
Tensor concat2(const Tensor& a, const Tensor& b) {
    std::vector<int> shape = a.shape();
    shape[0] += b.dim(0);
    Tensor out = Tensor::uninit(std::move(shape));
    std::memcpy(out.data(), a.data(), a.size() * sizeof(float));
    std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(float));
    return out;
}

}  // namespace

Var forward_cycle_loss_g(Graph& g, const PairBatch& batch, const CycleOps& ops, float kl_weight,
                         uint64_t noise_seed) {
    const int b = batch.size();
    require_nonempty(b, "forward_cycle_loss");
    // both pair elements ride in one batch of 2B rows (s1 first)
    const Tensor s_all = concat2(batch.s1, batch.s2);
    LatentVars lat = ops.project(g, ops.encode(g, g.leaf(s_all)));

    Var gen = reparam(g, lat.general_mu, lat.general_logvar,
                      normal_noise_leaf(g, {2 * b, kGeneralDim}, noise_seed));

    // swap the domain-specific halves before reconstructing
    Var spec_swapped =
        g.concat_rows(g.slice_rows(lat.specific, b, 2 * b), g.slice_rows(lat.specific, 0, b));
    Var recon = ops.decode(g, spec_swapped, gen);
    Var mse = g.mse_against(recon, s_all);
    if (kl_weight == 0.0f) return mse;

    Var kl = g.scale(kl_sum_g(g, lat.general_mu, lat.general_logvar), 1.0f / static_cast<float>(2 * b));
    return g.add(mse, g.scale(kl, kl_weight));
}

Var reverse_cycle_loss_g(Graph& g, const PairBatch& batch, const CycleOps& ops, uint64_t noise_seed) {
    const int b = batch.size();
    require_nonempty(b, "reverse_cycle_loss");
    const Tensor s_all = concat2(batch.s1, batch.s2);
    Var spec = ops.project(g, ops.encode(g, g.leaf(s_all))).specific;

    // one random general latent shared within each pair
    Var shared = normal_noise_leaf(g, {b, kGeneralDim}, noise_seed);
    Var dec = ops.decode(g, spec, g.concat_rows(shared, shared));
    Var mu = ops.project(g, ops.encode(g, dec)).general_mu;
    return g.mean(g.abs(g.sub(g.slice_rows(mu, 0, b), g.slice_rows(mu, b, 2 * b))));
}

std::vector<float> td_target(const std::vector<float>& rewards, const Tensor& next_obs,
                             const std::vector<uint8_t>& done, const QOps& ops, float gamma) {
    const int b = static_cast<int>(rewards.size());
    require_nonempty(b, "td_target");
    const Tensor q = ops.target_q(next_obs);
    if (q.rank() != 2 || q.dim(0) != b) raise(ErrorKind::logic, "td_target: bad target q shape " + q.shape_str());
    const int actions = q.dim(1);
    std::vector<float> out(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        float best = q[static_cast<std::size_t>(i) * actions];
        for (int a = 1; a < actions; ++a)
            best = std::max(best, q[static_cast<std::size_t>(i) * actions + a]);
        const float mask = done[static_cast<std::size_t>(i)] ? 0.0f : 1.0f;
        out[static_cast<std::size_t>(i)] = rewards[static_cast<std::size_t>(i)] + gamma * mask * best;
    }
    return out;
}

namespace {

Var branch_sq_err(Graph& g, Var q_pred, const std::vector<int>& actions, Var target) {
    return g.square(g.sub(g.gather_cols(q_pred, actions), target));
}

}  // namespace

Var svea_loss_g(Graph& g, const TransitionBatch& batch, const Tensor& aug_obs, const QOps& ops, float gamma,
                TdMode td_mode) {
    const int b = batch.size();
    require_nonempty(b, "svea_loss");
    if (!aug_obs.same_shape(batch.obs))
        raise(ErrorKind::logic, "svea_loss: augmented batch shape " + aug_obs.shape_str() + " vs " +
                                    batch.obs.shape_str());
    const std::vector<float> tgt = td_mode == TdMode::max_action
                                       ? td_target(batch.rewards, batch.next_obs, batch.done, ops, gamma)
                                       : batch.rewards;

    // clean and augmented branches share one forward pass of 2B rows; the
    // mean over 2B rows is half the sum of the two branch means
    std::vector<float> tgt2(tgt);
    tgt2.insert(tgt2.end(), tgt.begin(), tgt.end());
    std::vector<int> actions2(batch.actions);
    actions2.insert(actions2.end(), batch.actions.begin(), batch.actions.end());
    Var target = g.leaf(Tensor({2 * b}, std::move(tgt2)));
    Var q_all = ops.q_of_obs(g, g.leaf(concat2(batch.obs, aug_obs)));
    return g.scale(g.mean(branch_sq_err(g, q_all, actions2, target)), 2.0f);
}

Var svea_loss_g(Graph& g, const TransitionBatch& batch, AugKind aug, const QOps& ops, float gamma,
                uint64_t seed, TdMode td_mode) {
    return svea_loss_g(g, batch, augment_batch(aug, batch.obs, seed), ops, gamma, td_mode);
}

Var td_loss_g(Graph& g, const TransitionBatch& batch, const QOps& ops, float gamma) {
    const int b = batch.size();
    require_nonempty(b, "td_loss");
    const std::vector<float> tgt = td_target(batch.rewards, batch.next_obs, batch.done, ops, gamma);
    Var target = g.leaf(Tensor({b}, std::vector<float>(tgt)));
    return g.mean(branch_sq_err(g, ops.q_of_obs(g, g.leaf(batch.obs)), batch.actions, target));
}

float usra_combine(float forward, float reverse, float svea, const LossWeights& weights) {
    if (weights.beta1 < 0.0f || weights.beta2 < 0.0f)
        raise(ErrorKind::logic, "usra_loss: weights must be non-negative");
    return weights.beta1 * (forward + reverse) + weights.beta2 * svea;
}

UsraLossVars usra_loss_g(Graph& g, const PairBatch& pair_batch, const TransitionBatch& transition_batch,
                         const LossWeights& weights, AugKind aug, const CycleOps& cops, const QOps& qops,
                         float gamma, uint64_t seed, TdMode td_mode) {
    if (weights.beta1 < 0.0f || weights.beta2 < 0.0f || weights.kl_weight < 0.0f)
        raise(ErrorKind::logic, "usra_loss: weights must be non-negative");

    UsraLossVars out;
    Var total = g.leaf(Tensor::scalar(0.0f));
    if (weights.beta1 > 0.0f) {
        Var fwd = forward_cycle_loss_g(g, pair_batch, cops, weights.kl_weight, derive_seed(seed, 0xf0));
        PairBatch rev{pair_batch.s1, augment_batch(aug, pair_batch.s1, derive_seed(seed, 0xa1))};
        Var rev_loss = reverse_cycle_loss_g(g, rev, cops, derive_seed(seed, 0xf1));
        out.forward = g.scalar_value(fwd);
        out.reverse = g.scalar_value(rev_loss);
        total = g.add(total, g.scale(g.add(fwd, rev_loss), weights.beta1));
    }
    if (weights.beta2 > 0.0f) {
        Var svea = svea_loss_g(g, transition_batch, aug, qops, gamma, derive_seed(seed, 0xf2), td_mode);
        out.svea = g.scalar_value(svea);
        total = g.add(total, g.scale(svea, weights.beta2));
    }
    out.total = total;
    return out;
}

Tensor augment_batch(AugKind kind, const Tensor& obs_batch, uint64_t seed) {
    if (obs_batch.rank() != 4) raise(ErrorKind::logic, "augment_batch expects [B,C,H,W], got " + obs_batch.shape_str());
    const int b = obs_batch.dim(0);
    const std::size_t plane = obs_batch.size() / static_cast<std::size_t>(b);
    Tensor out(obs_batch.shape());
    for (int i = 0; i < b; ++i) {
        Tensor row({obs_batch.dim(1), obs_batch.dim(2), obs_batch.dim(3)},
                   std::vector<float>(obs_batch.data() + plane * i, obs_batch.data() + plane * (i + 1)));
        Tensor res = augment(kind, row, derive_seed(seed, static_cast<uint64_t>(i)));
        std::copy_n(res.data(), plane, out.data() + plane * i);
    }
    return out;
}

}  // namespace usra
