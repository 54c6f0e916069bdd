#include "usra/gradsuite.hpp"

#include "usra/evalharness.hpp"
#include "usra/gradcheck.hpp"
#include "usra/losses.hpp"
#include "usra/rng.hpp"
#include "usra/trainer.hpp"

namespace usra {

GradSuiteReport run_grad_suite(uint64_t seed, int probes_per_network, float eps, float tol) {
    ModelBundle bundle = ModelBundle::init(seed, QInput::full_z);
    const CycleOps cops = cycle_ops(bundle, TrainFlags{});
    const QOps qops = q_ops(bundle, TrainFlags{});

    // small fixed batches of real frames keep the losses representative
    const FrameDataset ds = collect_random(make_domain(Variant::train, seed), 12, derive_seed(seed, 0x9d));
    std::vector<const Observation*> a{&ds.observations[0], &ds.observations[4]};
    std::vector<const Observation*> b{&ds.observations[2], &ds.observations[6]};
    const PairBatch pairs{stack_observations(a), stack_observations(b)};
    const PairBatch rev_pairs{pairs.s1, augment_batch(AugKind::randconv, pairs.s1, derive_seed(seed, 0xa9))};
    TransitionBatch trans;
    {
        std::vector<const Observation*> obs{&ds.transitions[0].obs, &ds.transitions[5].obs};
        std::vector<const Observation*> next{&ds.transitions[0].next_obs, &ds.transitions[5].next_obs};
        trans.obs = stack_observations(obs);
        trans.next_obs = stack_observations(next);
        trans.actions = {ds.transitions[0].action.index, ds.transitions[5].action.index};
        trans.rewards = {ds.transitions[0].reward, ds.transitions[5].reward};
        trans.done = {0, 0};
    }

    const float kl_weight = 1e-3f;
    const float gamma = 0.99f;
    const LossWeights weights{1.0f, 1.0f, kl_weight};

    const LossBuilder forward_loss = [&](Graph& g) {
        return forward_cycle_loss_g(g, pairs, cops, kl_weight, derive_seed(seed, 1));
    };
    const LossBuilder reverse_loss = [&](Graph& g) {
        return reverse_cycle_loss_g(g, rev_pairs, cops, derive_seed(seed, 2));
    };
    const LossBuilder svea_loss = [&](Graph& g) {
        return svea_loss_g(g, trans, AugKind::randconv, qops, gamma, derive_seed(seed, 3));
    };
    const LossBuilder usra_loss = [&](Graph& g) {
        return usra_loss_g(g, pairs, trans, weights, AugKind::randconv, cops, qops, gamma, derive_seed(seed, 4))
            .total;
    };

    struct Case {
        const char* loss;
        const char* network;
        const LossBuilder* builder;
        ParamSet params;
    };
    std::vector<Case> cases;
    auto add = [&](const char* loss, const LossBuilder* b, const char* net, ParamSet ps) {
        cases.push_back(Case{loss, net, b, std::move(ps)});
    };
    add("forward_cycle", &forward_loss, "encoder", bundle.encoder_paramset());
    add("forward_cycle", &forward_loss, "projection", bundle.projection_paramset());
    add("forward_cycle", &forward_loss, "decoder", bundle.decoder_paramset());
    add("reverse_cycle", &reverse_loss, "encoder", bundle.encoder_paramset());
    add("reverse_cycle", &reverse_loss, "projection", bundle.projection_paramset());
    add("reverse_cycle", &reverse_loss, "decoder", bundle.decoder_paramset());
    add("svea", &svea_loss, "encoder", bundle.encoder_paramset());
    add("svea", &svea_loss, "q_head", bundle.q_head_paramset());
    add("usra_total", &usra_loss, "encoder", bundle.encoder_paramset());
    add("usra_total", &usra_loss, "projection", bundle.projection_paramset());
    add("usra_total", &usra_loss, "decoder", bundle.decoder_paramset());
    add("usra_total", &usra_loss, "q_head", bundle.q_head_paramset());

    GradSuiteReport report;
    report.pass = true;
    for (Case& c : cases) {
        const GradCheckReport r = grad_check(std::string(c.loss) + "/" + c.network, c.params, *c.builder,
                                             probes_per_network, eps, tol, derive_seed(seed, 0x6c));
        report.entries.push_back({c.loss, c.network, r.max_rel_err, r.pass});
        report.pass = report.pass && r.pass;
    }
    return report;
}

}  // namespace usra
