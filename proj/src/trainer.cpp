#include "usra/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "usra/error.hpp"
#include "usra/optim.hpp"
#include "usra/rng.hpp"

namespace usra {

const char* method_name(Method m) {
    switch (m) {
        case Method::usra: return "usra";
        case Method::lusr: return "lusr";
        case Method::svea: return "svea";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "usra") return Method::usra;
    if (name == "lusr") return Method::lusr;
    if (name == "svea") return Method::svea;
    raise(ErrorKind::config, "unknown method '" + name + "' (expected usra, lusr or svea)");
}

void TrainConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        raise(ErrorKind::config, "config: " + field + " " + why);
    };
    if (!(gamma > 0.0f && gamma < 1.0f)) bad("gamma", "must be in (0,1)");
    if (!(zeta >= 0.0f && zeta <= 1.0f)) bad("zeta", "must be in [0,1]");
    if (beta1 < 0.0f) bad("beta1", "must be >= 0");
    if (beta2 < 0.0f) bad("beta2", "must be >= 0");
    if (kl_weight < 0.0f) bad("kl_weight", "must be >= 0");
    if (!(lr_base > 0.0f)) bad("lr_base", "must be > 0");
    if (encoder_lr_divisor != 1 && encoder_lr_divisor != 10) bad("encoder_lr_divisor", "must be 1 or 10");
    if (pretrain_frames < 2) bad("pretrain_frames", "must be >= 2");
    if (pretrain_epochs < 1) bad("pretrain_epochs", "must be >= 1");
    if (batch_lusr < 1) bad("batch_lusr", "must be >= 1");
    if (batch_svea < 1) bad("batch_svea", "must be >= 1");
    if (episodes < 1) bad("episodes", "must be >= 1");
    if (episode_length < 1 || episode_length > kEpisodeLength)
        bad("episode_length", "must be in [1," + std::to_string(kEpisodeLength) + "]");
    if (replay_capacity < 1) bad("replay_capacity", "must be >= 1");
    if (warmup_steps < 0) bad("warmup_steps", "must be >= 0");
    if (update_every < 1) bad("update_every", "must be >= 1");
    if (!(epsilon_start >= 0.0f && epsilon_start <= 1.0f)) bad("epsilon_start", "must be in [0,1]");
    if (!(epsilon_final >= 0.0f && epsilon_final <= 1.0f)) bad("epsilon_final", "must be in [0,1]");
    if (!(epsilon_fraction > 0.0f && epsilon_fraction <= 1.0f)) bad("epsilon_fraction", "must be in (0,1]");
}

FrameDataset collect_random(const DomainSpec& spec, int n_frames, uint64_t seed) {
    if (n_frames < 2) raise(ErrorKind::logic, "collect_random needs n_frames >= 2");
    FrameDataset ds;
    Rng action_rng(derive_seed(seed, 0xc011ec7));
    StriderEnv env;
    int episode = 0;
    while (static_cast<int>(ds.observations.size()) < n_frames) {
        env.reset(spec, derive_seed(seed, 0xe9150de, static_cast<uint64_t>(episode)));
        ds.observations.push_back(env.observation());
        ds.episode_ids.push_back(episode);
        while (!env.done() && static_cast<int>(ds.observations.size()) < n_frames) {
            const ActionId a = ActionId::from_index(action_rng.uniform_int(kActionCount));
            const Observation prev = env.observation();
            const StepResult r = env.step(a);
            ds.observations.push_back(r.obs);
            ds.episode_ids.push_back(episode);
            ds.transitions.push_back(Transition{prev, a, r.reward, r.obs, r.done});
        }
        ++episode;
    }
    return ds;
}

namespace {

// Same-domain pairs for the forward cycle: two observations from one
// episode, either as-is or viewed through one shared augmentation (an
// augmented surrogate domain). The surrogate pairs force the specific head
// to carry the synthetic domain identity; without them every specific in
// the single-source dataset is alike and the decoder learns to ignore it.
PairBatch sample_same_episode_pairs(const FrameDataset& ds, int batch, AugKind aug, uint64_t seed) {
    // index ranges per episode; observations are stored episode-contiguous
    std::vector<std::pair<int, int>> spans;  // [begin, end)
    for (int i = 0; i < static_cast<int>(ds.observations.size()); ++i) {
        if (spans.empty() || ds.episode_ids[static_cast<std::size_t>(i)] !=
                                 ds.episode_ids[static_cast<std::size_t>(spans.back().first)])
            spans.emplace_back(i, i + 1);
        else
            spans.back().second = i + 1;
    }
    Rng rng(derive_seed(seed, 0x9a12));
    PairBatch out;
    out.s1 = Tensor::uninit({batch, kObsChannels, kFrameSize, kFrameSize});
    out.s2 = Tensor::uninit({batch, kObsChannels, kFrameSize, kFrameSize});
    const std::size_t plane = static_cast<std::size_t>(kObsChannels) * kFrameSize * kFrameSize;
    for (int k = 0; k < batch; ++k) {
        const auto& span = spans[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spans.size())))];
        const int len = span.second - span.first;
        const int i = span.first + rng.uniform_int(len);
        int j = i;
        if (len > 1)
            while (j == i) j = span.first + rng.uniform_int(len);
        Tensor a = ds.observations[static_cast<std::size_t>(i)].stacked();
        Tensor b = ds.observations[static_cast<std::size_t>(j)].stacked();
        if (rng.uniform01() < 0.5f) {
            const AugmentOp op = sample_aug(aug, derive_seed(seed, 0x5d0, static_cast<uint64_t>(k)));
            a = apply_aug(op, a);
            b = apply_aug(op, b);
        }
        std::copy_n(a.data(), plane, out.s1.data() + plane * k);
        std::copy_n(b.data(), plane, out.s2.data() + plane * k);
    }
    return out;
}

TransitionBatch sample_transitions(const FrameDataset& ds, int batch, uint64_t seed) {
    const int n = static_cast<int>(ds.transitions.size());
    if (batch > n)
        raise(ErrorKind::logic,
              "pretraining needs " + std::to_string(batch) + " transitions, dataset has " + std::to_string(n));
    Rng rng(derive_seed(seed, 0x7a2));
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    TransitionBatch out;
    std::vector<const Observation*> obs, next_obs;
    for (int k = 0; k < batch; ++k) {
        const int j = k + rng.uniform_int(n - k);
        std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
        const Transition& t = ds.transitions[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
        obs.push_back(&t.obs);
        next_obs.push_back(&t.next_obs);
        out.actions.push_back(t.action.index);
        out.rewards.push_back(t.reward);
        out.done.push_back(t.done ? 1 : 0);
    }
    out.obs = stack_observations(obs);
    out.next_obs = stack_observations(next_obs);
    return out;
}

}  // namespace

PretrainResult pretrain_phase1(const FrameDataset& dataset, const TrainConfig& config) {
    config.validate();
    if (config.method == Method::svea)
        raise(ErrorKind::logic, "svea has no pretraining phase");
    if (dataset.observations.empty()) raise(ErrorKind::logic, "pretrain_phase1: empty dataset");

    PretrainResult result{
        ModelBundle::init(config.seed, config.method == Method::lusr ? QInput::general_mu : QInput::full_z), {}};
    ModelBundle& bundle = result.bundle;
    ParamSet online = bundle.online_params();
    ParamSet targets = bundle.target_params();
    ParamSet online_mirror = bundle.encoder_online();
    Optimizer opt(LrMap::uniform(config.lr_base));
    const LossWeights weights = config.loss_weights();
    CycleOps cops = cycle_ops(bundle, TrainFlags{});
    QOps qops = q_ops(bundle, TrainFlags{});

    const int steps_per_epoch =
        std::max(1, static_cast<int>(dataset.observations.size()) / config.batch_lusr);
    for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
        double sum_total = 0, sum_fwd = 0, sum_rev = 0, sum_svea = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            const uint64_t step_seed = derive_seed(config.seed, static_cast<uint64_t>(epoch) * 100003u, step);
            const PairBatch pairs =
                sample_same_episode_pairs(dataset, config.batch_lusr, config.aug_kind, step_seed);
            TransitionBatch trans;
            if (weights.beta2 > 0.0f) trans = sample_transitions(dataset, config.batch_svea, step_seed);
            Graph g;
            // the pretraining Q-term anchors on observed rewards; the
            // bootstrapped target takes over in the agent-learning phase
            UsraLossVars loss = usra_loss_g(g, pairs, trans, weights, config.aug_kind, cops, qops, config.gamma,
                                            derive_seed(step_seed, 0x105), TdMode::reward_only);
            online.zero_grads();
            g.backward(loss.total);
            opt.step(online);
            ema_update(targets, online_mirror, config.zeta);
            sum_total += static_cast<double>(g.scalar_value(loss.total));
            sum_fwd += static_cast<double>(loss.forward);
            sum_rev += static_cast<double>(loss.reverse);
            sum_svea += static_cast<double>(loss.svea);
        }
        MetricsRow row;
        row.episode = epoch + 1;
        row.phase = 1;
        row.loss_forward = static_cast<float>(sum_fwd / steps_per_epoch);
        row.loss_reverse = static_cast<float>(sum_rev / steps_per_epoch);
        row.loss_svea = static_cast<float>(sum_svea / steps_per_epoch);
        row.env_steps = static_cast<long>(dataset.observations.size());
        result.log.push_back(row);
    }
    return result;
}

float epsilon_at(const TrainConfig& config, long env_step) {
    const double total = static_cast<double>(config.episodes) * config.episode_length;
    const double span = std::max(1.0, total * static_cast<double>(config.epsilon_fraction));
    const double frac = std::min(1.0, static_cast<double>(env_step) / span);
    return static_cast<float>(config.epsilon_start + (config.epsilon_final - config.epsilon_start) * frac);
}

ActionId epsilon_greedy(const Tensor& q, float epsilon, uint64_t seed) {
    if (epsilon < 0.0f || epsilon > 1.0f) raise(ErrorKind::logic, "epsilon must be in [0,1]");
    const std::size_t n = q.size();
    if (n != kActionCount) raise(ErrorKind::logic, "epsilon_greedy expects 5 q-values, got " + q.shape_str());
    Rng rng(derive_seed(seed, 0xe6));
    if (rng.uniform01() < epsilon) return ActionId::from_index(rng.uniform_int(kActionCount));
    int best = 0;
    for (int a = 1; a < kActionCount; ++a)
        if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
    return ActionId::from_index(best);
}

LrMap phase2_lr_map(const TrainConfig& config) {
    if (config.method == Method::usra)
        return LrMap{{{"", config.lr_base},
                      {"encoder.", config.lr_base / static_cast<float>(config.encoder_lr_divisor)}}};
    return LrMap::uniform(config.lr_base);
}

TrainResult finetune_phase2(ModelBundle& bundle, const TrainConfig& config) {
    config.validate();
    const bool frozen_backbone = config.method == Method::lusr;

    ParamSet trained;  // what the optimizer updates
    if (frozen_backbone) {
        trained = bundle.q_head_online();
    } else if (config.p2_cycle_losses) {
        trained = bundle.online_params();
    } else {
        trained = bundle.encoder_online();  // encoder + q_head
    }
    ParamSet targets = bundle.target_params();
    ParamSet online_mirror = bundle.encoder_online();
    Optimizer opt(phase2_lr_map(config));
    TrainFlags flags;
    flags.encoder = !frozen_backbone;
    flags.projection = !frozen_backbone;
    flags.decoder = !frozen_backbone;
    QOps qops = q_ops(bundle, flags);
    CycleOps cops = cycle_ops(bundle, flags);

    ReplayBuffer replay(static_cast<std::size_t>(config.replay_capacity));
    const DomainSpec spec = make_domain(Variant::train, config.seed);
    StriderEnv env;

    TrainResult result;
    long env_steps = 0;
    for (int episode = 0; episode < config.episodes; ++episode) {
        env.reset(spec, derive_seed(config.seed, 0xe915, static_cast<uint64_t>(episode)));
        double ep_return = 0;
        double sum_fwd = 0, sum_rev = 0, sum_svea = 0;
        int updates = 0;
        float eps = epsilon_at(config, env_steps);
        for (int t = 0; t < config.episode_length; ++t) {
            eps = epsilon_at(config, env_steps);
            const Observation prev = env.observation();
            Tensor obs1 = prev.stacked();
            Tensor q = q_values_eval(bundle, Tensor({1, kObsChannels, kFrameSize, kFrameSize},
                                                    std::vector<float>(obs1.data(), obs1.data() + obs1.size())));
            const ActionId a =
                epsilon_greedy(Tensor({kActionCount}, std::vector<float>(q.data(), q.data() + q.size())), eps,
                               derive_seed(config.seed, 0xac7, static_cast<uint64_t>(env_steps)));
            const StepResult r = env.step(a);
            replay.push(Transition{prev, a, r.reward, r.obs, r.done});
            ep_return += static_cast<double>(r.reward);
            ++env_steps;

            const bool warm = env_steps >= config.warmup_steps &&
                              replay.size() >= static_cast<std::size_t>(config.batch_svea);
            if (warm && env_steps % config.update_every == 0) {
                const uint64_t step_seed = derive_seed(config.seed, 0xba7c4, static_cast<uint64_t>(env_steps));
                TransitionBatch batch = replay.sample_batch(config.batch_svea, step_seed);
                Graph g;
                Var loss;
                if (frozen_backbone) {
                    loss = td_loss_g(g, batch, qops, config.gamma);
                    sum_svea += static_cast<double>(g.scalar_value(loss));
                } else if (config.p2_cycle_losses) {
                    const PairBatch pairs{batch.obs, batch.next_obs};
                    UsraLossVars parts = usra_loss_g(g, pairs, batch, config.loss_weights(), config.aug_kind,
                                                     cops, qops, config.gamma, derive_seed(step_seed, 0x106));
                    loss = parts.total;
                    sum_fwd += static_cast<double>(parts.forward);
                    sum_rev += static_cast<double>(parts.reverse);
                    sum_svea += static_cast<double>(parts.svea);
                } else {
                    loss = svea_loss_g(g, batch, config.aug_kind, qops, config.gamma,
                                       derive_seed(step_seed, 0x107));
                    sum_svea += static_cast<double>(g.scalar_value(loss));
                }
                trained.zero_grads();
                g.backward(loss);
                opt.step(trained);
                ema_update(targets, online_mirror, config.zeta);
                ++updates;
            }
        }
        MetricsRow row;
        row.episode = episode + 1;
        row.phase = 2;
        row.train_return = static_cast<float>(ep_return);
        row.loss_forward = updates ? static_cast<float>(sum_fwd / updates) : 0.0f;
        row.loss_reverse = updates ? static_cast<float>(sum_rev / updates) : 0.0f;
        row.loss_svea = updates ? static_cast<float>(sum_svea / updates) : 0.0f;
        row.epsilon = eps;
        row.env_steps = env_steps;
        result.log.push_back(row);
        if (std::getenv("USRA_PROGRESS") && (episode + 1) % 10 == 0)
            std::fprintf(stderr, "  [%s] episode %d/%d return %.1f eps %.2f\n", method_name(config.method),
                         episode + 1, config.episodes, ep_return, static_cast<double>(eps));
    }
    return result;
}

const char* const kMetricsHeader =
    "episode,phase,train_return,loss_forward,loss_reverse,loss_svea,epsilon,env_steps,wall_time_s";

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out << kMetricsHeader << "\n";
    char buf[256];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%ld,0.000", r.episode, r.phase,
                      static_cast<double>(r.train_return), static_cast<double>(r.loss_forward),
                      static_cast<double>(r.loss_reverse), static_cast<double>(r.loss_svea),
                      static_cast<double>(r.epsilon), r.env_steps);
        out << buf << "\n";
    }
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::filesystem, "cannot open metrics file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        raise(ErrorKind::config, "bad metrics header in '" + path + "'");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRow r;
        double wall = 0;
        if (std::sscanf(line.c_str(), "%d,%d,%f,%f,%f,%f,%f,%ld,%lf", &r.episode, &r.phase, &r.train_return,
                        &r.loss_forward, &r.loss_reverse, &r.loss_svea, &r.epsilon, &r.env_steps, &wall) != 9)
            raise(ErrorKind::config, "bad metrics row in '" + path + "': " + line);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace usra
