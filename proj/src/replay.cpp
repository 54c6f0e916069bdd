#include "usra/replay.hpp"

#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) raise(ErrorKind::logic, "replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (!full_) {
        ring_.push_back(std::move(t));
        head_ = ring_.size() % capacity_;
        full_ = ring_.size() == capacity_;
        return;
    }
    ring_[head_] = std::move(t);  // overwrite the oldest entry
    head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
    if (i >= size()) raise(ErrorKind::logic, "replay index out of range");
    if (!full_) return ring_[i];
    return ring_[(head_ + i) % capacity_];
}

std::vector<const Transition*> ReplayBuffer::sample(int batch_size, uint64_t seed) const {
    const std::size_t n = size();
    if (batch_size <= 0 || static_cast<std::size_t>(batch_size) > n)
        raise(ErrorKind::logic, "replay sample of " + std::to_string(batch_size) + " from " + std::to_string(n));
    // partial Fisher-Yates: first batch_size slots are a uniform draw
    // without replacement
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x5a3));
    std::vector<const Transition*> out(static_cast<std::size_t>(batch_size));
    for (int k = 0; k < batch_size; ++k) {
        const std::size_t j = static_cast<std::size_t>(k) +
                              static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n - static_cast<std::size_t>(k))));
        std::swap(idx[static_cast<std::size_t>(k)], idx[j]);
        out[static_cast<std::size_t>(k)] = &at(idx[static_cast<std::size_t>(k)]);
    }
    return out;
}

TransitionBatch ReplayBuffer::sample_batch(int batch_size, uint64_t seed) const {
    const auto picks = sample(batch_size, seed);
    TransitionBatch batch;
    std::vector<const Observation*> obs, next_obs;
    obs.reserve(picks.size());
    next_obs.reserve(picks.size());
    for (const Transition* t : picks) {
        obs.push_back(&t->obs);
        next_obs.push_back(&t->next_obs);
        batch.actions.push_back(t->action.index);
        batch.rewards.push_back(t->reward);
        batch.done.push_back(t->done ? 1 : 0);
    }
    batch.obs = stack_observations(obs);
    batch.next_obs = stack_observations(next_obs);
    return batch;
}

Tensor stack_observations(const std::vector<const Observation*>& obs) {
    if (obs.empty()) raise(ErrorKind::logic, "stack_observations: empty list");
    const int n = static_cast<int>(obs.size());
    Tensor out({n, kObsChannels, kFrameSize, kFrameSize});
    const std::size_t plane = static_cast<std::size_t>(kObsChannels) * kFrameSize * kFrameSize;
    for (int i = 0; i < n; ++i) {
        const Tensor stacked = obs[static_cast<std::size_t>(i)]->stacked();
        std::copy_n(stacked.data(), plane, out.data() + plane * i);
    }
    return out;
}

}  // namespace usra
