#pragma once

#include <cstdint>
#include <vector>

#include "usra/envsim.hpp"
#include "usra/losses.hpp"

namespace usra {

/// FIFO ring of transitions with seeded uniform sampling (without
/// replacement within one call). Observations inside share frame storage,
/// so a full desk-scale run stays well under a GB.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const { return full_ ? capacity_ : head_; }
    std::size_t capacity() const { return capacity_; }

    /// Transition i in insertion order, oldest first.
    const Transition& at(std::size_t i) const;

    /// Errors if batch_size exceeds the current size.
    std::vector<const Transition*> sample(int batch_size, uint64_t seed) const;
    /// Same draw, materialized into stacked tensors.
    TransitionBatch sample_batch(int batch_size, uint64_t seed) const;

private:
    std::vector<Transition> ring_;
    std::size_t capacity_;
    std::size_t head_ = 0;
    bool full_ = false;
};

/// Stacks observations row-wise into [N,9,48,48].
Tensor stack_observations(const std::vector<const Observation*>& obs);

}  // namespace usra
