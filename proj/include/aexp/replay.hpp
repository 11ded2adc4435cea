#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/rng.hpp"

namespace aexp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Transition {
  Vec state;
  Vec action;
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
};

// Batch view: one transition per column.
struct Batch {
  Mat states;
  Mat actions;
  Vec rewards;
  Mat next_states;
  std::vector<bool> terminal;

  Eigen::Index size() const { return rewards.size(); }
};

inline Batch to_batch(const std::vector<Transition>& ts) {
  require(!ts.empty(), "to_batch: empty batch");
  const auto n = static_cast<Eigen::Index>(ts.size());
  Batch b;
  b.states.resize(ts[0].state.size(), n);
  b.actions.resize(ts[0].action.size(), n);
  b.rewards.resize(n);
  b.next_states.resize(ts[0].next_state.size(), n);
  b.terminal.resize(ts.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = ts[static_cast<std::size_t>(i)];
    b.states.col(i) = t.state;
    b.actions.col(i) = t.action;
    b.rewards(i) = t.reward;
    b.next_states.col(i) = t.next_state;
    b.terminal[static_cast<std::size_t>(i)] = t.terminal;
  }
  return b;
}

// Fixed-capacity FIFO ring with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "ReplayBuffer: capacity must be >= 1");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::vector<Transition> sample(std::size_t batch, Rng& rng) const {
    require(!data_.empty(), "ReplayBuffer::sample: buffer is empty");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(data_[pick(rng)]);
    return out;
  }

  // Same draws as sample(), packed column-wise.
  Batch sample_batch(std::size_t batch, Rng& rng) const {
    require(!data_.empty(), "ReplayBuffer::sample: buffer is empty");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    const auto n = static_cast<Eigen::Index>(batch);
    const auto& first = data_.front();
    Batch b;
    b.states.resize(first.state.size(), n);
    b.actions.resize(first.action.size(), n);
    b.rewards.resize(n);
    b.next_states.resize(first.next_state.size(), n);
    b.terminal.resize(batch);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = data_[pick(rng)];
      b.states.col(i) = t.state;
      b.actions.col(i) = t.action;
      b.rewards(i) = t.reward;
      b.next_states.col(i) = t.next_state;
      b.terminal[static_cast<std::size_t>(i)] = t.terminal;
    }
    return b;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  // Oldest-first view of the contents.
  std::vector<Transition> contents() const {
    std::vector<Transition> out;
    out.reserve(data_.size());
    const std::size_t start = data_.size() < capacity_ ? 0 : cursor_;
    for (std::size_t i = 0; i < data_.size(); ++i) out.push_back(data_[(start + i) % data_.size()]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> data_;
};

}  // namespace aexp
