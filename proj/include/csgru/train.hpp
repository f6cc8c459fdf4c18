#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "csgru/adam.hpp"
#include "csgru/autodiff.hpp"
#include "csgru/cells.hpp"
#include "csgru/data.hpp"
#include "csgru/errors.hpp"
#include "csgru/metrics.hpp"
#include "csgru/parallel.hpp"
#include "csgru/rng.hpp"

namespace csgru {

struct TrainConfig {
  int epochs = 100;
  int batch = 128;
  AdamConfig adam;
  std::uint64_t seed = 1;
  int threads = 0;        // 0 = hardware concurrency
  double clip_norm = 0.0; // global L2 clip; 0 disables
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> activity;  // spikes/neuron/timestep on the test set
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
};

namespace detail {

struct SampleGrads {
  std::vector<Tensor> grads;  // aligned with the trainable index list
  double loss = 0.0;
  int correct = 0;
};

// Forward/backward of one sample on its own tape.
inline SampleGrads sample_pass(const Network& net, const SpikeSequence& sample,
                               const std::vector<int>& trainable) {
  Tape tape;
  TapeOps ops{tape, net.config.surrogate, false, net.config.detach_reset};
  BoundNet<NodeId> bound = bind_network(ops, net);
  UnrollOut<NodeId> out = unroll(ops, net, bound, sample.data);
  NodeId logits = tape.max_over_time(out.readout);
  NodeId loss = tape.cross_entropy(logits, sample.label);
  tape.backward(loss);
  SampleGrads res;
  res.loss = tape.value(loss)[0];
  res.correct = argmax(tape.value(logits)) == sample.label ? 1 : 0;
  res.grads.reserve(trainable.size());
  for (int slot : trainable)
    res.grads.push_back(tape.grad(bound.slots[static_cast<std::size_t>(slot)]));
  return res;
}

}  // namespace detail

// Full-BPTT minibatch training. Per-sample tapes may run concurrently; the
// batch gradient is the mean over samples accumulated in sample order, so the
// result is independent of the thread count.
inline TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                         const TrainConfig& cfg) {
  if (train_set.empty()) throw config_error("train: empty training set");
  if (cfg.batch < 1 || cfg.epochs < 0) throw config_error("train: invalid batch/epochs");

  std::vector<int> trainable;
  for (std::size_t k = 0; k < net.params.size(); ++k)
    if (net.params[k].trainable) trainable.push_back(static_cast<int>(k));

  Adam adam(cfg.adam);
  Rng shuffle_rng = Rng(cfg.seed).fork(0x5a5aULL);
  TrainResult result;
  const int n = static_cast<int>(train_set.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int epoch_correct = 0;

    for (int start = 0; start < n; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, n - start);
      std::vector<detail::SampleGrads> slots(static_cast<std::size_t>(bsz));
      parallel_for(bsz, cfg.threads, [&](int j) {
        const SpikeSequence& s =
            train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(start + j)])];
        slots[static_cast<std::size_t>(j)] = detail::sample_pass(net, s, trainable);
      });

      double batch_loss = 0.0;
      for (int j = 0; j < bsz; ++j) {
        batch_loss += slots[static_cast<std::size_t>(j)].loss;
        epoch_correct += slots[static_cast<std::size_t>(j)].correct;
      }
      batch_loss /= bsz;
      epoch_loss += batch_loss * bsz;
      if (!std::isfinite(batch_loss))
        throw divergence_error("non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch starting at sample " + std::to_string(start));

      // mean gradient over the batch, in sample order
      std::vector<Tensor> mean_grads;
      mean_grads.reserve(trainable.size());
      for (std::size_t k = 0; k < trainable.size(); ++k) {
        std::vector<double> acc(
            static_cast<std::size_t>(slots[0].grads[k].size()), 0.0);
        for (int j = 0; j < bsz; ++j) {
          auto g = slots[static_cast<std::size_t>(j)].grads[k].data();
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
        for (double& v : acc) v /= bsz;
        mean_grads.emplace_back(slots[0].grads[k].shape(), std::move(acc));
      }

      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : mean_grads)
          for (double v : g.data()) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          const double f = cfg.clip_norm / norm;
          for (Tensor& g : mean_grads) g = scale(g, f);
        }
      }

      std::vector<Tensor*> params;
      params.reserve(trainable.size());
      for (int slot : trainable) params.push_back(&net.params[static_cast<std::size_t>(slot)].value);
      adam.step(std::move(params), mean_grads);
    }

    EvalResult test_eval = evaluate(net, test_set, cfg.threads);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / n;
    m.train_acc = static_cast<double>(epoch_correct) / n;
    m.test_acc = test_eval.accuracy;
    m.activity = test_eval.activity;
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(m);
  }
  return result;
}

}  // namespace csgru
