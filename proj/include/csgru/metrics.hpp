#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csgru/cells.hpp"
#include "csgru/data.hpp"
#include "csgru/errors.hpp"
#include "csgru/parallel.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// Average spikes per neuron per timestep over recorded hidden spike trains
// (records[layer][t]). The non-spiking readout is never part of the records.
inline double spiking_activity_rate(const std::vector<std::vector<Tensor>>& records) {
  double spikes = 0.0, neuron_steps = 0.0;
  for (const auto& layer : records) {
    for (const Tensor& s : layer) {
      spikes += sum(s);
      neuron_steps += static_cast<double>(s.size());
    }
  }
  if (neuron_steps == 0.0) throw data_error("spiking_activity_rate: empty records");
  return spikes / neuron_steps;
}

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> activity;     // absent for non-spiking cells
  std::vector<Tensor> logits;         // per sample, [classes]
  std::vector<int> predictions;       // argmax, lowest index wins ties
};

// Full evaluation pass: max-over-time logits, argmax accuracy, and the
// spiking activity rate across all hidden layers, timesteps and samples.
inline EvalResult evaluate(const Network& net, const Dataset& ds, int threads = 0) {
  EvalResult res;
  const int n = static_cast<int>(ds.size());
  res.logits.resize(static_cast<std::size_t>(n));
  res.predictions.resize(static_cast<std::size_t>(n));
  std::vector<double> sample_spikes(static_cast<std::size_t>(n), 0.0);
  std::vector<double> sample_neuron_steps(static_cast<std::size_t>(n), 0.0);
  std::vector<int> correct(static_cast<std::size_t>(n), 0);

  parallel_for(n, threads, [&](int i) {
    const SpikeSequence& s = ds[static_cast<std::size_t>(i)];
    UnrollOut<Tensor> out = forward_eval(net, s.data);
    Tensor logits = max_over_time(out.readout);
    const int pred = argmax(logits);
    res.logits[static_cast<std::size_t>(i)] = logits;
    res.predictions[static_cast<std::size_t>(i)] = pred;
    correct[static_cast<std::size_t>(i)] = pred == s.label ? 1 : 0;
    for (const auto& layer : out.spikes) {
      for (const Tensor& sp : layer) {
        sample_spikes[static_cast<std::size_t>(i)] += sum(sp);
        sample_neuron_steps[static_cast<std::size_t>(i)] += static_cast<double>(sp.size());
      }
    }
  });

  int hits = 0;
  double spikes = 0.0, neuron_steps = 0.0;
  for (int i = 0; i < n; ++i) {
    hits += correct[static_cast<std::size_t>(i)];
    spikes += sample_spikes[static_cast<std::size_t>(i)];
    neuron_steps += sample_neuron_steps[static_cast<std::size_t>(i)];
  }
  res.accuracy = n > 0 ? static_cast<double>(hits) / n : 0.0;
  if (neuron_steps > 0.0) res.activity = spikes / neuron_steps;
  return res;
}

}  // namespace csgru
