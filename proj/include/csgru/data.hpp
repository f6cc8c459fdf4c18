#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "csgru/cells.hpp"
#include "csgru/errors.hpp"
#include "csgru/rng.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// Time-indexed binary spike tensor [T,C,H,W] with a class label.
struct SpikeSequence {
  Tensor data;
  int label = 0;

  int timesteps() const { return data.shape()[0]; }
};

using Dataset = std::vector<SpikeSequence>;

// Validates the SpikeSequence invariants (4-d shape, {0,1} values).
inline SpikeSequence make_spike_sequence(Tensor data, int label) {
  if (data.shape().size() != 4)
    throw shape_error("spike sequence must be [T,C,H,W], got " + shape_str(data.shape()));
  if (data.shape()[0] < 1) throw data_error("spike sequence must have T >= 1");
  for (std::int64_t i = 0; i < data.size(); ++i)
    if (data[i] != 0.0 && data[i] != 1.0)
      throw data_error("spike sequence value " + std::to_string(data[i]) + " is not binary");
  return SpikeSequence{std::move(data), label};
}

// ---- rate coding -----------------------------------------------------------

// Independent Bernoulli(pixel) draw per timestep per pixel from the
// counter-based generator, so the encoding is reproducible regardless of
// evaluation order.
inline SpikeSequence rate_encode(const Tensor& image, int timesteps, std::uint64_t seed,
                                 std::uint64_t sample_index = 0, int label = 0) {
  if (image.shape().size() != 3)
    throw shape_error("rate_encode: image must be [C,H,W], got " + shape_str(image.shape()));
  for (std::int64_t i = 0; i < image.size(); ++i)
    if (image[i] < 0.0 || image[i] > 1.0)
      throw data_error("rate_encode: pixel value " + std::to_string(image[i]) +
                       " outside [0,1]");
  const std::int64_t n = image.size();
  std::vector<double> d(static_cast<std::size_t>(timesteps) * n);
  for (int t = 0; t < timesteps; ++t)
    for (std::int64_t p = 0; p < n; ++p)
      d[static_cast<std::size_t>(t) * n + p] =
          counter_rng::uniform(seed, sample_index, static_cast<std::uint64_t>(t),
                               static_cast<std::uint64_t>(p)) < image[p]
              ? 1.0
              : 0.0;
  Shape s = {timesteps, image.shape()[0], image.shape()[1], image.shape()[2]};
  return SpikeSequence{Tensor(std::move(s), std::move(d)), label};
}

// ---- synthetic spatio-temporal tasks ----------------------------------------

enum class SynthKind { pattern3, moving_bar };

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "pattern3") return SynthKind::pattern3;
  if (s == "moving_bar") return SynthKind::moving_bar;
  throw config_error("unknown synthetic task kind: " + s);
}

inline int synth_classes(SynthKind kind) { return kind == SynthKind::pattern3 ? 3 : 4; }

namespace detail {

// Spatio-temporal template of one class: cells (frame, c, y, x) relative to
// the onset frame. pattern3 sweeps a 3-pixel vertical dash along the main
// diagonal, the anti-diagonal or the middle row; moving_bar sweeps a full bar
// in one of the four axis directions.
inline std::vector<std::tuple<int, int, int, int>> synth_template(SynthKind kind, int cls,
                                                                  const Shape& grid, int len) {
  const int h = grid[1], w = grid[2];
  std::vector<std::tuple<int, int, int, int>> cells;
  auto dash = [&](int f, int y, int x) {
    for (int dy = -1; dy <= 1; ++dy)
      if (y + dy >= 0 && y + dy < h) cells.emplace_back(f, 0, y + dy, x);
  };
  for (int f = 0; f < len; ++f) {
    if (kind == SynthKind::pattern3) {
      switch (cls) {
        case 0: dash(f, f, f); break;
        case 1: dash(f, h - 1 - f, f); break;
        default: dash(f, h / 2, f); break;
      }
    } else {
      switch (cls) {
        case 0:  // bar sweeping right
          for (int y = 0; y < h; ++y) cells.emplace_back(f, 0, y, f);
          break;
        case 1:  // left
          for (int y = 0; y < h; ++y) cells.emplace_back(f, 0, y, w - 1 - f);
          break;
        case 2:  // down
          for (int x = 0; x < w; ++x) cells.emplace_back(f, 0, f, x);
          break;
        default:  // up
          for (int x = 0; x < w; ++x) cells.emplace_back(f, 0, h - 1 - f, x);
          break;
      }
    }
  }
  return cells;
}

}  // namespace detail

inline int synth_template_len(SynthKind kind, const Shape& grid, int timesteps) {
  (void)kind;
  return std::min({grid[1], grid[2], timesteps});
}

struct SynthSpec {
  SynthKind kind = SynthKind::pattern3;
  int n_samples = 600;
  int timesteps = 20;
  Shape grid = {1, 8, 8};  // [C,H,W]
  double noise_rate = 0.05;
  std::uint64_t seed = 1;
};

// Class templates embedded at a random onset over Bernoulli background noise.
// Labels are balanced within +-1 by construction.
inline Dataset synth_task(const SynthSpec& spec) {
  if (spec.timesteps < 8) throw config_error("synth_task: need T >= 8");
  if (spec.grid.size() != 3 || spec.grid[0] < 1 || spec.grid[1] < 4 || spec.grid[2] < 4)
    throw config_error("synth_task: grid must be at least 1x4x4, got " + shape_str(spec.grid));
  const int classes = synth_classes(spec.kind);
  const int len = synth_template_len(spec.kind, spec.grid, spec.timesteps);
  const std::int64_t frame_n = numel(spec.grid);
  const int c_n = spec.grid[0], h = spec.grid[1], w = spec.grid[2];

  Rng order_rng = Rng(spec.seed).fork(0x0bacULL);
  std::vector<int> labels(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  order_rng.shuffle(labels);

  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int s = 0; s < spec.n_samples; ++s) {
    const int cls = labels[static_cast<std::size_t>(s)];
    const std::uint64_t sid = static_cast<std::uint64_t>(s);
    std::vector<double> d(static_cast<std::size_t>(spec.timesteps) * frame_n, 0.0);
    if (spec.noise_rate > 0.0) {
      for (int t = 0; t < spec.timesteps; ++t)
        for (std::int64_t p = 0; p < frame_n; ++p)
          if (counter_rng::uniform(spec.seed, sid, static_cast<std::uint64_t>(t),
                                   static_cast<std::uint64_t>(p)) < spec.noise_rate)
            d[static_cast<std::size_t>(t) * frame_n + p] = 1.0;
    }
    const int max_onset = spec.timesteps - len;
    const int onset = static_cast<int>(
        counter_rng::hash(spec.seed, sid, 0xa11ceULL, 0) % static_cast<std::uint64_t>(max_onset + 1));
    for (auto [f, c, y, x] : detail::synth_template(spec.kind, cls, spec.grid, len)) {
      const std::size_t idx = (static_cast<std::size_t>(onset + f) * c_n + c) *
                                  static_cast<std::size_t>(h) * w +
                              static_cast<std::size_t>(y) * w + x;
      d[idx] = 1.0;
    }
    Shape shape = {spec.timesteps, c_n, h, w};
    out.push_back(make_spike_sequence(Tensor(std::move(shape), std::move(d)), cls));
  }
  return out;
}

// Matched-filter classifier: slides every class template over all onsets and
// scores the fraction of template cells present. Ties go to the lowest class.
inline int template_matching_oracle(const SpikeSequence& seq, SynthKind kind) {
  const Shape& s = seq.data.shape();
  const Shape grid = {s[1], s[2], s[3]};
  const int timesteps = s[0];
  const int len = synth_template_len(kind, grid, timesteps);
  const int classes = synth_classes(kind);
  int best_cls = 0;
  double best_score = -1.0;
  for (int cls = 0; cls < classes; ++cls) {
    auto cells = detail::synth_template(kind, cls, grid, len);
    for (int onset = 0; onset + len <= timesteps; ++onset) {
      int hits = 0;
      for (auto [f, c, y, x] : cells) {
        const std::size_t idx = (static_cast<std::size_t>(onset + f) * grid[0] + c) *
                                    static_cast<std::size_t>(grid[1]) * grid[2] +
                                static_cast<std::size_t>(y) * grid[2] + x;
        if (seq.data[static_cast<std::int64_t>(idx)] == 1.0) ++hits;
      }
      const double score = static_cast<double>(hits) / static_cast<double>(cells.size());
      if (score > best_score) {
        best_score = score;
        best_cls = cls;
      }
    }
  }
  return best_cls;
}

// ---- event files -------------------------------------------------------------

// One DVS-style event: timestamp in microseconds, pixel coordinates, polarity.
struct EventRecord {
  std::uint64_t t = 0;
  int x = 0, y = 0, p = 0;
};

namespace detail {

inline bool parse_event_line(const std::string& line, EventRecord& ev) {
  std::uint64_t fields[4] = {0, 0, 0, 0};
  std::size_t pos = 0;
  for (int f = 0; f < 4; ++f) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos >= line.size() || line[pos] < '0' || line[pos] > '9') return false;
    std::uint64_t v = 0;
    while (pos < line.size() && line[pos] >= '0' && line[pos] <= '9') {
      v = v * 10 + static_cast<std::uint64_t>(line[pos] - '0');
      ++pos;
    }
    fields[f] = v;
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (f < 3) {
      if (pos >= line.size() || line[pos] != ',') return false;
      ++pos;
    }
  }
  if (pos != line.size()) return false;
  ev = EventRecord{fields[0], static_cast<int>(fields[1]), static_cast<int>(fields[2]),
                   static_cast<int>(fields[3])};
  return true;
}

}  // namespace detail

// Reads newline-delimited "t,x,y,p" events (t in microseconds; optional
// header line) and OR-bins them uniformly into T bins over [0, window).
// Polarity maps to channel, so the output is [T,2,H,W]. Events at or beyond
// the window are dropped.
inline SpikeSequence load_events(const std::string& path, int sensor_h, int sensor_w,
                                 int bins, double window_seconds, int label = 0) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open event file: " + path);
  const std::uint64_t window_us =
      static_cast<std::uint64_t>(std::llround(window_seconds * 1e6));
  if (window_us == 0 || bins < 1) throw config_error("load_events: invalid window or bins");
  std::vector<double> d(static_cast<std::size_t>(bins) * 2 * sensor_h * sensor_w, 0.0);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    EventRecord ev;
    if (!detail::parse_event_line(line, ev)) {
      if (line_no == 1) continue;  // optional header
      throw parse_error(path + ":" + std::to_string(line_no) + ": malformed event line");
    }
    if (ev.x < 0 || ev.x >= sensor_w || ev.y < 0 || ev.y >= sensor_h || (ev.p != 0 && ev.p != 1))
      throw data_error(path + ":" + std::to_string(line_no) + ": event (" +
                       std::to_string(ev.x) + "," + std::to_string(ev.y) + ",p=" +
                       std::to_string(ev.p) + ") outside sensor " + std::to_string(sensor_h) +
                       "x" + std::to_string(sensor_w));
    if (ev.t >= window_us) continue;  // beyond the window
    const std::uint64_t bin = ev.t * static_cast<std::uint64_t>(bins) / window_us;
    const std::size_t idx =
        ((static_cast<std::size_t>(bin) * 2 + static_cast<std::size_t>(ev.p)) * sensor_h +
         static_cast<std::size_t>(ev.y)) *
            sensor_w +
        static_cast<std::size_t>(ev.x);
    d[idx] = 1.0;  // OR semantics
  }
  return make_spike_sequence(Tensor({bins, 2, sensor_h, sensor_w}, std::move(d)), label);
}

// Serializes a [T,2,H,W] sequence back to "t,x,y,p" lines, placing each spike
// at the earliest microsecond of its bin so load_events(save_events(s)) == s.
inline void save_events(const SpikeSequence& seq, const std::string& path,
                        double window_seconds) {
  const Shape& s = seq.data.shape();
  if (s[1] != 2) throw shape_error("save_events: expected 2 polarity channels");
  const std::uint64_t window_us =
      static_cast<std::uint64_t>(std::llround(window_seconds * 1e6));
  const std::uint64_t bins = static_cast<std::uint64_t>(s[0]);
  std::ofstream out(path);
  if (!out) throw data_error("cannot write event file: " + path);
  out << "t,x,y,p\n";
  for (int t = 0; t < s[0]; ++t) {
    // earliest integer microsecond mapping back into bin t
    const std::uint64_t t_us =
        (static_cast<std::uint64_t>(t) * window_us + bins - 1) / bins;
    for (int p = 0; p < 2; ++p)
      for (int y = 0; y < s[2]; ++y)
        for (int x = 0; x < s[3]; ++x)
          if (seq.data[((static_cast<std::int64_t>(t) * 2 + p) * s[2] + y) * s[3] + x] == 1.0)
            out << t_us << ',' << x << ',' << y << ',' << p << '\n';
  }
}

// ---- reshaping pipeline -------------------------------------------------------

// Data-side input conditioning: rearrange flat channels into a [C,H,W] grid
// and optionally 2x2 max-pool. Both stages keep the data binary. The
// learnable strided downsampling conv of the pipeline lives in the network
// (its parameters join the trainable set); apply_downconv evaluates the same
// stage standalone against fixed weights, yielding a real-valued sequence.
struct PipelineSpec {
  Shape grid;         // target [C,H,W]; empty keeps the stored shape
  bool pool = false;  // one 2x2/stride-2 max-pool
  std::optional<DownConvSpec> downconv;
};

inline SpikeSequence reshape_pipeline(const SpikeSequence& seq, const PipelineSpec& spec) {
  const Shape& s = seq.data.shape();
  Tensor data = seq.data;
  if (!spec.grid.empty()) {
    if (spec.grid.size() != 3)
      throw config_error("pipeline grid must be [C,H,W], got " + shape_str(spec.grid));
    const std::int64_t per_t = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
    if (per_t != numel(spec.grid))
      throw config_error("pipeline grid " + shape_str(spec.grid) +
                         " incompatible with per-timestep extent " + std::to_string(per_t));
    data = data.reshaped({s[0], spec.grid[0], spec.grid[1], spec.grid[2]});
  }
  if (spec.pool) {
    const Shape& ds = data.shape();
    std::vector<Tensor> frames;
    frames.reserve(static_cast<std::size_t>(ds[0]));
    for (int t = 0; t < ds[0]; ++t) frames.push_back(maxpool2d(seq_slice(data, t)));
    const Shape& fs = frames[0].shape();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(ds[0]) * numel(fs));
    for (const Tensor& f : frames) d.insert(d.end(), f.data().begin(), f.data().end());
    data = Tensor({ds[0], fs[0], fs[1], fs[2]}, std::move(d));
  }
  return SpikeSequence{std::move(data), seq.label};
}

// Standalone evaluation of the downsampling conv against fixed parameters;
// output is real-valued [T,Co,Ho,Wo].
inline Tensor apply_downconv(const SpikeSequence& seq, const Tensor& kernel, const Tensor& bias,
                             const ConvGeom& geom) {
  const Shape& s = seq.data.shape();
  std::vector<double> d;
  Shape out_shape;
  for (int t = 0; t < s[0]; ++t) {
    Tensor frame = conv2d(seq_slice(seq.data, t), kernel, bias, geom);
    if (t == 0) {
      out_shape = {s[0], frame.shape()[0], frame.shape()[1], frame.shape()[2]};
      d.reserve(static_cast<std::size_t>(numel(out_shape)));
    }
    d.insert(d.end(), frame.data().begin(), frame.data().end());
  }
  return Tensor(std::move(out_shape), std::move(d));
}

inline Dataset reshape_pipeline(const Dataset& ds, const PipelineSpec& spec) {
  Dataset out;
  out.reserve(ds.size());
  for (const SpikeSequence& s : ds) out.push_back(reshape_pipeline(s, spec));
  return out;
}

}  // namespace csgru
