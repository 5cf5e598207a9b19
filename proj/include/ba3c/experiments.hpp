#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ba3c/pipeline.hpp"
#include "ba3c/plot.hpp"

namespace ba3c {

// ---------------------------------------------------------------------------
// Loguniform sampling
// ---------------------------------------------------------------------------

struct SearchSpace {
  double lr_lo = 1e-4, lr_hi = 1e-2;
  double batch_lo = 2.0, batch_hi = 1024.0;

  void validate() const {
    if (lr_lo <= 0.0 || lr_lo >= lr_hi || batch_lo <= 0.0 || batch_lo >= batch_hi)
      throw std::invalid_argument("search space: need 0 < lo < hi");
  }
};

/// exp(ln lo + u * (ln hi - ln lo)) for a fixed u in [0,1).
inline double loguniform_at(double lo, double hi, double u) {
  if (lo <= 0.0 || lo >= hi) throw std::invalid_argument("loguniform: need 0 < lo < hi");
  if (u == 0.0) return lo;  // exact at the lower bound
  return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
}

inline double sample_loguniform(double lo, double hi, Rng& rng) {
  return loguniform_at(lo, hi, rng.uniform());
}

/// Batch sizes round to the nearest integer, never below 2.
inline std::size_t round_batch(double b) {
  return std::size_t(std::max(2.0, std::round(b)));
}

// ---------------------------------------------------------------------------
// Delay sweep
// ---------------------------------------------------------------------------

struct DelayPoint {
  std::size_t delay = 0;
  std::uint64_t seed = 0;
  double best_score = 0.0;
  double final_score = 0.0;
  bool failed = false;
  std::string error;
};

/// One full training run per (delay, seed). A failed run is recorded and
/// the sweep moves on.
inline std::vector<DelayPoint> delay_sweep(const RunConfig& base,
                                           const std::vector<std::size_t>& delays,
                                           const std::vector<std::uint64_t>& seeds,
                                           bool deterministic, std::ostream* log = nullptr) {
  if (delays.empty() || seeds.empty())
    throw std::invalid_argument("delay_sweep: delays and seeds must be non-empty");
  std::vector<DelayPoint> rows;
  for (const std::size_t k : delays) {
    for (const std::uint64_t seed : seeds) {
      DelayPoint row;
      row.delay = k;
      row.seed = seed;
      RunConfig cfg = base;
      cfg.pipeline.delay_k = k;
      cfg.seed = seed;
      try {
        const auto r = AsyncPipeline(cfg, deterministic).run();
        row.best_score = r.metrics.best_score;
        row.final_score = r.metrics.final_score;
        if (log)
          *log << "delay=" << k << " seed=" << seed << " best=" << row.best_score
               << " final=" << row.final_score << "\n";
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        if (log) *log << "delay=" << k << " seed=" << seed << " FAILED: " << e.what() << "\n";
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_delay_sweep_csv(const std::string& path, const std::vector<DelayPoint>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "delay,seed,best_score,final_score\n";
  for (const auto& r : rows) {
    os << r.delay << "," << r.seed << ",";
    if (r.failed)
      os << "failed,failed";
    else
      os << r.best_score << "," << r.final_score;
    os << "\n";
  }
}

/// Mean best score per delay value, over the seeds that completed.
inline std::vector<std::pair<std::size_t, double>> delay_sweep_means(
    const std::vector<DelayPoint>& rows) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows)
    if (!r.failed) {
      acc[r.delay].first += r.best_score;
      acc[r.delay].second += 1;
    }
  std::vector<std::pair<std::size_t, double>> means;
  for (const auto& [k, sum_n] : acc) means.emplace_back(k, sum_n.first / double(sum_n.second));
  return means;
}

inline void write_delay_sweep_svg(const std::string& path, const std::vector<DelayPoint>& rows) {
  const auto means = delay_sweep_means(rows);
  if (means.empty()) return;
  std::vector<double> xs, best;
  for (const auto& [k, m] : means) {
    xs.push_back(double(k));
    best.push_back(m);
  }
  svg_line_plot(path, "Best evaluation score vs. gradient delay", "delay (batches)",
                "best mean score", xs, {best}, {"best score"});
}

/// Informational check on queue sizing: short threaded runs with training
/// queue capacity 3 vs. 8, throughput logged side by side (capacity should
/// have little effect on speed). Never fails the sweep.
inline void queue_capacity_probe(const RunConfig& base, std::ostream& log) {
  auto probe = [&](std::size_t capacity) -> double {
    RunConfig cfg = base;
    cfg.pipeline.train_queue_capacity = capacity;
    cfg.pipeline.delay_k = 0;
    cfg.eval_interval = 0;
    cfg.stop_on_score = 0.0;
    try {
      return AsyncPipeline(cfg, /*deterministic=*/false).run().metrics.examples_per_s;
    } catch (const std::exception&) {
      return 0.0;
    }
  };
  const double cap3 = probe(3);
  const double cap8 = probe(8);
  const double rel = (cap3 > 0.0 && cap8 > 0.0)
                         ? std::abs(cap3 - cap8) / std::max(cap3, cap8)
                         : 1.0;
  log << "queue capacity probe: capacity=3 -> " << cap3 << " examples/s, capacity=8 -> "
      << cap8 << " examples/s, relative difference " << rel
      << (rel <= 0.15 ? " (within 15%)" : " (exceeds 15%, informational)") << "\n";
}

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

struct TrialResult {
  std::size_t trial = 0;
  double lr = 0.0;
  std::size_t batch_size = 0;
  double score_mean = 0.0;
  double score_max = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t frames = 0;
  bool diverged = false;
};

/// Trains n_trials configs with (lr, batch) drawn loguniformly; results are
/// ranked by score_mean. A diverged trial scores the environment minimum.
inline std::vector<TrialResult> random_search(const SearchSpace& space, std::size_t n_trials,
                                              const RunConfig& base, bool deterministic,
                                              std::ostream* log = nullptr) {
  if (n_trials < 1) throw std::invalid_argument("random_search: n_trials must be >= 1");
  space.validate();
  Rng sample_rng(base.seed, 400);
  std::vector<TrialResult> results;
  for (std::size_t t = 0; t < n_trials; ++t) {
    TrialResult res;
    res.trial = t;
    res.lr = sample_loguniform(space.lr_lo, space.lr_hi, sample_rng);
    res.batch_size = round_batch(sample_loguniform(space.batch_lo, space.batch_hi, sample_rng));
    res.seed = base.seed + 1000 * (t + 1);

    RunConfig cfg = base;
    cfg.seed = res.seed;
    cfg.optim.learning_rate = res.lr;
    cfg.batch_size = res.batch_size;
    res.frames = cfg.total_frames;
    try {
      AsyncPipeline pipeline(cfg, deterministic);
      const auto r = pipeline.run();
      res.diverged = r.metrics.diverged;
      if (res.diverged) {
        res.score_mean = res.score_max = 0.0;  // environment score minimum
      } else {
        // a fresh evaluation round on the final parameters; score_max is
        // the best single game, so score_max >= score_mean by construction
        const auto scores =
            evaluate_games(pipeline.arch(), r.params, cfg, 50, cfg.seed + 33);
        double sum = 0.0, mx = scores.front();
        for (double s : scores) sum += s, mx = std::max(mx, s);
        res.score_mean = sum / double(scores.size());
        res.score_max = mx;
      }
    } catch (const std::exception& e) {
      res.diverged = true;
      res.score_mean = res.score_max = 0.0;
      if (log) *log << "trial " << t << " FAILED: " << e.what() << "\n";
    }
    if (log)
      *log << "trial " << t << " lr=" << res.lr << " batch=" << res.batch_size
           << " score_mean=" << res.score_mean << " score_max=" << res.score_max
           << (res.diverged ? " (diverged)" : "") << "\n";
    results.push_back(res);
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const TrialResult& a, const TrialResult& b) {
                     return a.score_mean > b.score_mean;
                   });
  return results;
}

inline void write_search_csv(const std::string& path, const std::vector<TrialResult>& results) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "trial,lr,batch,score_mean,score_max,seed\n";
  for (const auto& r : results)
    os << r.trial << "," << r.lr << "," << r.batch_size << "," << r.score_mean << ","
       << r.score_max << "," << r.seed << "\n";
}

/// Min-max normalization to [0,1]; 1 marks the best score. With one
/// distinct score everything is "best".
inline std::vector<double> normalize_scores(const std::vector<TrialResult>& results) {
  double lo = results.front().score_mean, hi = lo;
  for (const auto& r : results) {
    lo = std::min(lo, r.score_mean);
    hi = std::max(hi, r.score_mean);
  }
  std::vector<double> out;
  out.reserve(results.size());
  for (const auto& r : results)
    out.push_back(hi > lo ? (r.score_mean - lo) / (hi - lo) : 1.0);
  return out;
}

inline void write_heatmap_csv(const std::string& path, const std::vector<TrialResult>& results) {
  const auto norm = normalize_scores(results);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "lr,batch,normalized_score\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    os << results[i].lr << "," << results[i].batch_size << "," << norm[i] << "\n";
}

/// Bins trials into a log-log (lr x batch) grid; each cell shows the best
/// normalized score that landed in it.
inline void write_search_heatmap_svg(const std::string& path, const SearchSpace& space,
                                     const std::vector<TrialResult>& results,
                                     std::size_t bins = 6) {
  const auto norm = normalize_scores(results);
  std::vector<std::vector<std::optional<double>>> cells(
      bins, std::vector<std::optional<double>>(bins));
  auto bin_of = [bins](double v, double lo, double hi) {
    const double f = (std::log(v) - std::log(lo)) / (std::log(hi) - std::log(lo));
    return std::min(bins - 1, std::size_t(std::max(0.0, f * double(bins))));
  };
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::size_t r = bin_of(results[i].lr, space.lr_lo, space.lr_hi);
    const std::size_t c = bin_of(double(results[i].batch_size), space.batch_lo, space.batch_hi);
    auto& cell = cells[bins - 1 - r][c];  // low lr at the bottom
    cell = cell ? std::max(*cell, norm[i]) : norm[i];
  }
  std::vector<std::string> row_labels(bins), col_labels(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    const double u = (double(i) + 0.5) / double(bins);
    row_labels[bins - 1 - i] = detail::fmt_num(loguniform_at(space.lr_lo, space.lr_hi, u));
    col_labels[i] = detail::fmt_num(loguniform_at(space.batch_lo, space.batch_hi, u));
  }
  svg_heatmap(path, "Random search (1 = best score)", "batch size", "learning rate", cells,
              row_labels, col_labels);
}

}  // namespace ba3c
