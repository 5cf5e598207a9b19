#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace ba3c {

/// Time source. The logical clock makes metrics bit-reproducible in
/// deterministic mode: it advances only when the scheduler ticks it.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;  // seconds
};

class RealClock final : public Clock {
 public:
  RealClock() : start_(std::chrono::steady_clock::now()) {}
  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

class LogicalClock final : public Clock {
 public:
  double now() const override { return t_; }
  void advance(double dt) { t_ += dt; }

 private:
  double t_ = 0.0;
};

/// Trained-examples per wall-clock second, cumulative and over a sliding
/// window of recent samples.
class ThroughputMeter {
 public:
  explicit ThroughputMeter(std::size_t window = 32) : window_(window) {}

  void record(std::uint64_t cumulative_examples, double time_s) {
    samples_.push_back({cumulative_examples, time_s});
    while (samples_.size() > window_) samples_.pop_front();
  }

  std::optional<double> cumulative_rate() const {
    if (samples_.size() < 2) return std::nullopt;
    const auto& last = samples_.back();
    if (last.time_s <= 0.0) return std::nullopt;
    return double(last.examples) / last.time_s;
  }

  std::optional<double> windowed_rate() const {
    if (samples_.size() < 2) return std::nullopt;
    const auto& a = samples_.front();
    const auto& b = samples_.back();
    if (b.time_s <= a.time_s) return std::nullopt;
    return double(b.examples - a.examples) / (b.time_s - a.time_s);
  }

 private:
  struct Sample {
    std::uint64_t examples;
    double time_s;
  };
  std::size_t window_;
  std::deque<Sample> samples_;
};

/// One line of ordered JSON per record.
class JsonlWriter {
 public:
  JsonlWriter() = default;
  explicit JsonlWriter(const std::string& path) {
    if (!path.empty()) {
      os_.open(path);
      if (!os_) throw std::runtime_error("metrics: cannot open " + path);
    }
  }

  void write(const nlohmann::ordered_json& record) {
    if (os_.is_open()) os_ << record.dump() << "\n";
  }

  void flush() {
    if (os_.is_open()) os_.flush();
  }

 private:
  std::ofstream os_;
};

}  // namespace ba3c
