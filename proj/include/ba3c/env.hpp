#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>

#include "ba3c/rng.hpp"
#include "ba3c/tensor.hpp"

namespace ba3c {

struct EnvSpec {
  std::size_t n_actions = 0;
  std::size_t obs_h = 0, obs_w = 0;
  std::size_t obs_channels = 1;
  std::size_t max_episode_steps = 0;
};

template <typename T>
struct StepResult {
  Tensor<T> obs;  // [h, w, c], values in [0,1]
  double reward = 0.0;
  bool done = false;
};

/// Deterministic toy environment. reset(seed) fixes the whole trajectory
/// given the action sequence; instances are single-owner.
template <typename T>
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Tensor<T> reset(std::uint64_t episode_seed) = 0;
  virtual StepResult<T> step(std::size_t action) = 0;
};

/// A ball falls one row per step from a seeded column; a three-actions
/// paddle (left/stay/right) on the bottom row must be under it when it
/// lands. Catch pays +1, miss pays -1, either ends the episode.
template <typename T>
class CatchEnv final : public Env<T> {
 public:
  explicit CatchEnv(std::size_t grid = 24, std::size_t paddle_width = 3)
      : grid_(grid), paddle_w_(paddle_width) {
    if (grid < 4 || paddle_width >= grid || paddle_width % 2 == 0)
      throw std::invalid_argument("catch: need grid >= 4 and odd paddle width < grid");
    spec_ = {3, grid, grid, 1, grid};
  }

  const EnvSpec& spec() const override { return spec_; }

  Tensor<T> reset(std::uint64_t episode_seed) override {
    Rng rng(episode_seed);
    ball_row_ = 0;
    ball_col_ = rng.below(grid_);
    paddle_ = grid_ / 2;
    done_ = false;
    steps_ = 0;
    return render();
  }

  StepResult<T> step(std::size_t action) override {
    if (done_) throw std::logic_error("catch: step after done");
    if (action >= spec_.n_actions) throw std::invalid_argument("catch: bad action");
    const std::size_t half = paddle_w_ / 2;
    if (action == 0 && paddle_ > half) --paddle_;
    if (action == 2 && paddle_ + half + 1 < grid_) ++paddle_;
    ++ball_row_;
    ++steps_;
    StepResult<T> r;
    if (ball_row_ == grid_ - 1 || steps_ >= spec_.max_episode_steps) {
      done_ = true;
      const std::size_t lo = paddle_ - half, hi = paddle_ + half;
      r.reward = (ball_col_ >= lo && ball_col_ <= hi) ? 1.0 : -1.0;
    }
    r.done = done_;
    r.obs = render();
    return r;
  }

  std::size_t ball_column() const { return ball_col_; }
  std::size_t paddle_center() const { return paddle_; }

 private:
  Tensor<T> render() const {
    Tensor<T> f({grid_, grid_, 1}, Layout::FLAT);
    f[ball_row_ * grid_ + ball_col_] = T(1);
    const std::size_t half = paddle_w_ / 2;
    for (std::size_t c = paddle_ - half; c <= paddle_ + half; ++c)
      f[(grid_ - 1) * grid_ + c] = T(1);
    return f;
  }

  std::size_t grid_, paddle_w_;
  EnvSpec spec_;
  std::size_t ball_row_ = 0, ball_col_ = 0, paddle_ = 0, steps_ = 0;
  bool done_ = true;
};

/// Single-paddle rally game on a square grid. The ball bounces off the
/// side and top walls; each successful return from the bottom paddle pays
/// +1 and the rally continues, a miss ends the episode.
template <typename T>
class MiniPongEnv final : public Env<T> {
 public:
  explicit MiniPongEnv(std::size_t grid = 32, std::size_t paddle_width = 5,
                       std::size_t max_steps = 200)
      : grid_(grid), paddle_w_(paddle_width) {
    if (grid < 8 || paddle_width >= grid || paddle_width % 2 == 0)
      throw std::invalid_argument("minipong: need grid >= 8 and odd paddle width < grid");
    spec_ = {3, grid, grid, 1, max_steps};
  }

  const EnvSpec& spec() const override { return spec_; }

  Tensor<T> reset(std::uint64_t episode_seed) override {
    Rng rng(episode_seed);
    bx_ = 1 + rng.below(grid_ - 2);
    by_ = 1 + rng.below(grid_ / 2);
    dx_ = rng.below(2) ? 1 : -1;
    dy_ = 1;
    paddle_ = grid_ / 2;
    done_ = false;
    steps_ = 0;
    return render();
  }

  StepResult<T> step(std::size_t action) override {
    if (done_) throw std::logic_error("minipong: step after done");
    if (action >= spec_.n_actions) throw std::invalid_argument("minipong: bad action");
    const std::size_t half = paddle_w_ / 2;
    if (action == 0 && paddle_ > half) --paddle_;
    if (action == 2 && paddle_ + half + 1 < grid_) ++paddle_;

    // wall bounces
    int nx = int(bx_) + dx_;
    if (nx < 0 || nx >= int(grid_)) {
      dx_ = -dx_;
      nx = int(bx_) + dx_;
    }
    int ny = int(by_) + dy_;
    if (ny < 0) {
      dy_ = 1;
      ny = int(by_) + dy_;
    }
    StepResult<T> r;
    if (ny == int(grid_) - 1) {
      const std::size_t lo = paddle_ - half, hi = paddle_ + half;
      if (std::size_t(nx) >= lo && std::size_t(nx) <= hi) {
        r.reward = 1.0;  // returned; bounce back up
        dy_ = -1;
        ny = int(grid_) - 2;
      } else {
        r.reward = -1.0;
        done_ = true;
      }
    }
    bx_ = std::size_t(nx);
    by_ = std::size_t(ny);
    ++steps_;
    if (steps_ >= spec_.max_episode_steps) done_ = true;
    r.done = done_;
    r.obs = render();
    return r;
  }

 private:
  Tensor<T> render() const {
    Tensor<T> f({grid_, grid_, 1}, Layout::FLAT);
    f[by_ * grid_ + bx_] = T(1);
    const std::size_t half = paddle_w_ / 2;
    for (std::size_t c = paddle_ - half; c <= paddle_ + half; ++c)
      f[(grid_ - 1) * grid_ + c] = T(1);
    return f;
  }

  std::size_t grid_, paddle_w_;
  EnvSpec spec_;
  std::size_t bx_ = 0, by_ = 0, paddle_ = 0, steps_ = 0;
  int dx_ = 1, dy_ = 1;
  bool done_ = true;
};

template <typename T>
std::unique_ptr<Env<T>> make_env(const std::string& name, std::size_t grid,
                                 std::size_t max_steps) {
  if (name == "catch") return std::make_unique<CatchEnv<T>>(grid == 0 ? 24 : grid);
  if (name == "minipong")
    return std::make_unique<MiniPongEnv<T>>(grid == 0 ? 32 : grid, 5,
                                            max_steps == 0 ? 200 : max_steps);
  throw std::invalid_argument("unknown env: " + name);
}

/// Nearest-neighbor resampling of a [h,w,c] frame; values stay in range.
template <typename T>
Tensor<T> rescale(const Tensor<T>& frame, std::size_t target_h, std::size_t target_w) {
  if (frame.rank() != 3) throw std::invalid_argument("rescale: [h,w,c] frame required");
  if (target_h == 0 || target_w == 0) throw std::invalid_argument("rescale: bad target");
  const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  if (target_h == H && target_w == W) return frame;
  Tensor<T> out({target_h, target_w, C}, Layout::FLAT);
  for (std::size_t i = 0; i < target_h; ++i) {
    const std::size_t si = i * H / target_h;
    for (std::size_t j = 0; j < target_w; ++j) {
      const std::size_t sj = j * W / target_w;
      for (std::size_t c = 0; c < C; ++c)
        out[(i * target_w + j) * C + c] = frame[(si * W + sj) * C + c];
    }
  }
  return out;
}

/// Channel-stacks the most recent frames, oldest first, zero-filled while
/// fewer than frame_history frames have been seen.
template <typename T>
Tensor<T> stack_frames(const std::deque<Tensor<T>>& history, std::size_t frame_history) {
  if (history.empty()) throw std::invalid_argument("stack_frames: empty history");
  if (history.size() > frame_history)
    throw std::invalid_argument("stack_frames: history longer than frame_history");
  const auto& newest = history.back();
  const std::size_t H = newest.dim(0), W = newest.dim(1), C = newest.dim(2);
  Tensor<T> out({H, W, C * frame_history}, Layout::FLAT);
  const std::size_t pad = frame_history - history.size();
  for (std::size_t f = 0; f < history.size(); ++f) {
    const auto& frame = history[f];
    const std::size_t block = pad + f;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t c = 0; c < C; ++c)
          out[(i * W + j) * (C * frame_history) + block * C + c] = frame[(i * W + j) * C + c];
  }
  return out;
}

/// Ring of the last frame_history frames with stacking.
template <typename T>
class FrameStack {
 public:
  explicit FrameStack(std::size_t frame_history) : frame_history_(frame_history) {
    if (frame_history == 0) throw std::invalid_argument("frame_history must be >= 1");
  }

  void clear() { frames_.clear(); }

  void push(Tensor<T> frame) {
    frames_.push_back(std::move(frame));
    if (frames_.size() > frame_history_) frames_.pop_front();
  }

  Tensor<T> state() const { return stack_frames(frames_, frame_history_); }

  std::size_t size() const { return frames_.size(); }

 private:
  std::size_t frame_history_;
  std::deque<Tensor<T>> frames_;
};

}  // namespace ba3c
