#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "ba3c/agent.hpp"
#include "ba3c/config.hpp"
#include "ba3c/env.hpp"
#include "ba3c/metrics.hpp"
#include "ba3c/nn.hpp"
#include "ba3c/optim.hpp"

namespace ba3c {

// ---------------------------------------------------------------------------
// Queue plumbing
// ---------------------------------------------------------------------------

struct PredictionRequest {
  std::size_t env_id = 0;
  Tensor<float> state;
  double enqueue_time = 0.0;
};

struct PredictionResult {
  std::size_t env_id = 0;
  std::vector<float> policy;
  float value = 0.0f;
};

struct TrainingBatch {
  std::vector<Experience<float>> experiences;
  std::uint64_t gen_version = 0;
};

/// Bounded blocking MPMC queue with close semantics. push/pop return false
/// once closed (pop still drains remaining items first).
template <typename Item>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("queue capacity must be >= 1");
  }

  bool push(Item item) {
    std::unique_lock lock(mu_);
    cv_push_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    cv_pop_.notify_one();
    return true;
  }

  /// push that finalizes the item under the queue lock, for metadata that
  /// must be recorded at enqueue time (e.g. model-version stamps)
  template <typename Stamp>
  bool push_stamped(Item item, Stamp&& stamp) {
    std::unique_lock lock(mu_);
    cv_push_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    stamp(item);
    items_.push_back(std::move(item));
    cv_pop_.notify_one();
    return true;
  }

  bool try_push(Item item) {
    std::lock_guard lock(mu_);
    if (closed_ || items_.size() >= capacity_) return false;
    items_.push_back(std::move(item));
    cv_pop_.notify_one();
    return true;
  }

  std::optional<Item> pop() {
    std::unique_lock lock(mu_);
    cv_pop_.wait(lock, [&] { return closed_ || !items_.empty(); });
    return take(lock);
  }

  std::optional<Item> try_pop() {
    std::unique_lock lock(mu_);
    if (items_.empty()) return std::nullopt;
    return take(lock);
  }

  template <typename Duration>
  std::optional<Item> pop_for(Duration d) {
    std::unique_lock lock(mu_);
    if (!cv_pop_.wait_for(lock, d, [&] { return closed_ || !items_.empty(); }))
      return std::nullopt;
    return take(lock);
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_push_.notify_all();
    cv_pop_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

  std::size_t capacity() const { return capacity_; }

 private:
  std::optional<Item> take(std::unique_lock<std::mutex>&) {
    if (items_.empty()) return std::nullopt;  // closed and drained
    Item item = std::move(items_.front());
    items_.pop_front();
    cv_push_.notify_one();
    return item;
  }

  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_push_, cv_pop_;
  std::deque<Item> items_;
  bool closed_ = false;
};

/// Fixed-size FIFO injecting a constant k-batch delay between generation
/// and training. Emits batch i only once batches i+1..i+k exist.
class DelayBuffer {
 public:
  explicit DelayBuffer(std::size_t k) : k_(k) {}

  std::optional<TrainingBatch> push(TrainingBatch b) {
    if (k_ == 0) return b;
    fifo_.push_back(std::move(b));
    if (fifo_.size() > k_) {
      TrainingBatch out = std::move(fifo_.front());
      fifo_.pop_front();
      return out;
    }
    return std::nullopt;
  }

  std::size_t size() const { return fifo_.size(); }
  std::size_t delay() const { return k_; }

 private:
  std::size_t k_;
  std::deque<TrainingBatch> fifo_;
};

// ---------------------------------------------------------------------------
// Environment worker
// ---------------------------------------------------------------------------

/// One environment plus its rollout state. Drives the env one step per
/// prediction result and emits n-step-return experience chunks, cut at
/// local_t_max (bootstrapped with the next state's value) or episode end.
class EnvWorker {
 public:
  EnvWorker(std::size_t id, std::unique_ptr<Env<float>> env, const RunConfig& cfg,
            std::uint64_t master_seed)
      : id_(id),
        env_(std::move(env)),
        cfg_(cfg),
        stack_(cfg.frame_history),
        episode_rng_(master_seed, 100 + id),
        action_rng_(master_seed, 200 + id) {}

  PredictionRequest start(double now) {
    begin_episode();
    return request(now);
  }

  struct Outcome {
    std::vector<Experience<float>> experiences;
    std::optional<double> episode_score;
    PredictionRequest next_request;
  };

  Outcome on_prediction(const PredictionResult& res, double now) {
    if (res.env_id != id_) throw std::logic_error("prediction routed to wrong worker");
    Outcome out;

    // a chunk cut at local_t_max bootstraps with the value of the state
    // that this prediction belongs to
    if (pending_flush_) {
      flush(double(res.value), /*terminal=*/false, out.experiences);
      pending_flush_ = false;
    }

    const auto& spec = env_->spec();
    const std::size_t action = select_action(res.policy.data(), spec.n_actions, action_rng_);
    const auto step = env_->step(action);
    states_.push_back(current_state_);
    actions_.push_back(action);
    rewards_.push_back(step.reward);
    score_ += std::max(step.reward, 0.0);

    if (step.done) {
      flush(0.0, /*terminal=*/true, out.experiences);
      out.episode_score = score_;
      begin_episode();
    } else {
      push_frame(step.obs);
      if (rewards_.size() >= cfg_.agent.local_t_max) pending_flush_ = true;
      current_state_ = stack_.state();
    }
    out.next_request = request(now);
    return out;
  }

  std::size_t id() const { return id_; }

 private:
  void begin_episode() {
    stack_.clear();
    states_.clear();
    actions_.clear();
    rewards_.clear();
    pending_flush_ = false;
    score_ = 0.0;
    push_frame(env_->reset(episode_rng_.next_u64()));
    current_state_ = stack_.state();
  }

  void push_frame(const Tensor<float>& obs) {
    stack_.push(rescale(obs, cfg_.image_h, cfg_.image_w));
  }

  PredictionRequest request(double now) const { return {id_, current_state_, now}; }

  void flush(double bootstrap_value, bool terminal, std::vector<Experience<float>>& out) {
    if (rewards_.empty()) return;
    const auto returns = compute_returns(rewards_, bootstrap_value, terminal, cfg_.agent.gamma);
    for (std::size_t i = 0; i < returns.size(); ++i)
      out.push_back({std::move(states_[i]), actions_[i], returns[i]});
    states_.clear();
    actions_.clear();
    rewards_.clear();
  }

  std::size_t id_;
  std::unique_ptr<Env<float>> env_;
  const RunConfig& cfg_;
  FrameStack<float> stack_;
  Rng episode_rng_, action_rng_;
  Tensor<float> current_state_;
  std::vector<Tensor<float>> states_;
  std::vector<std::size_t> actions_;
  std::vector<double> rewards_;
  bool pending_flush_ = false;
  double score_ = 0.0;
};

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

/// Plays n argmax games; the score of a game is its accumulated positive
/// reward. Deterministic for a given seed and parameter snapshot.
inline std::vector<double> evaluate_games(const NetworkArch& arch,
                                          const ModelParams<float>& params,
                                          const RunConfig& cfg, std::size_t n_games,
                                          std::uint64_t seed, JsonlWriter* trace = nullptr) {
  auto env = make_env<float>(cfg.env_name, cfg.env_grid, cfg.env_max_steps);
  Rng rng(seed, 300);
  std::vector<double> scores;
  scores.reserve(n_games);
  for (std::size_t g = 0; g < n_games; ++g) {
    FrameStack<float> stack(cfg.frame_history);
    stack.push(rescale(env->reset(rng.next_u64()), cfg.image_h, cfg.image_w));
    double score = 0.0;
    std::size_t step_idx = 0;
    for (;;) {
      const auto state = stack.state();
      Tensor<float> x({1, state.dim(0), state.dim(1), state.dim(2)}, Layout::NHWC);
      std::copy(state.data(), state.data() + state.size(), x.data());
      const auto out = network_forward(arch, params, x, cfg.conv_impl_enum());
      const std::size_t action =
          select_action(out.policy.data(), env->spec().n_actions, rng, /*eval=*/true);
      const auto r = env->step(action);
      score += std::max(r.reward, 0.0);
      if (trace)
        trace->write({{"game", g}, {"step", step_idx}, {"action", action},
                      {"reward", r.reward}, {"done", r.done}});
      ++step_idx;
      if (r.done) break;
      stack.push(rescale(r.obs, cfg.image_h, cfg.image_w));
    }
    scores.push_back(score);
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Run metrics
// ---------------------------------------------------------------------------

struct RunMetrics {
  std::uint64_t frames = 0;
  std::uint64_t train_steps = 0;
  double final_score = 0.0;     // mean over the last 50 evaluation games
  double best_score = 0.0;      // best mean-50 seen at any evaluation point
  double examples_per_s = 0.0;  // cumulative
  std::uint64_t max_staleness = 0;
  bool diverged = false;
};

// ---------------------------------------------------------------------------
// Trainer core (shared by sync, deterministic and threaded modes)
// ---------------------------------------------------------------------------

namespace detail {

class TrainerCore {
 public:
  TrainerCore(const RunConfig& cfg, const NetworkArch& arch, const Clock& clock,
              const std::string& metrics_path)
      : cfg_(cfg), arch_(arch), clock_(clock), writer_(metrics_path), delay_(cfg.pipeline.delay_k) {
    Rng init_rng(cfg.seed, 1);
    params_ = init_params<float>(arch, init_rng);
    adam_.cfg = cfg.optim;
    publish();
  }

  /// Feeds one batch through the delay buffer and trains on whatever it
  /// emits. Returns false once the run should stop (score target reached).
  bool handle_batch(TrainingBatch batch, std::size_t train_queue_depth,
                    std::size_t request_queue_depth) {
    auto emitted = delay_.push(std::move(batch));
    if (!emitted) return true;
    return train_on(std::move(*emitted), train_queue_depth, request_queue_depth);
  }

  bool train_on(TrainingBatch batch, std::size_t train_queue_depth,
                std::size_t request_queue_depth) {
    const std::uint64_t staleness = params_.version - batch.gen_version;
    const std::uint64_t bound =
        cfg_.pipeline.train_queue_capacity + cfg_.pipeline.delay_k + 1;
    if (staleness > bound)
      throw std::logic_error("staleness bound violated: " + std::to_string(staleness) +
                             " > " + std::to_string(bound));
    max_staleness_ = std::max(max_staleness_, staleness);

    const std::size_t B = batch.experiences.size();
    const auto& s0 = batch.experiences.front().state;
    Tensor<float> x({B, s0.dim(0), s0.dim(1), s0.dim(2)}, Layout::NHWC);
    std::vector<std::size_t> actions(B);
    std::vector<double> returns(B);
    const std::size_t stride = s0.size();
    for (std::size_t i = 0; i < B; ++i) {
      const auto& e = batch.experiences[i];
      std::copy(e.state.data(), e.state.data() + stride, x.data() + i * stride);
      actions[i] = e.action;
      returns[i] = e.return_target;
    }

    ForwardCache<float> cache;
    const auto out = network_forward(arch_, params_, x, cfg_.conv_impl_enum(), &cache);
    Tensor<float> dlogits, dvalue;
    a3c_head_gradients(out.policy, out.value, actions, returns, cfg_.agent, dlogits, dvalue);
    GradMap<float> grads;
    network_backward(arch_, params_, cache, dlogits, dvalue, grads, cfg_.conv_impl_enum());
    adam_step(params_, grads, adam_);
    publish();

    examples_ += B;
    last_staleness_ = staleness;
    ++train_steps_;
    meter_.record(examples_, clock_.now());

    if (cfg_.eval_interval > 0 && train_steps_ % cfg_.eval_interval == 0)
      run_eval(train_queue_depth, request_queue_depth);
    if (cfg_.stop_on_score > 0.0 && eval_scores_.size() >= 50 &&
        mean_score() >= cfg_.stop_on_score)
      return false;
    return true;
  }

  void run_eval(std::size_t train_queue_depth, std::size_t request_queue_depth) {
    const auto scores = evaluate_games(arch_, params_, cfg_, cfg_.eval_games,
                                       cfg_.seed + 7919 * (eval_round_ + 1));
    ++eval_round_;
    for (double s : scores) {
      eval_scores_.push_back(s);
      if (eval_scores_.size() > 50) eval_scores_.pop_front();
    }
    // "best" means best full 50-game evaluation window
    if (eval_scores_.size() >= 50) best_score_ = std::max(best_score_, mean_score());
    const double now = clock_.now();
    nlohmann::ordered_json rec{
        {"wall_time", now},
        {"frames", frames_seen_},
        {"train_steps", train_steps_},
        {"examples_per_s", meter_.windowed_rate().value_or(0.0)},
        {"examples_per_s_cum", meter_.cumulative_rate().value_or(0.0)},
        {"mean_score_50", mean_score()},
        {"queue_depths",
         {{"train", train_queue_depth}, {"predict_requests", request_queue_depth}}},
        {"staleness", last_staleness_},
        {"max_staleness", max_staleness_}};
    writer_.write(rec);
    writer_.flush();
  }

  /// Tops the evaluation history up to 50 games for the final report.
  RunMetrics finalize(std::uint64_t frames, bool diverged) {
    if (!diverged && eval_scores_.size() < 50) {
      const auto extra = evaluate_games(arch_, params_, cfg_, 50 - eval_scores_.size(),
                                        cfg_.seed + 977);
      for (double s : extra) eval_scores_.push_back(s);
      best_score_ = std::max(best_score_, mean_score());
    }
    RunMetrics m;
    m.frames = frames;
    m.train_steps = train_steps_;
    m.final_score = mean_score();
    m.best_score = best_score_;
    m.examples_per_s = meter_.cumulative_rate().value_or(0.0);
    m.max_staleness = max_staleness_;
    m.diverged = diverged;
    return m;
  }

  double mean_score() const {
    if (eval_scores_.empty()) return 0.0;
    double sum = 0.0;
    for (double s : eval_scores_) sum += s;
    return sum / double(eval_scores_.size());
  }

  void set_frames_seen(std::uint64_t f) { frames_seen_ = f; }
  std::uint64_t train_steps() const { return train_steps_; }

  std::shared_ptr<const ModelParams<float>> snapshot() const {
    return std::atomic_load(&snapshot_);
  }
  std::uint64_t version() const { return version_.load(std::memory_order_acquire); }

  ModelParams<float>& params() { return params_; }
  const AdamState<float>& adam() const { return adam_; }

 private:
  void publish() {
    auto snap = std::make_shared<const ModelParams<float>>(params_);
    std::atomic_store(&snapshot_, std::shared_ptr<const ModelParams<float>>(snap));
    version_.store(params_.version, std::memory_order_release);
  }

  const RunConfig& cfg_;
  const NetworkArch& arch_;
  const Clock& clock_;
  JsonlWriter writer_;
  DelayBuffer delay_;
  ModelParams<float> params_;
  AdamState<float> adam_;
  std::shared_ptr<const ModelParams<float>> snapshot_;
  std::atomic<std::uint64_t> version_{0};
  std::deque<double> eval_scores_;
  std::uint64_t train_steps_ = 0, examples_ = 0, frames_seen_ = 0;
  std::uint64_t max_staleness_ = 0, last_staleness_ = 0;
  std::size_t eval_round_ = 0;
  double best_score_ = 0.0;
  ThroughputMeter meter_;
};

/// Gathers experience chunks into fixed-size batches stamped with the model
/// version current at completion time.
class BatchAssembler {
 public:
  explicit BatchAssembler(std::size_t batch_size) : batch_size_(batch_size) {}

  /// Returns completed batches (usually 0 or 1).
  std::vector<TrainingBatch> add(std::vector<Experience<float>> chunk,
                                 std::uint64_t current_version) {
    std::lock_guard lock(mu_);
    std::vector<TrainingBatch> done;
    for (auto& e : chunk) {
      pending_.push_back(std::move(e));
      if (pending_.size() == batch_size_) {
        TrainingBatch b;
        b.experiences = std::move(pending_);
        b.gen_version = current_version;
        pending_.clear();
        done.push_back(std::move(b));
      }
    }
    return done;
  }

 private:
  std::size_t batch_size_;
  std::mutex mu_;
  std::vector<Experience<float>> pending_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Asynchronous pipeline (Figs. 1-3 topology)
// ---------------------------------------------------------------------------

struct RunResult {
  RunMetrics metrics;
  ModelParams<float> params;
  std::vector<CheckpointRecord> optimizer_records;
};

class AsyncPipeline {
 public:
  AsyncPipeline(RunConfig cfg, bool deterministic, std::string metrics_path = "")
      : cfg_(std::move(cfg)), deterministic_(deterministic), metrics_path_(std::move(metrics_path)) {
    cfg_.validate();
    auto probe = make_env<float>(cfg_.env_name, cfg_.env_grid, cfg_.env_max_steps);
    const auto& spec = probe->spec();
    n_actions_ = spec.n_actions;
    arch_ = make_arch(cfg_.net_arch, cfg_.image_h, cfg_.image_w,
                      spec.obs_channels * cfg_.frame_history, spec.n_actions);
    trunk_output_width(arch_);  // shape chain sanity
  }

  RunResult run() { return deterministic_ ? run_deterministic() : run_threaded(); }

  const NetworkArch& arch() const { return arch_; }

 private:
  std::unique_ptr<EnvWorker> make_worker(std::size_t id) {
    return std::make_unique<EnvWorker>(
        id, make_env<float>(cfg_.env_name, cfg_.env_grid, cfg_.env_max_steps), cfg_, cfg_.seed);
  }

  Tensor<float> batch_states(const std::vector<PredictionRequest>& reqs) const {
    const auto& s0 = reqs.front().state;
    Tensor<float> x({reqs.size(), s0.dim(0), s0.dim(1), s0.dim(2)}, Layout::NHWC);
    const std::size_t stride = s0.size();
    for (std::size_t i = 0; i < reqs.size(); ++i)
      std::copy(reqs[i].state.data(), reqs[i].state.data() + stride, x.data() + i * stride);
    return x;
  }

  std::vector<PredictionResult> predict(const ModelParams<float>& params,
                                        const std::vector<PredictionRequest>& reqs) const {
    const auto out = network_forward(arch_, params, batch_states(reqs), cfg_.conv_impl_enum());
    std::vector<PredictionResult> results(reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      results[i].env_id = reqs[i].env_id;
      results[i].policy.assign(out.policy.data() + i * n_actions_,
                               out.policy.data() + (i + 1) * n_actions_);
      results[i].value = out.value[i];
    }
    return results;
  }

  /// Single-context round-robin scheduling on a logical clock; bitwise
  /// reproducible for a fixed seed.
  RunResult run_deterministic() {
    LogicalClock clock;
    detail::TrainerCore trainer(cfg_, arch_, clock, metrics_path_);
    detail::BatchAssembler assembler(cfg_.batch_size);

    const std::size_t n = cfg_.pipeline.n_envs;
    std::vector<std::unique_ptr<EnvWorker>> workers;
    std::vector<std::optional<PredictionResult>> mailboxes(n);
    std::vector<PredictionRequest> request_queue;
    std::deque<TrainingBatch> train_queue;
    std::uint64_t frames = 0;
    bool stop = false, diverged = false;

    for (std::size_t i = 0; i < n; ++i) {
      workers.push_back(make_worker(i));
      request_queue.push_back(workers.back()->start(clock.now()));
    }

    while (!stop && frames < cfg_.total_frames) {
      // environment workers
      for (std::size_t i = 0; i < n && !stop; ++i) {
        if (!mailboxes[i]) continue;
        const PredictionResult res = std::move(*mailboxes[i]);
        mailboxes[i].reset();
        auto outcome = workers[i]->on_prediction(res, clock.now());
        ++frames;
        if (!outcome.experiences.empty()) {
          for (auto& b : assembler.add(std::move(outcome.experiences), trainer.version())) {
            if (train_queue.size() >= cfg_.pipeline.train_queue_capacity)
              throw std::logic_error("training queue overflow");
            train_queue.push_back(std::move(b));
          }
        }
        request_queue.push_back(std::move(outcome.next_request));
      }

      // trainer first, so the round's predictions use the freshest model
      // (with one env this makes the schedule identical to run_sync)
      trainer.set_frames_seen(frames);
      while (!train_queue.empty() && !stop) {
        TrainingBatch b = std::move(train_queue.front());
        train_queue.pop_front();
        try {
          if (!trainer.handle_batch(std::move(b), train_queue.size(), request_queue.size()))
            stop = true;
        } catch (const std::runtime_error&) {
          diverged = true;
          stop = true;
        }
      }

      // batching predictor: one batched forward over everything pending
      if (!request_queue.empty()) {
        const auto snap = trainer.snapshot();
        auto results = predict(*snap, request_queue);
        for (auto& r : results) mailboxes[r.env_id] = std::move(r);
        request_queue.clear();
      }

      clock.advance(0.001);  // one logical millisecond per scheduler round
    }

    RunResult result{trainer.finalize(frames, diverged), std::move(trainer.params()),
                     trainer.adam().to_records()};
    return result;
  }

  RunResult run_threaded() {
    RealClock clock;
    detail::TrainerCore trainer(cfg_, arch_, clock, metrics_path_);
    detail::BatchAssembler assembler(cfg_.batch_size);

    const std::size_t n = cfg_.pipeline.n_envs;
    BoundedQueue<PredictionRequest> request_queue(n);
    BoundedQueue<TrainingBatch> train_queue(cfg_.pipeline.train_queue_capacity);
    std::vector<std::unique_ptr<BoundedQueue<PredictionResult>>> mailboxes;
    for (std::size_t i = 0; i < n; ++i)
      mailboxes.push_back(std::make_unique<BoundedQueue<PredictionResult>>(1));

    std::atomic<std::uint64_t> frames{0};
    std::atomic<bool> stop{false}, diverged{false}, watchdog_fired{false};
    std::atomic<std::uint64_t> trainer_progress{0};

    auto shut_down = [&] {
      stop.store(true);
      request_queue.close();
      train_queue.close();
      for (auto& m : mailboxes) m->close();
    };

    // environment threads
    std::vector<std::thread> env_threads;
    std::vector<std::unique_ptr<EnvWorker>> workers;
    for (std::size_t i = 0; i < n; ++i) workers.push_back(make_worker(i));
    for (std::size_t i = 0; i < n; ++i) {
      env_threads.emplace_back([&, i] {
        if (!request_queue.push(workers[i]->start(clock.now()))) return;
        for (;;) {
          auto res = mailboxes[i]->pop();
          if (!res) return;
          auto outcome = workers[i]->on_prediction(*res, clock.now());
          if (frames.fetch_add(1) + 1 >= cfg_.total_frames) stop.store(true);
          if (!outcome.experiences.empty()) {
            // re-stamp at enqueue time: the staleness bound is relative to
            // the model version when the batch enters the training queue
            for (auto& b : assembler.add(std::move(outcome.experiences), trainer.version())) {
              const bool ok = train_queue.push_stamped(
                  std::move(b), [&](TrainingBatch& tb) { tb.gen_version = trainer.version(); });
              if (!ok) return;
            }
          }
          if (stop.load() || !request_queue.push(std::move(outcome.next_request))) return;
        }
      });
    }

    // prediction thread: gather at least predict_min_batch requests or
    // whatever arrived within the timeout, run one batched forward
    std::thread predictor([&] {
      const auto timeout = std::chrono::duration<double, std::milli>(
          cfg_.pipeline.predict_timeout_ms);
      for (;;) {
        std::vector<PredictionRequest> batch;
        auto first = request_queue.pop();
        if (!first) return;
        batch.push_back(std::move(*first));
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
        while (batch.size() < cfg_.pipeline.predict_min_batch &&
               std::chrono::steady_clock::now() < deadline) {
          auto more = request_queue.pop_for(std::chrono::microseconds(200));
          if (more) batch.push_back(std::move(*more));
          if (stop.load()) break;
        }
        while (batch.size() < n) {
          auto more = request_queue.try_pop();
          if (!more) break;
          batch.push_back(std::move(*more));
        }
        const auto snap = trainer.snapshot();
        for (auto& r : predict(*snap, batch)) {
          const std::size_t id = r.env_id;
          if (!mailboxes[id]->push(std::move(r))) return;
        }
        if (stop.load()) return;
      }
    });

    // training thread
    std::thread train_thread([&] {
      for (;;) {
        auto b = train_queue.pop();
        if (!b) return;
        trainer.set_frames_seen(frames.load());
        try {
          const bool keep_going =
              trainer.handle_batch(std::move(*b), train_queue.size(), request_queue.size());
          trainer_progress.fetch_add(1);
          if (!keep_going) {
            stop.store(true);
            return;
          }
        } catch (const std::runtime_error&) {
          diverged.store(true);
          stop.store(true);
          return;
        }
        if (stop.load()) return;
      }
    });

    // watchdog: abort with a queue-depth dump if the trainer stalls
    std::thread watchdog([&] {
      std::uint64_t last = trainer_progress.load();
      double last_change = clock.now();
      while (!stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        const std::uint64_t cur = trainer_progress.load();
        if (cur != last) {
          last = cur;
          last_change = clock.now();
        } else if (clock.now() - last_change > cfg_.pipeline.watchdog_s) {
          std::fprintf(stderr,
                       "watchdog: no trainer progress for %.1fs "
                       "(queues: train=%zu requests=%zu)\n",
                       cfg_.pipeline.watchdog_s, train_queue.size(), request_queue.size());
          watchdog_fired.store(true);
          shut_down();
          return;
        }
      }
    });

    // wait for the frame budget or an early stop
    while (!stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    shut_down();
    for (auto& t : env_threads) t.join();
    predictor.join();
    train_thread.join();
    watchdog.join();
    if (watchdog_fired.load()) throw std::runtime_error("pipeline aborted by watchdog");

    RunResult result{trainer.finalize(frames.load(), diverged.load()),
                     std::move(trainer.params()), trainer.adam().to_records()};
    return result;
  }

  RunConfig cfg_;
  bool deterministic_;
  std::string metrics_path_;
  NetworkArch arch_;
  std::size_t n_actions_ = 0;
};

// ---------------------------------------------------------------------------
// Synchronous reference mode
// ---------------------------------------------------------------------------

/// Single environment, strictly sequential: play, memorize, train. The
/// baseline the asynchronous modes are compared against.
inline RunResult run_sync(const RunConfig& cfg, const std::string& metrics_path = "") {
  RunConfig c = cfg;
  c.pipeline.n_envs = 1;
  c.pipeline.delay_k = 0;
  c.pipeline.predict_min_batch = 1;
  c.validate();
  AsyncPipeline probe(c, true, "");

  LogicalClock clock;
  const NetworkArch arch = probe.arch();
  detail::TrainerCore trainer(c, arch, clock, metrics_path);
  detail::BatchAssembler assembler(c.batch_size);
  EnvWorker worker(0, make_env<float>(c.env_name, c.env_grid, c.env_max_steps), c, c.seed);

  std::uint64_t frames = 0;
  bool stop = false, diverged = false;
  PredictionRequest req = worker.start(clock.now());
  while (!stop && frames < c.total_frames) {
    // predict for the single pending state with the current model
    const auto snap = trainer.snapshot();
    Tensor<float> x({1, req.state.dim(0), req.state.dim(1), req.state.dim(2)}, Layout::NHWC);
    std::copy(req.state.data(), req.state.data() + req.state.size(), x.data());
    const auto out = network_forward(arch, *snap, x, c.conv_impl_enum());
    PredictionResult res;
    res.env_id = 0;
    res.policy.assign(out.policy.data(), out.policy.data() + out.policy.size());
    res.value = out.value[0];

    auto outcome = worker.on_prediction(res, clock.now());
    ++frames;
    trainer.set_frames_seen(frames);
    if (!outcome.experiences.empty()) {
      for (auto& b : assembler.add(std::move(outcome.experiences), trainer.version())) {
        try {
          if (!trainer.handle_batch(std::move(b), 0, 0)) stop = true;
        } catch (const std::runtime_error&) {
          diverged = true;
          stop = true;
        }
      }
    }
    req = std::move(outcome.next_request);
    clock.advance(0.001);
  }
  return {trainer.finalize(frames, diverged), std::move(trainer.params()),
          trainer.adam().to_records()};
}

}  // namespace ba3c
