#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ba3c/bench.hpp"
#include "ba3c/experiments.hpp"
#include "ba3c/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ba3c;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

bool deterministic_mode() {
  const char* v = std::getenv("BA3C_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

struct ConfigFlags {
  std::string config_file;
  std::string profile = "desk";
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string output_dir;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_file, "JSON config file (flat dotted keys)");
  cmd->add_option("--profile", flags.profile, "base profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--set", flags.overrides, "override as key=value, repeatable");
  cmd->add_option("--seed", flags.seed, "run seed (overrides config)");
  cmd->add_option("--output-dir", flags.output_dir, "output directory");
}

/// Resolution order: Table-1 defaults, profile, config file, --set, flags.
RunConfig resolve_config(const ConfigFlags& flags) {
  RunConfig cfg;
  apply_profile(cfg, flags.profile);
  if (!flags.config_file.empty()) {
    std::ifstream is(flags.config_file);
    if (!is) throw std::invalid_argument("cannot open config file: " + flags.config_file);
    nlohmann::json j;
    is >> j;
    apply_config_json(cfg, j);
  }
  for (const auto& kv : flags.overrides) apply_config_override(cfg, kv);
  if (flags.seed >= 0) cfg.seed = std::uint64_t(flags.seed);
  if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
  cfg.validate();
  return cfg;
}

/// Every run drops an exact copy of its resolved config beside its outputs.
void write_resolved_config(const RunConfig& cfg) {
  std::ofstream os(fs::path(cfg.output_dir) / "config.json");
  os << config_to_json(cfg).dump(2) << "\n";
}

ModelParams<float> params_from_records(const std::vector<CheckpointRecord>& records) {
  ModelParams<float> params;
  for (const auto& r : records) {
    if (r.name.rfind("adam.", 0) == 0) continue;
    params.add(r.name, r.to_tensor<float>());
  }
  return params;
}

int cmd_train(const ConfigFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  fs::create_directories(cfg.output_dir);
  write_resolved_config(cfg);
  const auto metrics_path = (fs::path(cfg.output_dir) / "metrics.jsonl").string();

  AsyncPipeline pipeline(cfg, deterministic_mode(), metrics_path);
  const auto result = pipeline.run();

  auto records = result.params.to_records();
  for (const auto& r : result.optimizer_records) records.push_back(r);
  save_checkpoint_file((fs::path(cfg.output_dir) / "model.ckpt").string(), records);
  {
    std::ofstream os(fs::path(cfg.output_dir) / "arch.json");
    os << pipeline.arch().to_json().dump(2) << "\n";
  }

  const auto& m = result.metrics;
  nlohmann::ordered_json summary{{"frames", m.frames},
                                 {"train_steps", m.train_steps},
                                 {"final_score", m.final_score},
                                 {"best_score", m.best_score},
                                 {"examples_per_s", m.examples_per_s},
                                 {"max_staleness", m.max_staleness},
                                 {"diverged", m.diverged}};
  std::cout << summary.dump() << "\n";
  return m.diverged ? kExitRuntimeError : kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const std::string& checkpoint, std::string arch_path,
             std::size_t games, const std::string& trace_path) {
  if (!fs::exists(checkpoint)) {
    std::cerr << "eval: checkpoint not found: " << checkpoint << "\n";
    return kExitConfigError;
  }
  if (arch_path.empty()) arch_path = (fs::path(checkpoint).parent_path() / "arch.json").string();
  std::ifstream arch_is(arch_path);
  if (!arch_is) {
    std::cerr << "eval: network descriptor not found: " << arch_path << "\n";
    return kExitConfigError;
  }
  nlohmann::json arch_json;
  arch_is >> arch_json;
  const auto arch = NetworkArch::from_json(arch_json);
  const auto params = params_from_records(load_checkpoint_file(checkpoint));

  const RunConfig cfg = resolve_config(flags);
  JsonlWriter trace(trace_path);
  const auto scores = evaluate_games(arch, params, cfg, games, cfg.seed,
                                     trace_path.empty() ? nullptr : &trace);
  double mean = 0.0, mx = scores.front();
  for (double s : scores) mean += s, mx = std::max(mx, s);
  mean /= double(scores.size());
  std::cout << nlohmann::ordered_json{{"mean", mean}, {"max", mx}, {"games", games}}.dump()
            << "\n";
  return kExitOk;
}

int cmd_delay_sweep(const ConfigFlags& flags, std::vector<std::size_t> delays,
                    std::size_t n_seeds, bool skip_probe) {
  const RunConfig cfg = resolve_config(flags);
  fs::create_directories(cfg.output_dir);
  write_resolved_config(cfg);
  if (delays.empty()) delays = {0, 5, 10, 25, 50};
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + i);

  std::ofstream report(fs::path(cfg.output_dir) / "delay_sweep.log");
  const bool det = deterministic_mode();
  if (!skip_probe && !det) {
    RunConfig probe_cfg = cfg;
    probe_cfg.total_frames = std::min<std::size_t>(cfg.total_frames, 2000);
    queue_capacity_probe(probe_cfg, report);
    report.flush();
  }
  const auto rows = delay_sweep(cfg, delays, seeds, det, &report);
  write_delay_sweep_csv((fs::path(cfg.output_dir) / "delay_sweep.csv").string(), rows);
  write_delay_sweep_svg((fs::path(cfg.output_dir) / "delay_sweep.svg").string(), rows);
  for (const auto& [k, mean] : delay_sweep_means(rows))
    std::cout << "delay " << k << ": mean best score " << mean << "\n";
  return kExitOk;
}

int cmd_search(const ConfigFlags& flags, std::size_t trials) {
  const RunConfig cfg = resolve_config(flags);
  fs::create_directories(cfg.output_dir);
  write_resolved_config(cfg);
  SearchSpace space;
  std::ofstream log(fs::path(cfg.output_dir) / "search.log");
  const auto results = random_search(space, trials, cfg, deterministic_mode(), &log);
  write_search_csv((fs::path(cfg.output_dir) / "search.csv").string(), results);
  write_heatmap_csv((fs::path(cfg.output_dir) / "search_heatmap.csv").string(), results);
  write_search_heatmap_svg((fs::path(cfg.output_dir) / "search_heatmap.svg").string(), space,
                           results);
  const auto& best = results.front();
  std::cout << nlohmann::ordered_json{{"best_trial", best.trial},
                                      {"lr", best.lr},
                                      {"batch", best.batch_size},
                                      {"score_mean", best.score_mean}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_bench(const std::string& cases, const std::string& output_dir, std::size_t repeats,
              std::size_t warmup, std::size_t batch) {
  fs::create_directories(output_dir);
  std::vector<BenchCase> conv_cases;
  if (cases == "canonical") {
    conv_cases = canonical_cases(repeats, warmup);
  } else {  // a fast scaled-down set with the same layer geometry
    conv_cases = canonical_cases(repeats, warmup);
    for (auto& c : conv_cases) c.shape.batch = batch;
  }
  auto rows = run_bench(conv_cases);
  std::vector<std::vector<std::size_t>> shapes;
  for (std::size_t i = 0; i < conv_cases.size(); i += 3) {
    const auto& s = conv_cases[i].shape;
    shapes.push_back({s.batch, s.in_h, s.in_w, s.in_c});
  }
  for (const auto& r : run_convert_bench(shapes, repeats, warmup)) rows.push_back(r);

  write_bench_csv((fs::path(output_dir) / "bench.csv").string(), rows);
  const auto md = bench_markdown(rows);
  std::ofstream(fs::path(output_dir) / "bench.md") << md;
  std::cout << md;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BA3C: batched asynchronous advantage actor-critic"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, sweep_flags, search_flags;

  auto* train = app.add_subcommand("train", "train a policy, write checkpoint + metrics");
  add_config_flags(train, train_flags);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over N games");
  add_config_flags(eval, eval_flags);
  std::string checkpoint, arch_path, trace_path;
  std::size_t games = 50;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--arch", arch_path, "network descriptor (default: arch.json next to ckpt)");
  eval->add_option("--games", games, "number of evaluation games");
  eval->add_option("--trace", trace_path, "write per-step episode trace JSONL here");

  auto* sweep = app.add_subcommand("delay-sweep", "train across gradient delays, report scores");
  add_config_flags(sweep, sweep_flags);
  std::vector<std::size_t> delays;
  std::size_t sweep_seeds = 3;
  bool skip_probe = false;
  sweep->add_option("--delays", delays, "delay values (default 0 5 10 25 50)");
  sweep->add_option("--seeds", sweep_seeds, "seeds per delay point");
  sweep->add_flag("--no-probe", skip_probe, "skip the queue-capacity throughput probe");

  auto* search = app.add_subcommand("search", "loguniform random search over lr and batch");
  add_config_flags(search, search_flags);
  std::size_t trials = 20;
  search->add_option("--trials", trials, "number of trials");

  auto* bench = app.add_subcommand("bench", "convolution / layout micro-benchmarks");
  std::string bench_cases = "canonical", bench_out = "out";
  std::size_t bench_repeats = 20, bench_warmup = 3, bench_batch = 8;
  bench->add_option("--cases", bench_cases, "canonical or small")
      ->check(CLI::IsMember({"canonical", "small"}));
  bench->add_option("--output-dir", bench_out, "output directory");
  bench->add_option("--repeats", bench_repeats, "timed repeats per case");
  bench->add_option("--warmup", bench_warmup, "warmup runs per case");
  bench->add_option("--batch", bench_batch, "batch size for the small case set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed())
      return cmd_eval(eval_flags, checkpoint, arch_path, games, trace_path);
    if (sweep->parsed()) return cmd_delay_sweep(sweep_flags, delays, sweep_seeds, skip_probe);
    if (search->parsed()) return cmd_search(search_flags, trials);
    if (bench->parsed())
      return cmd_bench(bench_cases, bench_out, bench_repeats, bench_warmup, bench_batch);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}
