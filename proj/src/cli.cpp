#include "qac/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "qac/metrics.hpp"
#include "qac/reference.hpp"
#include "qac/util.hpp"

namespace qac::cli {

namespace {

int default_agents() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

envs::EnvSpec env_from_name(const std::string& name, const RunConfig& cfg) {
  envs::EnvSpec spec = cfg.env;
  if (name == "bandit") {
    spec.kind = envs::EnvKind::ContextualBandit;
  } else if (name == "catch") {
    spec.kind = envs::EnvKind::Catch;
  } else if (name == "delay-lab" || name == "delay_lab") {
    spec.kind = envs::EnvKind::DelayLab;
  } else {
    throw UsageError("unknown environment '" + name + "' (want bandit, catch or delay-lab)");
  }
  return spec;
}

std::string with_suffix(const std::string& path, const std::string& tag) {
  std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path();
  out /= p.stem().string() + tag + p.extension().string();
  return out.string();
}

void print_report(const pipeline::RunReport& rep) {
  std::printf("updates        %lld (skipped %lld)\n",
              static_cast<long long>(rep.total_updates),
              static_cast<long long>(rep.skipped_updates));
  std::printf("predictions    %lld\n", static_cast<long long>(rep.total_predictions));
  std::printf("episodes       %lld\n", static_cast<long long>(rep.total_episodes));
  std::printf("wall time      %.2f s\n", rep.wall_time_s);
  std::printf("tps / pps      %.1f / %.1f\n", rep.avg_tps, rep.avg_pps);
  std::printf("mean lag       %.3f versions\n", rep.mean_lag);
  std::printf("final knobs    agents=%d predictors=%d trainers=%d\n", rep.final_knobs.n_agents,
              rep.final_knobs.n_predictors, rep.final_knobs.n_trainers);
  if (rep.total_episodes > 0)
    std::printf("rolling score  %.4f\n", rep.final_rolling_score);
  if (!rep.metrics_path.empty()) std::printf("metrics csv    %s\n", rep.metrics_path.c_str());
}

pipeline::PipelineOptions to_pipeline_options(const RunConfig& cfg) {
  pipeline::PipelineOptions opt;
  opt.net = net_for_env(cfg.env, cfg.hidden_dims);
  opt.hyper = cfg.hyper;
  opt.env = cfg.env;
  opt.knobs = cfg.knobs;
  opt.stop = cfg.stop;
  opt.seed = cfg.seed;
  opt.anneal = cfg.anneal;
  opt.epoch_s = cfg.epoch_s;
  opt.limits = cfg.limits;
  opt.metrics_interval_s = cfg.metrics_interval_s;
  opt.metrics_out = cfg.metrics_out;
  opt.greedy = cfg.greedy;
  return opt;
}

int cmd_train(const RunConfig& cfg) {
  pipeline::RunReport rep = pipeline::run(to_pipeline_options(cfg));
  print_report(rep);
  return 0;
}

int cmd_train_sync(const RunConfig& cfg) {
  reference::SyncConfig sc;
  sc.net = net_for_env(cfg.env, cfg.hidden_dims);
  sc.hyper = cfg.hyper;
  sc.env = cfg.env;
  sc.n_agents = cfg.knobs.n_agents;
  sc.max_updates = cfg.stop.max_updates.value_or(0);
  sc.seed = cfg.seed;
  sc.greedy = cfg.greedy;
  sc.metrics_interval_s = cfg.metrics_interval_s;
  sc.metrics_out = cfg.metrics_out;
  pipeline::RunReport rep = reference::train_sync(sc);
  print_report(rep);
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  pipeline::RunReport rep = pipeline::run(to_pipeline_options(cfg));
  print_report(rep);
  const double per_update = rep.total_updates > 0 ? rep.avg_pps / rep.avg_tps : 0.0;
  std::printf("pps/tps ratio  %.2f (balanced is ~t_max = %d)\n", per_update, cfg.hyper.t_max);
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  std::ofstream agg(cfg.metrics_out);
  if (!agg) throw std::runtime_error("sweep: cannot open " + cfg.metrics_out);
  agg << "n_a,n_p,n_t,updates,tps,pps,mean_lag,wall_s\n";
  for (int na : cfg.agents_list) {
    for (int np : cfg.predictors_list) {
      for (int nt : cfg.trainers_list) {
        RunConfig one = cfg;
        one.knobs.n_agents = na;
        one.knobs.n_predictors = np;
        one.knobs.n_trainers = nt;
        char tag[64];
        std::snprintf(tag, sizeof(tag), "_a%d_p%d_t%d", na, np, nt);
        one.metrics_out = with_suffix(cfg.metrics_out, tag);
        pipeline::RunReport rep = pipeline::run(to_pipeline_options(one));
        std::printf("a=%d p=%d t=%d  tps=%.1f pps=%.1f lag=%.2f\n", na, np, nt, rep.avg_tps,
                    rep.avg_pps, rep.mean_lag);
        agg << na << ',' << np << ',' << nt << ',' << rep.total_updates << ',' << rep.avg_tps
            << ',' << rep.avg_pps << ',' << rep.mean_lag << ',' << rep.wall_time_s << '\n';
      }
    }
  }
  std::printf("sweep summary  %s\n", cfg.metrics_out.c_str());
  return 0;
}

int cmd_lag_study(const RunConfig& cfg) {
  std::ofstream agg(cfg.metrics_out);
  if (!agg) throw std::runtime_error("lag-study: cannot open " + cfg.metrics_out);
  agg << "min_train_batch,updates,tps,pps,mean_lag,final_score\n";
  for (int mb : cfg.min_batch_list) {
    RunConfig one = cfg;
    one.knobs.min_train_batch = mb;
    char tag[32];
    std::snprintf(tag, sizeof(tag), "_mb%d", mb);
    one.metrics_out = with_suffix(cfg.metrics_out, tag);
    pipeline::RunReport rep = pipeline::run(to_pipeline_options(one));
    std::printf("min_batch=%-4d tps=%.1f pps=%.1f mean_lag=%.3f score=%.3f\n", mb, rep.avg_tps,
                rep.avg_pps, rep.mean_lag, rep.final_rolling_score);
    agg << mb << ',' << rep.total_updates << ',' << rep.avg_tps << ',' << rep.avg_pps << ','
        << rep.mean_lag << ',' << rep.final_rolling_score << '\n';
  }
  std::printf("lag study      %s\n", cfg.metrics_out.c_str());
  return 0;
}

}  // namespace

nnet::NetworkSpec net_for_env(const envs::EnvSpec& env, const std::vector<int>& hidden_dims) {
  auto probe = envs::make_env(env);
  nnet::NetworkSpec net;
  net.input_dim = probe->observation_dim();
  net.hidden_dims = hidden_dims;
  net.n_actions = probe->action_count();
  return net;
}

RunConfig parse_args(const std::vector<std::string>& args) {
  RunConfig cfg;
  cfg.knobs.n_agents = default_agents();

  CLI::App app{"actor-critic trainer with a shared prediction/training service"};
  app.require_subcommand(1);

  std::string env_name = "bandit";
  std::string agents_csv, predictors_csv, trainers_csv, min_batch_csv, hidden_csv;
  std::int64_t max_updates = -1;
  double max_seconds = -1.0;
  double target_score = std::numeric_limits<double>::quiet_NaN();

  auto add_common = [&](CLI::App* sub, bool lists) {
    sub->add_option("--env", env_name, "environment: bandit, catch or delay-lab");
    sub->add_option("--contexts", cfg.env.n_contexts, "bandit contexts");
    sub->add_option("--arms", cfg.env.n_actions, "bandit arms");
    sub->add_option("--grid", cfg.env.grid_size, "catch grid size");
    sub->add_option("--step-delay-us", cfg.env.step_delay_us, "delay-lab per-step busy wait");
    sub->add_option("--episode-len", cfg.env.episode_len, "delay-lab episode length");
    sub->add_option("--action-repeat", cfg.env.action_repeat, "repeat each action this many times");
    sub->add_option("--hidden", hidden_csv, "hidden layer sizes, comma separated (default 32)");
    if (lists) {
      sub->add_option("--agents", agents_csv, "agent counts, comma separated");
      sub->add_option("--predictors", predictors_csv, "predictor counts, comma separated");
      sub->add_option("--trainers", trainers_csv, "trainer counts, comma separated");
    } else {
      sub->add_option("--agents", cfg.knobs.n_agents, "agent threads (default: cpu count)");
      sub->add_option("--predictors", cfg.knobs.n_predictors, "predictor threads");
      sub->add_option("--trainers", cfg.knobs.n_trainers, "trainer threads");
    }
    sub->add_flag("--anneal", cfg.anneal, "tune pool sizes by throughput every epoch");
    sub->add_option("--epoch-s", cfg.epoch_s, "annealing epoch length in seconds");
    sub->add_option("--max-agents", cfg.limits.max_agents, "annealing ceiling for agents");
    sub->add_option("--max-predictors", cfg.limits.max_predictors,
                    "annealing ceiling for predictors");
    sub->add_option("--max-trainers", cfg.limits.max_trainers, "annealing ceiling for trainers");
    sub->add_option("--min-batch", cfg.knobs.min_train_batch,
                    "trainer coalesces queued batches up to this many experiences");
    sub->add_option("--pred-batch-max", cfg.knobs.pred_batch_max, "prediction batch cap");
    sub->add_option("--queue-cap", cfg.knobs.train_queue_cap, "training queue capacity");
    sub->add_option("--tmax", cfg.hyper.t_max, "segment length between updates");
    sub->add_option("--gamma", cfg.hyper.gamma, "discount");
    sub->add_option("--beta", cfg.hyper.beta, "entropy bonus weight");
    sub->add_option("--lr", cfg.hyper.eta, "learning rate (3e-4 default, 1e-4 conservative)");
    sub->add_option("--eps-log", cfg.hyper.eps_log, "epsilon inside log and entropy");
    sub->add_option("--alpha", cfg.hyper.alpha, "rmsprop decay");
    sub->add_option("--eps-rms", cfg.hyper.eps_rms, "rmsprop denominator epsilon");
    sub->add_option("--clip-norm", cfg.hyper.grad_clip_norm,
                    "gradient norm clip, 0 disables (default)");
    sub->add_flag("--clip-rewards", cfg.hyper.clip_rewards, "clip rewards to [-1, 1]");
    sub->add_flag("--greedy", cfg.greedy, "act by argmax instead of sampling");
    sub->add_option("--max-updates", max_updates, "stop after this many optimizer updates");
    sub->add_option("--max-seconds", max_seconds, "stop after this much wall time");
    sub->add_option("--target-score", target_score, "stop at this rolling episode score");
    sub->add_option("--metrics-out", cfg.metrics_out, "metrics csv path");
    sub->add_option("--metrics-interval-s", cfg.metrics_interval_s, "seconds between csv rows");
    sub->add_option("--seed", cfg.seed, "master seed");
  };

  CLI::App* train = app.add_subcommand("train", "concurrent training run");
  CLI::App* train_sync = app.add_subcommand("train-sync", "single-thread zero-lag reference run");
  CLI::App* bench = app.add_subcommand("bench", "throughput measurement run");
  CLI::App* sweep = app.add_subcommand("sweep", "grid over pool sizes");
  CLI::App* lag_study = app.add_subcommand("lag-study", "sweep trainer coalescing size");
  add_common(train, false);
  add_common(train_sync, false);
  add_common(bench, false);
  add_common(sweep, true);
  add_common(lag_study, false);
  std::string min_batch_list_csv;
  lag_study->add_option("--min-batch-list", min_batch_list_csv,
                        "comma separated coalescing sizes to sweep");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    std::ostringstream os;
    os << app.help();
    throw UsageError(os.str(), 0);
  } catch (const CLI::ParseError& e) {
    throw UsageError(std::string(e.what()));
  }

  auto parse_int_list = [](const std::string& csv, const char* what) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      int v = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw UsageError(std::string("bad value '") + tok + "' in " + what);
      out.push_back(v);
    }
    if (out.empty()) throw UsageError(std::string("empty list for ") + what);
    return out;
  };

  if (train->parsed()) cfg.command = Command::Train;
  if (train_sync->parsed()) cfg.command = Command::TrainSync;
  if (bench->parsed()) cfg.command = Command::Bench;
  if (sweep->parsed()) cfg.command = Command::Sweep;
  if (lag_study->parsed()) cfg.command = Command::LagStudy;

  cfg.env = env_from_name(env_name, cfg);
  if (!hidden_csv.empty()) cfg.hidden_dims = parse_int_list(hidden_csv, "--hidden");

  int stops = 0;
  if (max_updates >= 0) {
    cfg.stop.max_updates = max_updates;
    ++stops;
  }
  if (max_seconds >= 0.0) {
    cfg.stop.max_seconds = max_seconds;
    ++stops;
  }
  if (!std::isnan(target_score)) {
    cfg.stop.target_score = target_score;
    ++stops;
  }

  switch (cfg.command) {
    case Command::Train:
    case Command::TrainSync:
      if (stops != 1)
        throw UsageError("pick exactly one of --max-updates, --max-seconds, --target-score");
      if (cfg.command == Command::TrainSync && !cfg.stop.max_updates)
        throw UsageError("train-sync stops on --max-updates only");
      break;
    case Command::Bench:
      if (stops > 1)
        throw UsageError("pick at most one of --max-updates, --max-seconds, --target-score");
      if (stops == 0) cfg.stop.max_seconds = 10.0;
      break;
    case Command::Sweep:
      if (stops > 1) throw UsageError("pick at most one stop condition for sweep");
      if (stops == 0) cfg.stop.max_seconds = 5.0;
      cfg.agents_list = agents_csv.empty() ? std::vector<int>{cfg.knobs.n_agents}
                                           : parse_int_list(agents_csv, "--agents");
      cfg.predictors_list = predictors_csv.empty()
                                ? std::vector<int>{cfg.knobs.n_predictors}
                                : parse_int_list(predictors_csv, "--predictors");
      cfg.trainers_list = trainers_csv.empty() ? std::vector<int>{cfg.knobs.n_trainers}
                                               : parse_int_list(trainers_csv, "--trainers");
      break;
    case Command::LagStudy:
      if (stops > 1) throw UsageError("pick at most one stop condition for lag-study");
      if (stops == 0) cfg.stop.max_updates = 2000;
      if (!min_batch_list_csv.empty())
        cfg.min_batch_list = parse_int_list(min_batch_list_csv, "--min-batch-list");
      break;
  }
  return cfg;
}

int run_main(const RunConfig& cfg) {
  switch (cfg.command) {
    case Command::Train:
      return cmd_train(cfg);
    case Command::TrainSync:
      return cmd_train_sync(cfg);
    case Command::Bench:
      return cmd_bench(cfg);
    case Command::Sweep:
      return cmd_sweep(cfg);
    case Command::LagStudy:
      return cmd_lag_study(cfg);
  }
  return 1;
}

int main_entry(int argc, char** argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    const RunConfig cfg = parse_args(args);
    return run_main(cfg);
  } catch (const UsageError& e) {
    if (e.exit_code == 0) {
      std::cout << e.what() << '\n';
    } else {
      std::cerr << "error: " << e.what() << '\n';
    }
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace qac::cli
