#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <memory>
#include <stdexcept>

#include "qac/annealer.hpp"
#include "qac/cli.hpp"
#include "qac/envs.hpp"
#include "qac/metrics.hpp"
#include "qac/nnet.hpp"
#include "qac/pipeline.hpp"
#include "qac/reference.hpp"
#include "qac/returns.hpp"

namespace py = pybind11;
using namespace qac;

namespace {

returns::ExperienceBatch batch_from(const std::vector<std::vector<double>>& states,
                                    const std::vector<int>& actions,
                                    const std::vector<double>& rets) {
  if (states.size() != actions.size() || states.size() != rets.size())
    throw std::invalid_argument("states, actions and returns must have equal length");
  returns::ExperienceBatch b;
  b.experiences.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    returns::Experience e;
    e.state = states[i];
    e.action = actions[i];
    b.experiences.push_back(std::move(e));
  }
  b.returns = rets;
  return b;
}

}  // namespace

PYBIND11_MODULE(_qac, m) {
  m.doc() = "actor-critic trainer with a shared prediction/training service";

  // ---- network and optimizer ----

  py::class_<nnet::NetworkSpec>(m, "NetworkSpec")
      .def(py::init<>())
      .def(py::init([](int input_dim, std::vector<int> hidden_dims, int n_actions) {
             return nnet::NetworkSpec{input_dim, std::move(hidden_dims), n_actions};
           }),
           py::arg("input_dim"), py::arg("hidden_dims"), py::arg("n_actions"))
      .def_readwrite("input_dim", &nnet::NetworkSpec::input_dim)
      .def_readwrite("hidden_dims", &nnet::NetworkSpec::hidden_dims)
      .def_readwrite("n_actions", &nnet::NetworkSpec::n_actions);

  py::class_<nnet::Hyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("gamma", &nnet::Hyperparams::gamma)
      .def_readwrite("t_max", &nnet::Hyperparams::t_max)
      .def_readwrite("beta", &nnet::Hyperparams::beta)
      .def_readwrite("eps_log", &nnet::Hyperparams::eps_log)
      .def_readwrite("eta", &nnet::Hyperparams::eta)
      .def_readwrite("alpha", &nnet::Hyperparams::alpha)
      .def_readwrite("eps_rms", &nnet::Hyperparams::eps_rms)
      .def_readwrite("value_loss_weight", &nnet::Hyperparams::value_loss_weight)
      .def_readwrite("grad_clip_norm", &nnet::Hyperparams::grad_clip_norm)
      .def_readwrite("clip_rewards", &nnet::Hyperparams::clip_rewards);

  py::class_<nnet::ModelState>(m, "ModelState")
      .def(py::init<>())
      .def_readwrite("theta", &nnet::ModelState::theta)
      .def_readwrite("version", &nnet::ModelState::version);

  py::class_<nnet::RmsState>(m, "RmsState")
      .def(py::init<>())
      .def_readwrite("g", &nnet::RmsState::g);

  py::class_<nnet::ForwardResult>(m, "ForwardResult")
      .def_readonly("policies", &nnet::ForwardResult::policies)
      .def_readonly("values", &nnet::ForwardResult::values);

  py::class_<nnet::GradientPacket>(m, "GradientPacket")
      .def_readonly("dtheta", &nnet::GradientPacket::dtheta)
      .def_readonly("policy_loss", &nnet::GradientPacket::policy_loss)
      .def_readonly("value_loss", &nnet::GradientPacket::value_loss)
      .def_readonly("entropy", &nnet::GradientPacket::entropy)
      .def_readonly("batch_size", &nnet::GradientPacket::batch_size);

  py::class_<nnet::UpdateResult>(m, "UpdateResult")
      .def_readonly("model", &nnet::UpdateResult::model)
      .def_readonly("rms", &nnet::UpdateResult::rms)
      .def_readonly("applied", &nnet::UpdateResult::applied);

  m.def("param_count", &nnet::param_count, py::arg("spec"));
  m.def("init_model", &nnet::init_model, py::arg("spec"), py::arg("seed"));
  m.def("init_rms", &nnet::init_rms, py::arg("spec"));
  m.def(
      "forward",
      [](const nnet::ModelState& model, const nnet::NetworkSpec& spec,
         const std::vector<std::vector<double>>& states) {
        return nnet::forward(model, spec, states);
      },
      py::arg("model"), py::arg("spec"), py::arg("states"));
  m.def(
      "loss_and_gradients",
      [](const nnet::ModelState& model, const nnet::NetworkSpec& spec,
         const nnet::Hyperparams& hyper, const std::vector<std::vector<double>>& states,
         const std::vector<int>& actions, const std::vector<double>& rets) {
        return nnet::loss_and_gradients(model, spec, hyper, batch_from(states, actions, rets));
      },
      py::arg("model"), py::arg("spec"), py::arg("hyper"), py::arg("states"), py::arg("actions"),
      py::arg("returns"));
  m.def("rmsprop_update", &nnet::rmsprop_update, py::arg("model"), py::arg("rms"),
        py::arg("grads"), py::arg("hyper"));

  // ---- returns ----

  m.def(
      "compute_returns",
      [](const std::vector<double>& rewards, bool terminal, double bootstrap, double gamma) {
        return returns::compute_returns(rewards, terminal, bootstrap, gamma);
      },
      py::arg("rewards"), py::arg("terminal"), py::arg("bootstrap"), py::arg("gamma"));

  // ---- environments ----

  py::enum_<envs::EnvKind>(m, "EnvKind")
      .value("ContextualBandit", envs::EnvKind::ContextualBandit)
      .value("Catch", envs::EnvKind::Catch)
      .value("DelayLab", envs::EnvKind::DelayLab);

  py::class_<envs::EnvSpec>(m, "EnvSpec")
      .def(py::init<>())
      .def_readwrite("kind", &envs::EnvSpec::kind)
      .def_readwrite("n_contexts", &envs::EnvSpec::n_contexts)
      .def_readwrite("n_actions", &envs::EnvSpec::n_actions)
      .def_readwrite("grid_size", &envs::EnvSpec::grid_size)
      .def_readwrite("step_delay_us", &envs::EnvSpec::step_delay_us)
      .def_readwrite("episode_len", &envs::EnvSpec::episode_len)
      .def_readwrite("action_repeat", &envs::EnvSpec::action_repeat);

  py::class_<envs::StepResult>(m, "StepResult")
      .def_readonly("observation", &envs::StepResult::observation)
      .def_readonly("reward", &envs::StepResult::reward)
      .def_readonly("terminal", &envs::StepResult::terminal);

  py::class_<envs::Env>(m, "Env")
      .def("reset", &envs::Env::reset, py::arg("seed"),
           py::call_guard<py::gil_scoped_release>())
      .def("step", &envs::Env::step, py::arg("action"),
           py::call_guard<py::gil_scoped_release>())
      .def("observation_dim", &envs::Env::observation_dim)
      .def("action_count", &envs::Env::action_count);

  m.def("bandit", &envs::bandit, py::arg("n_contexts") = 4, py::arg("n_actions") = 4);
  m.def("catch_grid", &envs::catch_grid, py::arg("grid_size") = 5);
  m.def("delay_lab", &envs::delay_lab, py::arg("step_delay_us") = 500,
        py::arg("episode_len") = 64);
  m.def("make_env", &envs::make_env, py::arg("spec"));
  m.def("optimal_expected_return", &envs::optimal_expected_return, py::arg("spec"));

  // ---- worker pools, annealer, metrics ----

  py::class_<pipeline::KnobConfig>(m, "KnobConfig")
      .def(py::init<>())
      .def_readwrite("n_agents", &pipeline::KnobConfig::n_agents)
      .def_readwrite("n_predictors", &pipeline::KnobConfig::n_predictors)
      .def_readwrite("n_trainers", &pipeline::KnobConfig::n_trainers)
      .def_readwrite("pred_batch_max", &pipeline::KnobConfig::pred_batch_max)
      .def_readwrite("min_train_batch", &pipeline::KnobConfig::min_train_batch)
      .def_readwrite("train_queue_cap", &pipeline::KnobConfig::train_queue_cap)
      .def_readwrite("pred_queue_cap", &pipeline::KnobConfig::pred_queue_cap)
      .def("__eq__", [](const pipeline::KnobConfig& a, const pipeline::KnobConfig& b) {
        return a == b;
      });

  py::class_<annealer::Limits>(m, "Limits")
      .def(py::init<>())
      .def(py::init([](int a, int p, int t) {
             return annealer::Limits{a, p, t};
           }),
           py::arg("max_agents"), py::arg("max_predictors"), py::arg("max_trainers"))
      .def_readwrite("max_agents", &annealer::Limits::max_agents)
      .def_readwrite("max_predictors", &annealer::Limits::max_predictors)
      .def_readwrite("max_trainers", &annealer::Limits::max_trainers);

  py::class_<annealer::HistoryEntry>(m, "HistoryEntry")
      .def_readonly("knobs", &annealer::HistoryEntry::knobs)
      .def_readonly("measured_tps", &annealer::HistoryEntry::measured_tps)
      .def_readonly("accepted", &annealer::HistoryEntry::accepted);

  py::class_<annealer::AnnealState>(m, "AnnealState")
      .def_readonly("current", &annealer::AnnealState::current)
      .def_readonly("baseline_tps", &annealer::AnnealState::baseline_tps)
      .def_readonly("history", &annealer::AnnealState::history);

  m.def("anneal_make_state", &annealer::make_state, py::arg("initial"),
        py::arg("epoch_length_s"), py::arg("seed"), py::arg("limits") = annealer::Limits{});
  m.def("anneal_propose", &annealer::propose, py::arg("state"));
  m.def("anneal_decide", &annealer::decide, py::arg("state"), py::arg("candidate"),
        py::arg("measured_tps"));

  py::class_<metrics::MetricsFrame>(m, "MetricsFrame")
      .def_readonly("wall_time_s", &metrics::MetricsFrame::wall_time_s)
      .def_readonly("tps", &metrics::MetricsFrame::tps)
      .def_readonly("pps", &metrics::MetricsFrame::pps)
      .def_readonly("mean_lag", &metrics::MetricsFrame::mean_lag)
      .def_readonly("max_lag", &metrics::MetricsFrame::max_lag)
      .def_readonly("train_queue_len", &metrics::MetricsFrame::train_queue_len)
      .def_readonly("pred_batch_mean", &metrics::MetricsFrame::pred_batch_mean)
      .def_readonly("n_a", &metrics::MetricsFrame::n_a)
      .def_readonly("n_p", &metrics::MetricsFrame::n_p)
      .def_readonly("n_t", &metrics::MetricsFrame::n_t)
      .def_readonly("episodes", &metrics::MetricsFrame::episodes)
      .def_readonly("score_mean", &metrics::MetricsFrame::score_mean)
      .def_readonly("score_max", &metrics::MetricsFrame::score_max)
      .def_readonly("updates_total", &metrics::MetricsFrame::updates_total);

  m.def(
      "write_frames",
      [](const std::filesystem::path& path, const std::vector<metrics::MetricsFrame>& frames) {
        metrics::write_frames(path, frames);
      },
      py::arg("path"), py::arg("frames"));
  m.def("read_frames", &metrics::read_frames, py::arg("path"));

  // ---- training entry points ----

  py::class_<pipeline::StopCondition>(m, "StopCondition")
      .def(py::init<>())
      .def_readwrite("max_updates", &pipeline::StopCondition::max_updates)
      .def_readwrite("max_seconds", &pipeline::StopCondition::max_seconds)
      .def_readwrite("target_score", &pipeline::StopCondition::target_score);

  py::class_<pipeline::RunReport>(m, "RunReport")
      .def_readonly("total_updates", &pipeline::RunReport::total_updates)
      .def_readonly("skipped_updates", &pipeline::RunReport::skipped_updates)
      .def_readonly("total_predictions", &pipeline::RunReport::total_predictions)
      .def_readonly("total_episodes", &pipeline::RunReport::total_episodes)
      .def_readonly("wall_time_s", &pipeline::RunReport::wall_time_s)
      .def_readonly("avg_tps", &pipeline::RunReport::avg_tps)
      .def_readonly("avg_pps", &pipeline::RunReport::avg_pps)
      .def_readonly("mean_lag", &pipeline::RunReport::mean_lag)
      .def_readonly("final_knobs", &pipeline::RunReport::final_knobs)
      .def_readonly("final_rolling_score", &pipeline::RunReport::final_rolling_score)
      .def_readonly("episode_scores", &pipeline::RunReport::episode_scores)
      .def_readonly("frames", &pipeline::RunReport::frames)
      .def_readonly("metrics_path", &pipeline::RunReport::metrics_path)
      .def_readonly("experiences_produced", &pipeline::RunReport::experiences_produced)
      .def_readonly("experiences_trained", &pipeline::RunReport::experiences_trained)
      .def_readonly("experiences_dropped", &pipeline::RunReport::experiences_dropped)
      .def_readonly("experiences_left_queued", &pipeline::RunReport::experiences_left_queued)
      .def_readonly("anneal_history", &pipeline::RunReport::anneal_history)
      .def_readonly("theta_trajectory", &pipeline::RunReport::theta_trajectory)
      .def_readonly("final_model", &pipeline::RunReport::final_model);

  py::class_<pipeline::PipelineOptions>(m, "PipelineOptions")
      .def(py::init<>())
      .def_readwrite("net", &pipeline::PipelineOptions::net)
      .def_readwrite("hyper", &pipeline::PipelineOptions::hyper)
      .def_readwrite("env", &pipeline::PipelineOptions::env)
      .def_readwrite("knobs", &pipeline::PipelineOptions::knobs)
      .def_readwrite("stop", &pipeline::PipelineOptions::stop)
      .def_readwrite("seed", &pipeline::PipelineOptions::seed)
      .def_readwrite("anneal", &pipeline::PipelineOptions::anneal)
      .def_readwrite("epoch_s", &pipeline::PipelineOptions::epoch_s)
      .def_readwrite("limits", &pipeline::PipelineOptions::limits)
      .def_readwrite("metrics_interval_s", &pipeline::PipelineOptions::metrics_interval_s)
      .def_readwrite("metrics_out", &pipeline::PipelineOptions::metrics_out)
      .def_readwrite("greedy", &pipeline::PipelineOptions::greedy)
      .def_readwrite("sync_after_submit", &pipeline::PipelineOptions::sync_after_submit)
      .def_readwrite("capture_trajectory", &pipeline::PipelineOptions::capture_trajectory);

  py::class_<reference::SyncConfig>(m, "SyncConfig")
      .def(py::init<>())
      .def_readwrite("net", &reference::SyncConfig::net)
      .def_readwrite("hyper", &reference::SyncConfig::hyper)
      .def_readwrite("env", &reference::SyncConfig::env)
      .def_readwrite("n_agents", &reference::SyncConfig::n_agents)
      .def_readwrite("max_updates", &reference::SyncConfig::max_updates)
      .def_readwrite("seed", &reference::SyncConfig::seed)
      .def_readwrite("greedy", &reference::SyncConfig::greedy)
      .def_readwrite("capture_trajectory", &reference::SyncConfig::capture_trajectory)
      .def_readwrite("metrics_interval_s", &reference::SyncConfig::metrics_interval_s)
      .def_readwrite("metrics_out", &reference::SyncConfig::metrics_out);

  // long-running, never call back into python: run without the GIL
  m.def("run", &pipeline::run, py::arg("options"), py::call_guard<py::gil_scoped_release>());
  m.def("train_sync", &reference::train_sync, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());

  m.def("net_for_env", &cli::net_for_env, py::arg("env"), py::arg("hidden_dims"));
}
