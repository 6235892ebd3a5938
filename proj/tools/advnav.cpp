#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "advnav/cli/commands.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, int code = 1) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << std::endl;
  return code;
}

std::optional<std::uint64_t> seed_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("--seed: expected a non-negative integer");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial instruction attacks on a synthetic navigation task"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, attack = "none", split = "unseen", seed, out, stage, episode;
  int workers = 1;

  auto* run = app.add_subcommand("run", "train all stages, then evaluate base and final models");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--stage", stage, "resume from this stage: pretrain_nav|pretrain_att|adversarial|finetune");
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--out", out, "override the output directory");
  run->add_option("--workers", workers, "rollout threads")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split under one attack");
  eval->add_option("--checkpoint", checkpoint, "checkpoint prefix (without .json/.bin)")->required();
  eval->add_option("--attack", attack, "none|dr|static|random|heuristic|pwws");
  eval->add_option("--split", split, "train|seen|unseen");
  eval->add_option("--config", config_path, "config to use instead of the one stored in the checkpoint");
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--out", out, "directory for metrics CSV/JSON");
  eval->add_option("--workers", workers, "rollout threads")->check(CLI::PositiveNumber);

  auto* trace = app.add_subcommand("trace", "per-timestep attack trace of one episode (JSON lines)");
  trace->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  trace->add_option("--episode", episode, "episode id, e.g. unseen-u0-3")->required();
  trace->add_option("--attack", attack, "none|dr|static|random|heuristic|pwws")->default_val("dr");
  trace->add_option("--seed", seed, "trace seed");
  trace->add_option("--out", out, "write lines to this file instead of stdout");

  auto* gen = app.add_subcommand("gen-corpus", "write worlds and episodes as JSON lines");
  gen->add_option("--config", config_path, "experiment config (JSON)")->required();
  gen->add_option("--seed", seed, "override the master seed");
  gen->add_option("--out", out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*run) {
      auto c = advnav::load_experiment_config(config_path);
      if (auto s = seed_flag(seed)) {
        c.seed = *s;
        c.train.seed = *s;
        c.world.seed = *s;
      }
      if (!out.empty()) c.output_dir = out;
      advnav::RunOptions opt;
      if (!stage.empty()) opt.from_stage = advnav::parse_stage(stage);
      opt.workers = workers;
      opt.progress = &std::cerr;
      advnav::cmd_run(c, opt);
      std::cout << nlohmann::json{{"output_dir", c.output_dir}}.dump() << std::endl;
    } else if (*eval) {
      advnav::EvalRequest req;
      req.checkpoint = checkpoint;
      req.attack = advnav::parse_attack(attack);
      req.split = advnav::parse_split(split);
      req.seed = seed_flag(seed);
      req.workers = workers;
      if (!config_path.empty()) req.config = advnav::load_experiment_config(config_path);
      const auto res = advnav::cmd_eval(req);
      const auto summary = advnav::eval_summary_json(req, res);
      if (!out.empty()) {
        std::filesystem::create_directories(out);
        const std::string stem = "eval_" + attack + "_" + split;
        std::ofstream csv(std::filesystem::path(out) / (stem + ".csv"));
        advnav::write_metrics_csv_header(csv);
        advnav::write_metrics_rows(csv, res.result.report, "checkpoint", attack, split);
        std::ofstream js(std::filesystem::path(out) / (stem + ".json"));
        auto full = summary;
        full["episodes"] = advnav::report_to_json(res.result.report)["episodes"];
        js << full.dump(2) << '\n';
      }
      std::cout << summary.dump(2) << std::endl;
    } else if (*trace) {
      advnav::TraceRequest req;
      req.checkpoint = checkpoint;
      req.episode_id = episode;
      req.attack = advnav::parse_attack(attack);
      req.seed = seed_flag(seed);
      const auto lines = advnav::cmd_trace(req);
      std::ofstream file;
      if (!out.empty()) file.open(out);
      std::ostream& os = out.empty() ? std::cout : file;
      for (const auto& l : lines) os << l.dump() << '\n';
    } else if (*gen) {
      auto c = advnav::load_experiment_config(config_path);
      if (auto s = seed_flag(seed)) c.seed = *s;
      std::ofstream file;
      if (!out.empty()) file.open(out);
      advnav::cmd_gen_corpus(c, out.empty() ? std::cout : file);
    }
  } catch (const advnav::ConfigError& e) {
    nlohmann::json err{{"error", "config"}, {"field", e.path()}, {"message", e.what()}};
    std::cerr << err.dump() << std::endl;
    return 3;
  } catch (const advnav::MissingPrerequisite& e) {
    return fail("missing_prerequisite", e.what(), 4);
  } catch (const advnav::CheckpointMismatch& e) {
    return fail("checkpoint_mismatch", e.what(), 5);
  } catch (const std::invalid_argument& e) {
    return fail("usage", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
