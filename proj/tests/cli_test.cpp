#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "advnav/cli/commands.hpp"

namespace advnav {
namespace {

namespace fs = std::filesystem;

const fs::path kSource = fs::path(__FILE__).parent_path().parent_path();

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
  // the error object is the last line on stderr
  nlohmann::json error() const {
    std::istringstream in(err);
    std::string line, last;
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    return nlohmann::json::parse(last);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("advnav_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

CliResult cli(const std::string& args) {
  const auto dir = fs::temp_directory_path() / ("advnav_cli_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto out = dir / "out", err = dir / "err";
  const std::string cmd = std::string(ADVNAV_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json smoke() { return nlohmann::json::parse(slurp(kSource / "configs" / "smoke.json")); }

// ---- config parsing ----

TEST(ConfigParseTest, ShippedConfigsAreValid) {
  for (const char* name : {"smoke.json", "desk.json"}) {
    EXPECT_NO_THROW(load_experiment_config((kSource / "configs" / name).string())) << name;
  }
  const auto desk = load_experiment_config((kSource / "configs" / "desk.json").string());
  EXPECT_EQ(desk.corpus.train_worlds, 20);
}

TEST(ConfigParseTest, RoundTrip) {
  const auto c = parse_experiment_config(smoke());
  EXPECT_EQ(config_to_json(parse_experiment_config(config_to_json(c))), config_to_json(c));
}

TEST(ConfigParseTest, ErrorsNameTheField) {
  const std::vector<std::pair<nlohmann::json, std::string>> bad = {
      {{{"train", {{"gamma", 1.5}}}}, "train.gamma"},
      {{{"train", {{"gama", 0.5}}}}, "train.gama"},
      {{{"train", {{"batch_size", "8"}}}}, "train.batch_size"},
      {{{"train", {{"optimizer", "rmsprop"}}}}, "train.optimizer"},
      {{{"world", {{"node_count", 2}}}}, "world.node_count"},
      {{{"model", {{"word_dim", 7}}}}, "model.word_dim"},
      {{{"model", {{"view_dim", 16}}}}, "model.view_dim"},
      {{{"corpus", {{"max_hops", 1}}}}, "corpus.max_hops"},
      {{{"attack", "fgsm"}}, "attack"},
      {{{"seed", -1}}, "seed"},
      {{{"colour", "red"}}, "colour"},
      {{{"world", 3}}, "world"},
  };
  for (const auto& [j, path] : bad) {
    try {
      parse_experiment_config(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.path(), path) << j.dump();
    }
  }
}

// ---- command line ----

TEST(CliTest, InvalidConfigReportsFieldOnStderr) {
  const auto dir = scratch("badcfg");
  const auto cfg = write_config(dir, {{"train", {{"entropy_weight", -0.1}}}});
  const auto r = cli("run --config " + cfg.string() + " --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 3);
  const auto e = r.error();
  EXPECT_EQ(e.at("error"), "config");
  EXPECT_EQ(e.at("field"), "train.entropy_weight");
  EXPECT_FALSE(fs::exists(dir / "run" / "metrics.csv"));
}

TEST(CliTest, MalformedJsonRejected) {
  const auto dir = scratch("badjson");
  std::ofstream(dir / "c.json") << "{\"seed\": ";
  const auto r = cli("gen-corpus --config " + (dir / "c.json").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.error().at("error"), "config");
}

TEST(CliTest, UnknownAttackIsUsageError) {
  const auto r = cli("eval --checkpoint /nonexistent/ck --attack fgsm");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.error().at("error"), "usage");
  EXPECT_NE(r.error().at("message").get<std::string>().find("fgsm"), std::string::npos);
}

TEST(CliTest, MissingSubcommandIsUsageError) {
  const auto r = cli("");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.error().at("error"), "usage");
}

TEST(CliTest, ResumeWithoutPrerequisiteNamesIt) {
  const auto dir = scratch("prereq");
  const auto cfg = write_config(dir, smoke());
  const auto r = cli("run --config " + cfg.string() + " --stage finetune --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 4);
  const auto e = r.error();
  EXPECT_EQ(e.at("error"), "missing_prerequisite");
  EXPECT_NE(e.at("message").get<std::string>().find("adversarial"), std::string::npos);
}

TEST(CliTest, GenCorpusWritesWorldsAndEpisodes) {
  const auto dir = scratch("gen");
  const auto cfg = write_config(dir, smoke());
  const auto r = cli("gen-corpus --config " + cfg.string() + " --out " + (dir / "corpus.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(dir / "corpus.jsonl"));
  std::string line;
  int worlds = 0, unseen_worlds = 0;
  std::map<std::string, int> splits;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("kind") == "world") {
      ++worlds;
      unseen_worlds += j.at("unseen").get<bool>();
      EXPECT_NO_THROW(world_from_json(j.at("world")));
    } else {
      ++splits[j.at("split").get<std::string>()];
    }
  }
  EXPECT_EQ(worlds, 3);
  EXPECT_EQ(unseen_worlds, 1);
  EXPECT_EQ(splits["train"], 8);
  EXPECT_EQ(splits["seen"], 4);
  EXPECT_EQ(splits["unseen"], 3);
}

/// One small end-to-end run shared by the artifact tests.
class RunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("run"));
    cfg_ = new fs::path(write_config(*dir_, smoke()));
    const auto r = cli("run --config " + cfg_->string() + " --out " + (*dir_ / "a").string());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(dir_->parent_path());
    delete dir_;
    delete cfg_;
  }
  static fs::path run_dir() { return *dir_ / "a"; }
  static fs::path* dir_;
  static fs::path* cfg_;
};

fs::path* RunTest::dir_ = nullptr;
fs::path* RunTest::cfg_ = nullptr;

TEST_F(RunTest, WritesCheckpointsLogAndMetrics) {
  for (Stage s : all_stages()) EXPECT_TRUE(checkpoint_exists(stage_checkpoint(run_dir(), s))) << stage_name(s);
  std::istringstream csv(slurp(run_dir() / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, kMetricsCsvHeader);
  std::map<std::string, int> rows;
  while (std::getline(csv, line)) {
    std::istringstream f(line);
    std::string model, attack, split;
    std::getline(f, model, ',');
    std::getline(f, attack, ',');
    std::getline(f, split, ',');
    ++rows[model + "/" + attack + "/" + split];
  }
  EXPECT_EQ(rows.size(), 2u * 6u * 2u);
  EXPECT_EQ((rows["base/none/seen"]), 5);
  EXPECT_EQ((rows["final/pwws/unseen"]), 4);
  const auto summary = nlohmann::json::parse(slurp(run_dir() / "metrics.json"));
  EXPECT_EQ(summary.at("final").at("none").at("unseen").at("perturbed_steps"), 0);
  int log_lines = 0;
  std::istringstream log(slurp(run_dir() / "train_log.jsonl"));
  while (std::getline(log, line)) ++log_lines;
  // 4 + 3 + 2 * (2 + 1) + 3 updates
  EXPECT_EQ(log_lines, 16);
  const auto meta = load_checkpoint(stage_checkpoint(run_dir(), Stage::Adversarial)).meta;
  EXPECT_EQ(meta.at("schedule"), "nnanna");
}

TEST_F(RunTest, RepeatedRunIsByteIdentical) {
  const auto r = cli("run --config " + cfg_->string() + " --out " + (*dir_ / "b").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(run_dir() / "metrics.csv"), slurp(*dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(run_dir() / "ckpt_finetune.bin"), slurp(*dir_ / "b" / "ckpt_finetune.bin"));
}

TEST_F(RunTest, ResumeFromFinetuneReproducesMetrics) {
  const auto copy = *dir_ / "resume";
  fs::create_directories(copy);
  for (Stage s : {Stage::PretrainNav, Stage::PretrainAtt, Stage::Adversarial}) {
    for (const char* ext : {".json", ".bin"}) {
      auto p = stage_checkpoint(run_dir(), s);
      p += ext;
      fs::copy_file(p, copy / p.filename());
    }
  }
  const auto r = cli("run --config " + cfg_->string() + " --stage finetune --out " + copy.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(run_dir() / "metrics.csv"), slurp(copy / "metrics.csv"));
}

TEST_F(RunTest, EvalCleanHasNoPerturbations) {
  const auto ck = stage_checkpoint(run_dir(), Stage::Finetune);
  const auto out = *dir_ / "eval";
  const auto r = cli("eval --checkpoint " + ck.string() + " --attack none --split seen --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("perturbed_steps"), 0);
  EXPECT_EQ(j.at("count"), 4);
  EXPECT_TRUE(fs::exists(out / "eval_none_seen.csv"));
  EXPECT_TRUE(fs::exists(out / "eval_none_seen.json"));
  const auto dr = nlohmann::json::parse(cli("eval --checkpoint " + ck.string() + " --attack dr --split seen").out);
  EXPECT_GT(dr.at("perturbed_steps").get<int>(), 0);
}

TEST_F(RunTest, EvalMatchesRunMetrics) {
  const auto ck = stage_checkpoint(run_dir(), Stage::PretrainAtt);
  const auto r = cli("eval --checkpoint " + ck.string() + " --attack random --split unseen");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(slurp(run_dir() / "metrics.json"));
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("mean").at("SR"), summary.at("base").at("random").at("unseen").at("SR"));
  EXPECT_EQ(j.at("mean").at("NE"), summary.at("base").at("random").at("unseen").at("NE"));
}

TEST_F(RunTest, DimsMismatchRejected) {
  auto bad = smoke();
  bad["model"]["hidden_dim"] = 6;
  const auto cfg = write_config(*dir_ / "..", bad);
  const auto r = cli("eval --checkpoint " + stage_checkpoint(run_dir(), Stage::Finetune).string() + " --config " +
                     cfg.string());
  EXPECT_EQ(r.code, 5);
  EXPECT_EQ(r.error().at("error"), "checkpoint_mismatch");
}

TEST_F(RunTest, TraceLinesAreConsistent) {
  const auto ck = stage_checkpoint(run_dir(), Stage::Finetune);
  const auto c = parse_experiment_config(smoke());
  const Corpus corpus = build_experiment_corpus(c);
  const auto& spec = corpus.unseen.front();
  const auto r = cli("trace --checkpoint " + ck.string() + " --episode " + spec.id);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto& vocab = Vocabulary::standard();
  std::istringstream in(r.out);
  std::string line;
  int t = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("timestep"), t++);
    const int jt = j.at("target_index"), kt = j.at("candidate_index");
    const auto a = AttackAction::at(jt, kt, spec.instruction.max_candidates());
    ASSERT_TRUE(action_valid(spec.instruction, a));
    const auto p = apply_perturbation(spec.instruction, a, 0);
    EXPECT_EQ(j.at("attacked_position"), p.substituted_position);
    EXPECT_EQ(j.at("attacked_word"), vocab.word(spec.instruction.tokens[static_cast<std::size_t>(p.substituted_position)]));
    EXPECT_EQ(j.at("substitute_word"), vocab.word(p.substitute_token));
    const auto pc = j.at("p_c").get<std::vector<double>>();
    const auto best = std::max_element(pc.begin(), pc.end()) - pc.begin();
    EXPECT_EQ(j.at("predicted_target"), best);
    EXPECT_LE(j.at("top_attention").size(), 5u);
  }
  EXPECT_GT(t, 0);
  EXPECT_EQ(cli("trace --checkpoint " + ck.string() + " --episode " + spec.id).out, r.out);
}

TEST_F(RunTest, TraceUnknownEpisodeRejected) {
  const auto r = cli("trace --checkpoint " + stage_checkpoint(run_dir(), Stage::Finetune).string() +
                     " --episode nowhere-1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.error().at("message").get<std::string>().find("nowhere-1"), std::string::npos);
}

TEST_F(RunTest, TraceWithoutAttackHasNullWords) {
  const auto c = parse_experiment_config(smoke());
  const Corpus corpus = build_experiment_corpus(c);
  const auto r = cli("trace --checkpoint " + stage_checkpoint(run_dir(), Stage::Finetune).string() +
                     " --attack none --episode " + corpus.seen.front().id);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  while (std::getline(in, line)) EXPECT_TRUE(nlohmann::json::parse(line).at("attacked_word").is_null());
}

}  // namespace
}  // namespace advnav
