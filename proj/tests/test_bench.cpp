#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pelab/bench.hpp"

using namespace pelab;
namespace fs = std::filesystem;

namespace {

env::EnvConfig quick_cfg(int max_steps) {
  env::EnvConfig cfg;
  cfg.arena.max_steps = max_steps;
  return cfg;
}

// Twelve alternating stages on top of the cold start: six trained pursuers
// (rows) and six trained evaders, enough for the full staircase shape.
league::LeagueManifest twelve_stage_league(uint64_t seed) {
  league::LeagueManifest m = league::cold_start(0.75);
  quad::QuadParams params;
  for (int s = 1; s <= 12; ++s) {
    const env::Role role = (s % 2 == 1) ? env::Role::Pursuer : env::Role::Evader;
    const std::string id =
        std::string("vel_") + (role == env::Role::Pursuer ? "p" : "e") + "_s" + std::to_string(s);
    auto net = policy::GaussianPolicy::make(role, policy::Modality::Velocity, params,
                                            mix_seed(seed, s));
    m.population(role).push_back(policy::make_net_record(id, net, s));
    league::StageLogEntry e;
    e.stage_index = s;
    e.trained_role = role;
    e.policy_id = id;
    e.seed = mix_seed(seed, s);
    e.env_steps = 1;
    m.stage_log.push_back(e);
  }
  m.validate();
  return m;
}

policy::PolicyRecord heuristic_record(const std::string& id, env::Role role,
                                      policy::HeuristicKind kind) {
  policy::HeuristicSpec spec;
  spec.kind = kind;
  return policy::make_heuristic_record(id, role, spec);
}

bench::EvalReport sample_report() {
  bench::EvalReport r;
  eval::PairResult p;
  p.pursuer_id = "vel_p_s1";
  p.evader_id = "hover_e_s0";
  p.episodes = 16;
  p.captures = 11;
  p.timeouts = 5;
  p.crashes = 2;
  p.mean_capture_time_s = 3.1415926535897931;
  p.capture_rate = 11.0 / 16.0;
  r.pairs.push_back(p);
  r.max_speed.push_back({"vel_p_s1", 14.227190471817899, 9.0000001234});
  r.references.push_back({"rate", "velocity", 0.5703});
  r.row_ids = {"vel_p_s1"};
  r.column_ids = {"hover_e_s0"};
  r.config_hash = "00ff00ff00ff00ff";
  r.seed = 424242;
  return r;
}

}  // namespace

TEST_CASE("introduction_row: never before the slot, never before admission") {
  // Canonical benchmark order: three stage-0 heuristics then the evaders
  // admitted at league stages 2, 4, 6 give the clean 1..6 diagonal.
  const int stages[] = {0, 0, 0, 2, 4, 6};
  for (int j = 1; j <= 6; ++j) {
    CHECK(bench::introduction_row(j, stages[j - 1]) == j);
  }
  CHECK(bench::introduction_row(1, 2) == 2);   // listed early, admitted later
  CHECK(bench::introduction_row(5, 0) == 5);   // admitted early, listed late
  CHECK(bench::introduction_row(1, 10) == 6);  // stage 10 evader meets pursuer six
  CHECK_THROWS_AS(bench::introduction_row(0, 0), ValidationError);
}

TEST_CASE("capture_matrix reproduces the 6x6 staircase with 21 cells") {
  league::LeagueManifest m = twelve_stage_league(5);
  const std::vector<std::string> benchmarks = {"hover_e_s0", "circular_e_s0", "repel_e_s0",
                                               "vel_e_s2",   "vel_e_s4",      "vel_e_s6"};
  bench::EvalReport report = bench::capture_matrix(m, benchmarks, quick_cfg(30), 2, 77);
  REQUIRE(report.row_ids.size() == 6);
  REQUIRE(report.column_ids.size() == 6);
  CHECK(report.row_ids[0] == "vel_p_s1");
  CHECK(report.row_ids[5] == "vel_p_s11");
  CHECK(report.pairs.size() == 21);

  // Row r carries exactly its first r benchmarks.
  for (size_t r = 0; r < 6; ++r) {
    for (size_t c = 0; c < 6; ++c) {
      CHECK(report.cell_present(r, c) == (c <= r));
    }
  }
  for (const auto& p : report.pairs) {
    CHECK(p.episodes == 2);
    CHECK(p.captures + p.timeouts == 2);
  }
  CHECK(report.seed == 77);

  const std::string table = bench::format_matrix(report);
  CHECK(table.find("--") != std::string::npos);
  CHECK(table.find("vel_e_s6") != std::string::npos);
}

TEST_CASE("capture_matrix trivial and error cases") {
  league::LeagueManifest m = league::cold_start(0.75);
  quad::QuadParams params;
  auto net = policy::GaussianPolicy::make(env::Role::Pursuer, policy::Modality::Velocity, params,
                                          3);
  m.pursuers.push_back(policy::make_net_record("vel_p_s1", net, 1));
  league::StageLogEntry e;
  e.stage_index = 1;
  e.trained_role = env::Role::Pursuer;
  e.policy_id = "vel_p_s1";
  m.stage_log.push_back(e);

  bench::EvalReport single = bench::capture_matrix(m, {"hover_e_s0"}, quick_cfg(20), 2, 9);
  CHECK(single.row_ids.size() == 1);
  CHECK(single.column_ids.size() == 1);
  CHECK(single.pairs.size() == 1);

  CHECK_THROWS_WITH_AS(bench::capture_matrix(m, {"no_such_policy"}, quick_cfg(20), 2, 9),
                       doctest::Contains("unknown"), ValidationError);
  CHECK_THROWS_WITH_AS(bench::capture_matrix(m, {"vel_p_s1"}, quick_cfg(20), 2, 9),
                       doctest::Contains("not an evader"), ValidationError);

  league::LeagueManifest untrained = league::cold_start(0.75);
  CHECK_THROWS_AS(bench::capture_matrix(untrained, {"hover_e_s0"}, quick_cfg(20), 2, 9),
                  ValidationError);
}

TEST_CASE("evaluate_pair: two station keepers never capture, same seed repeats") {
  const auto hp = heuristic_record("hp", env::Role::Pursuer, policy::HeuristicKind::Hover);
  const auto he = heuristic_record("he", env::Role::Evader, policy::HeuristicKind::Hover);
  const env::EnvConfig cfg = quick_cfg(40);
  eval::PairResult a = eval::evaluate_pair(hp, he, cfg, 6, 123);
  CHECK(a.captures == 0);
  CHECK(a.timeouts == 6);
  CHECK(a.capture_rate == 0.0);

  eval::PairResult b = eval::evaluate_pair(hp, he, cfg, 6, 123);
  CHECK(a == b);

  // Thread count must not leak into the counts.
  setenv("PE_ARENA_THREADS", "1", 1);
  eval::PairResult serial = eval::evaluate_pair(hp, he, cfg, 6, 123);
  setenv("PE_ARENA_THREADS", "3", 1);
  eval::PairResult threaded = eval::evaluate_pair(hp, he, cfg, 6, 123);
  unsetenv("PE_ARENA_THREADS");
  CHECK(serial == threaded);
  CHECK(serial == a);
}

TEST_CASE("max_speed_probe: hover stays put, repel respects the velocity cap") {
  const env::EnvConfig cfg = quick_cfg(600);
  const auto hover = heuristic_record("hover", env::Role::Evader, policy::HeuristicKind::Hover);
  bench::SpeedRow still = bench::max_speed_probe(hover, cfg, 2.0, 4, 31);
  CHECK(still.policy_id == "hover");
  CHECK(still.max_linear_mps < 0.5);

  const auto repel = heuristic_record("repel", env::Role::Evader, policy::HeuristicKind::Repel);
  bench::SpeedRow fleeing = bench::max_speed_probe(repel, cfg, 3.0, 4, 31);
  CHECK(fleeing.max_linear_mps > 8.0);
  CHECK(fleeing.max_linear_mps <= 15.0 * 1.05);

  CHECK_THROWS_AS(bench::max_speed_probe(hover, cfg, -1.0, 4, 31), ValidationError);
  CHECK_THROWS_AS(bench::max_speed_probe(hover, cfg, 1.0, 0, 31), ValidationError);
}

TEST_CASE("scripted tilt run exceeds 12.9 m/s inside the 10 m budget") {
  quad::QuadParams params;
  control::RatePidGains gains;
  bench::TiltResult r = bench::scripted_tilt_run(params, gains);
  CHECK(r.max_speed_mps >= 12.9);
  CHECK(r.path_length_m <= 10.0);

  bench::TiltScript bad;
  bad.pulse_s = -0.1;
  CHECK_THROWS_AS(bench::scripted_tilt_run(params, gains, bad), ValidationError);
}

TEST_CASE("cross_modality_suite pairs the off-diagonal matchups") {
  quad::QuadParams params;
  auto rp = policy::make_net_record(
      "rate_p", policy::GaussianPolicy::make(env::Role::Pursuer, policy::Modality::Rate, params, 1),
      1);
  auto vp = policy::make_net_record(
      "vel_p",
      policy::GaussianPolicy::make(env::Role::Pursuer, policy::Modality::Velocity, params, 2), 1);
  auto re = policy::make_net_record(
      "rate_e", policy::GaussianPolicy::make(env::Role::Evader, policy::Modality::Rate, params, 3),
      2);
  auto ve = policy::make_net_record(
      "vel_e",
      policy::GaussianPolicy::make(env::Role::Evader, policy::Modality::Velocity, params, 4), 2);

  bench::EvalReport r = bench::cross_modality_suite(rp, vp, re, ve, quick_cfg(30), 2, 55);
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0].pursuer_id == "rate_p");
  CHECK(r.pairs[0].evader_id == "vel_e");
  CHECK(r.pairs[1].pursuer_id == "vel_p");
  CHECK(r.pairs[1].evader_id == "rate_e");
  REQUIRE(r.references.size() == 2);
  CHECK(r.references[0].capture_rate == 0.5703);
  CHECK(r.references[1].capture_rate == 0.1367);

  CHECK_THROWS_AS(bench::cross_modality_suite(vp, vp, re, ve, quick_cfg(30), 2, 55),
                  ValidationError);  // rate slot fed a velocity record
  CHECK_THROWS_AS(bench::cross_modality_suite(rp, vp, re, ve, quick_cfg(30), 0, 55),
                  ValidationError);
}

TEST_CASE("report round trips through CSV and JSON with equal values") {
  const bench::EvalReport src = sample_report();
  const fs::path dir = fs::temp_directory_path() / "pelab_bench_reports";
  fs::create_directories(dir);
  const std::string csv_path = (dir / "r.csv").string();
  const std::string json_path = (dir / "r.json").string();
  bench::emit_report(src, csv_path, bench::ReportFormat::Csv);
  bench::emit_report(src, json_path, bench::ReportFormat::Json);

  const bench::EvalReport from_csv = bench::parse_report(csv_path);
  const bench::EvalReport from_json = bench::parse_report(json_path);
  CHECK(from_csv == src);
  CHECK(from_json == src);
  CHECK(from_csv == from_json);
  fs::remove_all(dir);
}

TEST_CASE("reports without a seed are rejected") {
  const bench::EvalReport src = sample_report();
  const fs::path dir = fs::temp_directory_path() / "pelab_bench_noseed";
  fs::create_directories(dir);

  const std::string json_path = (dir / "r.json").string();
  bench::emit_report(src, json_path, bench::ReportFormat::Json);
  std::ifstream in(json_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("\"seed\": 424242,");
  REQUIRE(pos != std::string::npos);
  text.erase(pos, 15);
  std::ofstream(json_path, std::ios::trunc) << text;
  CHECK_THROWS_WITH_AS(bench::parse_report(json_path), doctest::Contains("seed"),
                       ValidationError);

  const std::string csv_path = (dir / "r.csv").string();
  bench::emit_report(src, csv_path, bench::ReportFormat::Csv);
  std::ifstream cin_(csv_path);
  std::string csv((std::istreambuf_iterator<char>(cin_)), std::istreambuf_iterator<char>());
  cin_.close();
  const auto line = csv.find("# seed=424242\n");
  REQUIRE(line != std::string::npos);
  csv.erase(line, 14);
  std::ofstream(csv_path, std::ios::trunc) << csv;
  CHECK_THROWS_WITH_AS(bench::parse_report(csv_path), doctest::Contains("seed"), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("report validation enforces the counting invariant") {
  bench::EvalReport bad = sample_report();
  bad.pairs[0].timeouts = 4;  // 11 + 4 != 16
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("captures + timeouts"), ValidationError);

  bench::EvalReport off_layout = sample_report();
  off_layout.pairs[0].evader_id = "not_in_columns";
  CHECK_THROWS_AS(off_layout.validate(), ValidationError);
}
