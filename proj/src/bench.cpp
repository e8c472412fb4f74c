#include "pelab/bench.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pelab/policy_io.hpp"

namespace pelab::bench {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double_field(const std::string& s, const char* what) {
  if (s.empty()) return 0.0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == nullptr || *end != '\0') {
    throw ValidationError(std::string("report: bad numeric field in ") + what + ": '" + s + "'");
  }
  return v;
}

int parse_int_field(const std::string& s, const char* what) {
  const double v = parse_double_field(s, what);
  return static_cast<int>(v);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

}  // namespace

void EvalReport::validate() const {
  for (const auto& p : pairs) {
    if (p.episodes <= 0) throw ValidationError("report: pair with no episodes");
    if (p.captures + p.timeouts != p.episodes) {
      throw ValidationError("report: captures + timeouts != episodes for (" + p.pursuer_id +
                            ", " + p.evader_id + ")");
    }
    if (p.captures < 0 || p.timeouts < 0 || p.crashes < 0 || p.crashes > p.episodes) {
      throw ValidationError("report: negative or oversized counts");
    }
    if (!(p.capture_rate >= 0.0 && p.capture_rate <= 1.0)) {
      throw ValidationError("report: capture_rate outside [0, 1]");
    }
    if (!row_ids.empty()) {
      const bool row_ok = std::find(row_ids.begin(), row_ids.end(), p.pursuer_id) != row_ids.end();
      const bool col_ok =
          std::find(column_ids.begin(), column_ids.end(), p.evader_id) != column_ids.end();
      if (!row_ok || !col_ok) throw ValidationError("report: pair outside the declared layout");
    }
  }
  for (const auto& s : max_speed) {
    if (!(s.max_linear_mps >= 0.0) || !(s.max_angular_radps >= 0.0)) {
      throw ValidationError("report: negative speed maxima");
    }
  }
  for (const auto& r : references) {
    if (!(r.capture_rate >= 0.0 && r.capture_rate <= 1.0)) {
      throw ValidationError("report: reference rate outside [0, 1]");
    }
  }
  if (action_mode.empty()) throw ValidationError("report: empty action_mode");
}

bool EvalReport::cell_present(size_t row, size_t col) const {
  if (row >= row_ids.size() || col >= column_ids.size()) return false;
  for (const auto& p : pairs) {
    if (p.pursuer_id == row_ids[row] && p.evader_id == column_ids[col]) return true;
  }
  return false;
}

int introduction_row(int position, int admission_stage) {
  if (position < 1) throw ValidationError("introduction_row: positions are 1-based");
  if (admission_stage < 0) throw ValidationError("introduction_row: negative stage");
  const int admission_row = admission_stage == 0 ? 1 : admission_stage / 2 + 1;
  return std::max(position, admission_row);
}

EvalReport capture_matrix(const league::LeagueManifest& manifest,
                          const std::vector<std::string>& benchmark_ids,
                          const env::EnvConfig& cfg, int n_episodes, uint64_t seed) {
  manifest.validate();
  if (n_episodes <= 0) throw ValidationError("capture_matrix: n_episodes must be positive");
  if (benchmark_ids.empty()) throw ValidationError("capture_matrix: no benchmarks given");

  std::vector<const policy::PolicyRecord*> rows;
  for (const auto& rec : manifest.pursuers) {
    if (rec.stage_index >= 1) rows.push_back(&rec);
  }
  if (rows.empty()) throw ValidationError("capture_matrix: league has no trained pursuer yet");

  std::vector<const policy::PolicyRecord*> cols;
  for (const auto& id : benchmark_ids) {
    const policy::PolicyRecord* rec = manifest.find(id);
    if (rec == nullptr) throw ValidationError("capture_matrix: unknown benchmark id '" + id + "'");
    if (rec->role != env::Role::Evader) {
      throw ValidationError("capture_matrix: benchmark '" + id + "' is not an evader");
    }
    cols.push_back(rec);
  }

  EvalReport report;
  report.seed = seed;
  for (const auto* p : rows) report.row_ids.push_back(p->id);
  report.column_ids = benchmark_ids;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < cols.size(); ++c) {
      if (introduction_row(static_cast<int>(c) + 1, cols[c]->stage_index) >
          static_cast<int>(r) + 1) {
        continue;  // not yet introduced at this row
      }
      report.pairs.push_back(
          eval::evaluate_pair(*rows[r], *cols[c], cfg, n_episodes, mix_seed(seed, r, c)));
    }
  }
  report.validate();
  return report;
}

std::string format_matrix(const EvalReport& report) {
  size_t width = 8;
  for (const auto& id : report.column_ids) width = std::max(width, id.size() + 2);
  std::ostringstream out;
  out << std::string(10, ' ');
  for (const auto& id : report.column_ids) {
    out << std::string(width - id.size(), ' ') << id;
  }
  out << "\n";
  for (size_t r = 0; r < report.row_ids.size(); ++r) {
    char label[16];
    std::snprintf(label, sizeof(label), "stage %-4zu", r + 1);
    out << label;
    for (size_t c = 0; c < report.column_ids.size(); ++c) {
      std::string cell = "--";
      for (const auto& p : report.pairs) {
        if (p.pursuer_id == report.row_ids[r] && p.evader_id == report.column_ids[c]) {
          char buf[16];
          std::snprintf(buf, sizeof(buf), "%.4f", p.capture_rate);
          cell = buf;
          break;
        }
      }
      out << std::string(width - cell.size(), ' ') << cell;
    }
    out << "\n";
  }
  return out.str();
}

SpeedRow max_speed_probe(const policy::PolicyRecord& record, const env::EnvConfig& cfg,
                         double duration_s, int n_rollouts, uint64_t seed) {
  record.validate();
  if (duration_s <= 0.0) throw ValidationError("max_speed_probe: duration must be positive");
  if (n_rollouts <= 0) throw ValidationError("max_speed_probe: n_rollouts must be positive");

  env::EnvConfig probe_cfg = cfg;
  probe_cfg.arena.max_steps =
      std::max(1, static_cast<int>(std::ceil(duration_s / probe_cfg.arena.dt_s)));
  const env::Role own_role = record.role;

  SpeedRow row;
  row.policy_id = record.id;
  env::Episode ep(probe_cfg);
  policy::RecordActor actor;
  for (int k = 0; k < n_rollouts; ++k) {
    ep.reset(mix_seed(seed, static_cast<uint64_t>(k)));
    const quad::QuadState own = ep.state(own_role);
    quad::QuadState pinned;  // far away, at rest, level
    pinned.position_m = own.position_m + Vec3(50.0, 50.0, 0.0);
    if (own_role == env::Role::Pursuer) {
      ep.reset_to(own, pinned);
    } else {
      ep.reset_to(pinned, own);
    }
    actor.bind(&record, own);
    while (!ep.done()) {
      const control::ActionCommand own_cmd = actor.act(ep, own_role);
      const control::ActionCommand hold = control::ActionCommand::velocity(Vec3::Zero());
      if (own_role == env::Role::Pursuer) {
        ep.step(own_cmd, hold);
      } else {
        ep.step(hold, own_cmd);
      }
      const quad::QuadState& s = ep.state(own_role);
      row.max_linear_mps = std::max(row.max_linear_mps, s.velocity_mps.norm());
      row.max_angular_radps = std::max(row.max_angular_radps, s.body_rates_radps.norm());
    }
  }
  return row;
}

void TiltScript::validate() const {
  if (pitch_rate_radps <= 0.0 || pitch_rate_radps > control::kMaxRollPitchRate) {
    throw ValidationError("tilt script: pitch rate outside (0, 15]");
  }
  if (pulse_s <= 0.0 || path_limit_m <= 0.0 || max_duration_s <= pulse_s) {
    throw ValidationError("tilt script: non-positive timing or path budget");
  }
}

TiltResult scripted_tilt_run(const quad::QuadParams& params, const control::RatePidGains& gains,
                             const TiltScript& script) {
  params.validate();
  gains.validate();
  script.validate();

  const double dt = 0.016;
  quad::QuadState state;
  state.position_m = Vec3(0.0, 0.0, 2.0);
  control::RatePidState pid;

  TiltResult result;
  double path_m = 0.0;
  for (double t = 0.0; t < script.max_duration_s && path_m < script.path_limit_m; t += dt) {
    Vec3 rates_des = Vec3::Zero();
    double thrust_norm = params.max_thrust_norm();
    if (t < script.pulse_s) {
      rates_des.y() = script.pitch_rate_radps;
      thrust_norm = params.gravity_mps2;  // hold hover thrust while pitching over
    }
    const quad::RotorSpeeds rotors =
        control::track_body_rates(rates_des, thrust_norm, state, gains, params, pid, dt);
    state = quad::step(state, rotors, params, dt);
    path_m += state.velocity_mps.norm() * dt;
    if (path_m <= script.path_limit_m) {
      result.max_body_rate_radps =
          std::max(result.max_body_rate_radps, state.body_rates_radps.norm());
      if (state.velocity_mps.norm() > result.max_speed_mps) {
        result.max_speed_mps = state.velocity_mps.norm();
        result.path_length_m = path_m;
      }
    }
  }
  return result;
}

EvalReport cross_modality_suite(const policy::PolicyRecord& rate_pursuer,
                                const policy::PolicyRecord& vel_pursuer,
                                const policy::PolicyRecord& rate_evader,
                                const policy::PolicyRecord& vel_evader,
                                const env::EnvConfig& cfg, int n_episodes, uint64_t seed) {
  if (n_episodes <= 0) throw ValidationError("cross_modality_suite: n_episodes must be positive");
  policy::expect_modality(rate_pursuer, policy::Modality::Rate);
  policy::expect_modality(rate_evader, policy::Modality::Rate);
  policy::expect_modality(vel_pursuer, policy::Modality::Velocity);
  policy::expect_modality(vel_evader, policy::Modality::Velocity);
  if (rate_pursuer.role != env::Role::Pursuer || vel_pursuer.role != env::Role::Pursuer ||
      rate_evader.role != env::Role::Evader || vel_evader.role != env::Role::Evader) {
    throw ValidationError("cross_modality_suite: record role does not match its slot");
  }

  EvalReport report;
  report.seed = seed;
  report.pairs.push_back(eval::evaluate_pair(rate_pursuer, vel_evader, cfg, n_episodes,
                                             mix_seed(seed, 1)));
  report.pairs.push_back(eval::evaluate_pair(vel_pursuer, rate_evader, cfg, n_episodes,
                                             mix_seed(seed, 2)));
  report.references.push_back({"rate", "velocity", kFullScaleRatePursuerRate});
  report.references.push_back({"velocity", "rate", kFullScaleVelocityPursuerRate});
  report.validate();
  return report;
}

namespace {

json report_to_json(const EvalReport& r) {
  json j;
  j["schema"] = "pelab-eval-report";
  j["version"] = 1;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["action_mode"] = r.action_mode;
  j["pairs"] = json::array();
  for (const auto& p : r.pairs) {
    j["pairs"].push_back({{"pursuer_id", p.pursuer_id},
                          {"evader_id", p.evader_id},
                          {"episodes", p.episodes},
                          {"captures", p.captures},
                          {"timeouts", p.timeouts},
                          {"crashes", p.crashes},
                          {"mean_capture_time_s", p.mean_capture_time_s},
                          {"capture_rate", p.capture_rate}});
  }
  j["max_speed"] = json::array();
  for (const auto& s : r.max_speed) {
    j["max_speed"].push_back({{"policy_id", s.policy_id},
                              {"max_linear_mps", s.max_linear_mps},
                              {"max_angular_radps", s.max_angular_radps}});
  }
  j["references"] = json::array();
  for (const auto& ref : r.references) {
    j["references"].push_back({{"pursuer", ref.pursuer_label},
                               {"evader", ref.evader_label},
                               {"capture_rate", ref.capture_rate}});
  }
  j["row_ids"] = r.row_ids;
  j["column_ids"] = r.column_ids;
  return j;
}

EvalReport report_from_json(const json& j) {
  if (!j.contains("seed")) throw ValidationError("report: missing seed");
  EvalReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.action_mode = j.at("action_mode").get<std::string>();
  for (const auto& p : j.at("pairs")) {
    eval::PairResult pr;
    pr.pursuer_id = p.at("pursuer_id").get<std::string>();
    pr.evader_id = p.at("evader_id").get<std::string>();
    pr.episodes = p.at("episodes").get<int>();
    pr.captures = p.at("captures").get<int>();
    pr.timeouts = p.at("timeouts").get<int>();
    pr.crashes = p.at("crashes").get<int>();
    pr.mean_capture_time_s = p.at("mean_capture_time_s").get<double>();
    pr.capture_rate = p.at("capture_rate").get<double>();
    r.pairs.push_back(pr);
  }
  for (const auto& s : j.at("max_speed")) {
    r.max_speed.push_back({s.at("policy_id").get<std::string>(),
                           s.at("max_linear_mps").get<double>(),
                           s.at("max_angular_radps").get<double>()});
  }
  for (const auto& ref : j.at("references")) {
    r.references.push_back({ref.at("pursuer").get<std::string>(),
                            ref.at("evader").get<std::string>(),
                            ref.at("capture_rate").get<double>()});
  }
  r.row_ids = j.at("row_ids").get<std::vector<std::string>>();
  r.column_ids = j.at("column_ids").get<std::vector<std::string>>();
  return r;
}

constexpr const char* kCsvHeader =
    "kind,pursuer_id,evader_id,policy_id,episodes,captures,timeouts,crashes,"
    "mean_capture_time_s,capture_rate,max_linear_mps,max_angular_radps";

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "# pelab-eval-report v1\n";
  out << "# config_hash=" << r.config_hash << "\n";
  out << "# seed=" << r.seed << "\n";
  out << "# action_mode=" << r.action_mode << "\n";
  if (!r.row_ids.empty()) out << "# rows=" << join(r.row_ids, '|') << "\n";
  if (!r.column_ids.empty()) out << "# cols=" << join(r.column_ids, '|') << "\n";
  out << kCsvHeader << "\n";
  for (const auto& p : r.pairs) {
    out << "pair," << p.pursuer_id << "," << p.evader_id << ",," << p.episodes << ","
        << p.captures << "," << p.timeouts << "," << p.crashes << ","
        << fmt_double(p.mean_capture_time_s) << "," << fmt_double(p.capture_rate) << ",,\n";
  }
  for (const auto& s : r.max_speed) {
    out << "speed,,," << s.policy_id << ",,,,,,," << fmt_double(s.max_linear_mps) << ","
        << fmt_double(s.max_angular_radps) << "\n";
  }
  for (const auto& ref : r.references) {
    out << "reference," << ref.pursuer_label << "," << ref.evader_label << ",,,,,,,"
        << fmt_double(ref.capture_rate) << ",,\n";
  }
  return out.str();
}

EvalReport report_from_csv(const std::string& text) {
  EvalReport r;
  bool saw_seed = false;
  bool saw_header = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(1);
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;  // banner line
      std::string key = body.substr(0, eq);
      key.erase(0, key.find_first_not_of(' '));
      const std::string value = body.substr(eq + 1);
      if (key == "config_hash") {
        r.config_hash = value;
      } else if (key == "seed") {
        r.seed = std::strtoull(value.c_str(), nullptr, 10);
        saw_seed = true;
      } else if (key == "action_mode") {
        r.action_mode = value;
      } else if (key == "rows") {
        r.row_ids = split(value, '|');
      } else if (key == "cols") {
        r.column_ids = split(value, '|');
      }
      continue;
    }
    if (!saw_header) {
      if (line != kCsvHeader) throw ValidationError("report: unexpected CSV column header");
      saw_header = true;
      continue;
    }
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 12) throw ValidationError("report: CSV row with wrong field count");
    if (f[0] == "pair") {
      eval::PairResult p;
      p.pursuer_id = f[1];
      p.evader_id = f[2];
      p.episodes = parse_int_field(f[4], "episodes");
      p.captures = parse_int_field(f[5], "captures");
      p.timeouts = parse_int_field(f[6], "timeouts");
      p.crashes = parse_int_field(f[7], "crashes");
      p.mean_capture_time_s = parse_double_field(f[8], "mean_capture_time_s");
      p.capture_rate = parse_double_field(f[9], "capture_rate");
      r.pairs.push_back(p);
    } else if (f[0] == "speed") {
      r.max_speed.push_back({f[3], parse_double_field(f[10], "max_linear_mps"),
                             parse_double_field(f[11], "max_angular_radps")});
    } else if (f[0] == "reference") {
      r.references.push_back({f[1], f[2], parse_double_field(f[9], "capture_rate")});
    } else {
      throw ValidationError("report: unknown CSV row kind '" + f[0] + "'");
    }
  }
  if (!saw_header) throw ValidationError("report: CSV column header missing");
  if (!saw_seed) throw ValidationError("report: missing seed");
  return r;
}

}  // namespace

void emit_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  report.validate();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ValidationError("emit_report: cannot open " + path);
  if (format == ReportFormat::Json) {
    f << report_to_json(report).dump(2) << "\n";
  } else {
    f << report_to_csv(report);
  }
  if (!f) throw ValidationError("emit_report: write failed for " + path);
}

EvalReport parse_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("parse_report: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw ValidationError("parse_report: empty file");
  EvalReport r;
  if (text[first] == '{') {
    try {
      r = report_from_json(json::parse(text));
    } catch (const json::exception& e) {
      throw ValidationError("parse_report: malformed JSON: " + std::string(e.what()));
    }
  } else {
    r = report_from_csv(text);
  }
  r.validate();
  return r;
}

}  // namespace pelab::bench
