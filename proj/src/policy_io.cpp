#include "pelab/policy_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace pelab::policy {

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_vec3(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw ValidationError("policy file: malformed number '" + s + "'");
  return v;
}

Vec3 parse_vec3(const std::string& s) {
  Vec3 v;
  char* p = const_cast<char*>(s.c_str());
  for (int i = 0; i < 3; ++i) {
    char* end = nullptr;
    v(i) = std::strtod(p, &end);
    if (end == p) throw ValidationError("policy file: malformed vector '" + s + "'");
    p = end;
  }
  return v;
}

// Reads little-endian fields with bounds checks; any overrun is a truncation.
struct Cursor {
  const std::string& buf;
  size_t off = 0;

  void need(size_t k) const {
    if (off + k > buf.size()) throw ValidationError("policy file: truncated");
  }
  uint32_t read_u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  float read_f32() {
    const uint32_t bits = read_u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }
  std::string read_str() {
    const uint32_t n = read_u32();
    need(n);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

void put_tensor(std::string& out, const std::string& name, const Eigen::MatrixXd& m) {
  put_str(out, name);
  put_u32(out, static_cast<uint32_t>(m.rows()));
  put_u32(out, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      put_f32(out, static_cast<float>(m(i, j)));
    }
  }
}

bool is_reserved_key(const std::string& k) {
  return k == "id" || k == "role" || k == "modality" || k == "stage_index" ||
         k.rfind("heuristic.", 0) == 0;
}

std::map<std::string, std::string> heuristic_to_metadata(const HeuristicSpec& h) {
  std::map<std::string, std::string> m;
  m["heuristic.kind"] = heuristic_name(h.kind);
  m["heuristic.hold_initial"] = h.hold_initial ? "1" : "0";
  m["heuristic.hover_point"] = format_vec3(h.hover_point);
  m["heuristic.hover_gain"] = format_double(h.hover_gain);
  m["heuristic.circle_center"] = format_vec3(h.circle_center);
  m["heuristic.circle_radius_m"] = format_double(h.circle_radius_m);
  m["heuristic.circle_period_s"] = format_double(h.circle_period_s);
  m["heuristic.track_gain"] = format_double(h.track_gain);
  m["heuristic.repel_speed_mps"] = format_double(h.repel_speed_mps);
  m["heuristic.wall_field_margin_m"] = format_double(h.wall_field_margin_m);
  return m;
}

HeuristicSpec heuristic_from_metadata(const std::map<std::string, std::string>& m) {
  auto get = [&m](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw ValidationError("policy file: missing metadata key " + key);
    return it->second;
  };
  HeuristicSpec h;
  h.kind = heuristic_from_name(get("heuristic.kind"));
  h.hold_initial = get("heuristic.hold_initial") == "1";
  h.hover_point = parse_vec3(get("heuristic.hover_point"));
  h.hover_gain = parse_double(get("heuristic.hover_gain"));
  h.circle_center = parse_vec3(get("heuristic.circle_center"));
  h.circle_radius_m = parse_double(get("heuristic.circle_radius_m"));
  h.circle_period_s = parse_double(get("heuristic.circle_period_s"));
  h.track_gain = parse_double(get("heuristic.track_gain"));
  h.repel_speed_mps = parse_double(get("heuristic.repel_speed_mps"));
  h.wall_field_margin_m = parse_double(get("heuristic.wall_field_margin_m"));
  return h;
}

void put_mlp_tensors(std::string& out, const std::string& prefix, const nn::Mlp& net) {
  for (int l = 0; l < net.num_layers(); ++l) {
    const std::string idx = std::to_string(l);
    put_tensor(out, prefix + ".W" + idx, net.W[static_cast<size_t>(l)]);
    put_tensor(out, prefix + ".b" + idx, net.b[static_cast<size_t>(l)]);
  }
}

nn::Mlp mlp_from_tensors(const std::string& prefix,
                         const std::map<std::string, Eigen::MatrixXd>& tensors) {
  std::vector<Eigen::MatrixXd> ws;
  std::vector<Eigen::VectorXd> bs;
  for (int l = 0;; ++l) {
    const auto wit = tensors.find(prefix + ".W" + std::to_string(l));
    const auto bit = tensors.find(prefix + ".b" + std::to_string(l));
    if (wit == tensors.end()) break;
    if (bit == tensors.end()) throw ValidationError("policy file: missing bias for " + prefix);
    ws.push_back(wit->second);
    if (bit->second.cols() != 1) throw ValidationError("policy file: bias must be a column");
    bs.emplace_back(bit->second.col(0));
  }
  if (ws.empty()) throw ValidationError("policy file: no tensors for " + prefix);
  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(ws.front().cols()));
  for (const auto& w : ws) sizes.push_back(static_cast<int>(w.rows()));
  nn::Mlp net(sizes);
  for (size_t l = 0; l < ws.size(); ++l) {
    if (l > 0 && ws[l].cols() != ws[l - 1].rows()) {
      throw ValidationError("policy file: layer dimensions disagree for " + prefix);
    }
    if (bs[l].size() != ws[l].rows()) {
      throw ValidationError("policy file: bias length disagrees for " + prefix);
    }
    net.W[l] = ws[l];
    net.b[l] = bs[l];
  }
  return net;
}

}  // namespace

std::string encode_policy(const PolicyRecord& record) {
  record.validate();
  for (const auto& [k, v] : record.metadata) {
    (void)v;
    if (is_reserved_key(k)) {
      throw ValidationError("encode_policy: metadata key '" + k + "' is reserved");
    }
  }

  std::map<std::string, std::string> meta = record.metadata;
  meta["id"] = record.id;
  meta["role"] = env::role_name(record.role);
  meta["modality"] = modality_name(record.modality);
  meta["stage_index"] = std::to_string(record.stage_index);
  if (record.is_heuristic()) {
    auto h = heuristic_to_metadata(*record.heuristic);
    meta.insert(h.begin(), h.end());
  }

  std::string out;
  out.reserve(1 << 16);
  out.append("PEPO");
  put_u32(out, kPepoVersion);
  put_u32(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(out, k);
    put_str(out, v);
  }

  if (record.is_heuristic()) {
    put_u32(out, 0);
  } else {
    const GaussianPolicy& net = *record.net;
    const uint32_t tensor_count =
        static_cast<uint32_t>(2 * (net.actor.num_layers() + net.critic.num_layers()) + 3);
    put_u32(out, tensor_count);
    put_mlp_tensors(out, "actor", net.actor);
    put_tensor(out, "log_std", net.log_std.transpose());
    put_mlp_tensors(out, "critic", net.critic);
    put_tensor(out, "act_lo", net.bounds.lo.transpose());
    put_tensor(out, "act_hi", net.bounds.hi.transpose());
  }

  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  put_u32(out, static_cast<uint32_t>(crc));
  return out;
}

PolicyRecord decode_policy(const std::string& bytes) {
  if (bytes.size() < 12) throw ValidationError("policy file: truncated");
  if (bytes.compare(0, 4, "PEPO") != 0) throw ValidationError("policy file: bad magic");

  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size() - 4));
  Cursor tail{bytes, bytes.size() - 4};
  if (static_cast<uint32_t>(crc) != tail.read_u32()) {
    throw ValidationError("policy file: checksum failure");
  }

  Cursor c{bytes, 4};
  const uint32_t version = c.read_u32();
  if (version != kPepoVersion) {
    throw ValidationError("policy file: version mismatch (got " + std::to_string(version) + ")");
  }

  std::map<std::string, std::string> meta;
  const uint32_t n_meta = c.read_u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = c.read_str();
    std::string v = c.read_str();
    meta.emplace(std::move(k), std::move(v));
  }

  std::map<std::string, Eigen::MatrixXd> tensors;
  const uint32_t n_tensors = c.read_u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = c.read_str();
    const uint32_t rows = c.read_u32();
    const uint32_t cols = c.read_u32();
    c.need(4ull * rows * cols);
    Eigen::MatrixXd m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r) {
      for (uint32_t cc = 0; cc < cols; ++cc) {
        m(r, cc) = static_cast<double>(c.read_f32());
      }
    }
    tensors.emplace(name, std::move(m));
  }

  auto get_meta = [&meta](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError("policy file: missing metadata key " + key);
    return it->second;
  };

  PolicyRecord rec;
  rec.id = get_meta("id");
  rec.role = env::role_from_name(get_meta("role"));
  rec.modality = modality_from_name(get_meta("modality"));
  rec.stage_index = static_cast<int>(parse_double(get_meta("stage_index")));

  if (rec.modality == Modality::Heuristic) {
    rec.heuristic = heuristic_from_metadata(meta);
  } else {
    GaussianPolicy net;
    net.role = rec.role;
    net.modality = rec.modality;
    net.actor = mlp_from_tensors("actor", tensors);
    net.critic = mlp_from_tensors("critic", tensors);
    const auto ls = tensors.find("log_std");
    const auto lo = tensors.find("act_lo");
    const auto hi = tensors.find("act_hi");
    if (ls == tensors.end() || lo == tensors.end() || hi == tensors.end()) {
      throw ValidationError("policy file: missing log_std or action bounds");
    }
    net.log_std = ls->second.row(0);
    net.bounds.lo = lo->second.row(0);
    net.bounds.hi = hi->second.row(0);
    rec.net = std::move(net);
  }

  for (const auto& [k, v] : meta) {
    if (!is_reserved_key(k)) rec.metadata[k] = v;
  }
  rec.validate();
  return rec;
}

void save_policy(const PolicyRecord& record, const std::string& path) {
  const std::string bytes = encode_policy(record);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("save_policy: cannot open " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ValidationError("save_policy: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

PolicyRecord load_policy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("load_policy: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_policy(bytes);
}

void expect_modality(const PolicyRecord& record, Modality expected) {
  if (record.modality != expected) {
    throw ValidationError("policy '" + record.id + "' has modality " +
                          modality_name(record.modality) + ", slot requires " +
                          modality_name(expected));
  }
}

}  // namespace pelab::policy
