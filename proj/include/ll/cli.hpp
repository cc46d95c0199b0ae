#pragma once

// Scenario configs (JSON, versioned; see scenarios/schema.json), pipelines and
// artifact emission for the lorlab tool.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ll/experiments.hpp"

namespace ll::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kConfigVersion = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineError : std::runtime_error {
  std::string module;
  PipelineError(const std::string& mod, const std::string& msg) : std::runtime_error("[" + mod + "] " + msg), module(mod) {}
};

inline const std::vector<std::string>& pipelines() {
  static const std::vector<std::string> p{"geodesic", "observe", "reconstruct", "active", "fourwave", "simulate"};
  return p;
}

// ------------------------------------------------------------ field reader

class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  [[noreturn]] void fail(const std::string& k, const std::string& msg) const {
    std::string p = k.empty() ? path_ : field(k);
    throw ConfigError((p.empty() ? std::string("<root>") : p) + ": " + msg);
  }
  bool has(const std::string& k) const { return j_.contains(k); }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.count(it.key())) fail(it.key(), "unknown key");
  }

  Node child(const std::string& k) const {
    if (!has(k)) return Node(empty(), field(k));
    return Node(j_.at(k), field(k));
  }

  double num(const std::string& k, double def, double lo = -kInf, double hi = kInf) const {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number()) fail(k, "expected a number");
    double x = v.get<double>();
    if (!(x >= lo && x <= hi)) fail(k, "value " + fmt(x) + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
    return x;
  }
  int integer(const std::string& k, int def, int lo, int hi) const {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_integer()) fail(k, "expected an integer");
    long long x = v.get<long long>();
    if (x < lo || x > hi) fail(k, "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return int(x);
  }
  bool flag(const std::string& k, bool def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_boolean()) fail(k, "expected true or false");
    return j_.at(k).get<bool>();
  }
  std::string str(const std::string& k, const std::string& def, const std::vector<std::string>& allowed = {}) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_string()) fail(k, "expected a string");
    std::string s = j_.at(k).get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string l;
      for (auto& a : allowed) l += (l.empty() ? "" : ", ") + a;
      fail(k, "'" + s + "' is not one of {" + l + "}");
    }
    return s;
  }
  std::vector<double> vec(const std::string& k, std::vector<double> def, int size = -1) const {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array()) fail(k, "expected an array of numbers");
    std::vector<double> out;
    for (auto& x : v) {
      if (!x.is_number()) fail(k, "expected an array of numbers");
      out.push_back(x.get<double>());
    }
    if (size >= 0 && int(out.size()) != size) fail(k, "expected " + std::to_string(size) + " entries");
    return out;
  }
  std::vector<std::vector<double>> rows(const std::string& k, int width) const {
    std::vector<std::vector<double>> out;
    if (!has(k)) return out;
    const json& v = j_.at(k);
    if (!v.is_array()) fail(k, "expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::string p = k + "[" + std::to_string(i) + "]";
      if (!v[i].is_array() || int(v[i].size()) != width) fail(p, "expected " + std::to_string(width) + " numbers");
      std::vector<double> r;
      for (auto& x : v[i]) {
        if (!x.is_number()) fail(p, "expected numbers");
        r.push_back(x.get<double>());
      }
      out.push_back(r);
    }
    return out;
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  static std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  }
  const json& j_;
  std::string path_;
};

// ---------------------------------------------------------------- scenario

struct GeodesicJob {
  std::string mode = "path";  // path, closed_form, sphere, triangle
  MetricSpec metric;
  Point x;
  Vec4 xi = Vec4::Zero();
  double max_param = 4.0;
  int samples = 201;
  bool cut = true;
  int n = 0;
};

struct ObserveJob {
  MetricSpec metric;
  std::vector<Vec3> positions, velocities;
  FamilyParams par;
  double T = 4.0;
  std::string sample = "random";  // random, grid, clustered
  int n = 100;
  Vec4 center = Vec4::Zero(), half = Vec4(0.3, 0.4, 0.4, 0.4);
  double h = 5e-4;
  bool blind = false;
  bool first_cone_hit = false;
};

struct ReconstructJob {
  std::string mode = "scenario";  // scenario, file, gradient
  exp::PassiveRunOptions run;
  std::string records_file;
  int gradient_points = 200;
};

struct Scenario {
  std::string pipeline;
  std::uint64_t seed = 1;
  bool slow = false;
  json config;
  GeodesicJob geodesic;
  ObserveJob observe;
  ReconstructJob reconstruct;
  exp::ActiveRunOptions active;
  exp::FourwaveOptions fourwave;
  exp::SimOptions simulate;
};

inline MetricSpec parse_metric(const Node& n) {
  n.allow({"kind", "hubble", "beta1", "center", "rb", "amp"});
  std::string k = n.str("kind", "minkowski", {"minkowski", "product_sphere", "warped", "bump"});
  if (k == "warped") return MetricSpec::warped(n.num("hubble", 0.0, -1, 1), n.num("beta1", 0.0, 0, 10));
  if (k == "bump") {
    auto c = n.vec("center", {0, 0, 0, 0}, 4);
    double rb = n.num("rb", 0.5, 1e-6, 1e6);
    double amp = n.num("amp", 0.1, 0.0, 0.1);
    return MetricSpec::bump(Vec4(c[0], c[1], c[2], c[3]), rb, amp);
  }
  return kind_from_name(k) == Kind::ProductSphere ? MetricSpec::product_sphere() : MetricSpec::minkowski();
}

inline void parse_geodesic(const Node& n, Scenario& s) {
  n.allow({"mode", "x", "chart", "direction", "xi", "time_sign", "max_param", "samples", "cut", "n"});
  GeodesicJob& g = s.geodesic;
  g.mode = n.str("mode", "path", {"path", "closed_form", "sphere", "triangle"});
  int def_n = g.mode == "closed_form" ? 1000 : g.mode == "sphere" ? 100 : 1000;
  g.n = n.integer("n", def_n, 1, 1000000);
  if (g.mode != "path") return;
  auto x = n.vec("x", {0, 0, 0, 0}, 4);
  g.x = Point(Vec4(x[0], x[1], x[2], x[3]), n.integer("chart", 0, 0, 1));
  if (n.has("xi") && n.has("direction")) n.fail("xi", "give either xi or direction");
  if (n.has("xi")) {
    auto v = n.vec("xi", {}, 4);
    g.xi = Vec4(v[0], v[1], v[2], v[3]);
  } else {
    auto d = n.vec("direction", {1, 0, 0}, 3);
    Vec3 dv(d[0], d[1], d[2]);
    if (dv.norm() == 0) n.fail("direction", "must be nonzero");
    double sg = n.num("time_sign", 1.0, -1.0, 1.0);
    if (sg != 1.0 && sg != -1.0) n.fail("time_sign", "must be 1 or -1");
    g.xi = null_complete(g.metric, g.x, dv, sg);
  }
  g.max_param = n.num("max_param", 4.0, 1e-9, 1e4);
  g.samples = n.integer("samples", 201, 2, 1000000);
  g.cut = n.flag("cut", true);
}

inline void parse_observe(const Node& root, Scenario& s) {
  ObserveJob& o = s.observe;
  o.metric = s.geodesic.metric;
  Node f = root.child("family");
  f.allow({"T", "positions", "velocities", "params"});
  o.T = f.num("T", 4.0, 1e-6, 1e6);
  for (auto& r : f.rows("positions", 3)) o.positions.emplace_back(r[0], r[1], r[2]);
  for (auto& r : f.rows("velocities", 3)) o.velocities.emplace_back(r[0], r[1], r[2]);
  if (o.positions.empty()) o.positions = exp::fibonacci_ring(6, 1.0);
  Node p = f.child("params");
  p.allow({"s_m2", "s_m", "s_p", "s_p2"});
  o.par.s_m2 = p.num("s_m2", o.par.s_m2, -1, 1);
  o.par.s_m = p.num("s_m", o.par.s_m, -1, 1);
  o.par.s_p = p.num("s_p", o.par.s_p, -1, 1);
  o.par.s_p2 = p.num("s_p2", o.par.s_p2, -1, 1);
  if (!(o.par.s_m2 < o.par.s_m && o.par.s_m < o.par.s_p && o.par.s_p < o.par.s_p2))
    p.fail("", "need s_m2 < s_m < s_p < s_p2");
  Node sm = root.child("sample");
  sm.allow({"mode", "n", "center", "half", "h", "blind", "first_cone_hit"});
  o.sample = sm.str("mode", "random", {"random", "grid", "clustered"});
  o.n = sm.integer("n", o.sample == "grid" ? 3 : 100, 1, 1000000);
  auto c = sm.vec("center", {0, 0, 0, 0}, 4), hf = sm.vec("half", {0.3, 0.4, 0.4, 0.4}, 4);
  o.center = Vec4(c[0], c[1], c[2], c[3]);
  o.half = Vec4(hf[0], hf[1], hf[2], hf[3]);
  if (o.half.minCoeff() < 0) sm.fail("half", "entries must be nonnegative");
  o.h = sm.num("h", 5e-4, 1e-9, 1.0);
  o.blind = sm.flag("blind", false);
  o.first_cone_hit = sm.flag("first_cone_hit", false);
}

inline void parse_reconstruct(const Node& n, const Node& tol, Scenario& s) {
  n.allow({"mode", "metric", "records", "h", "records_file", "quantized", "gradient_points"});
  ReconstructJob& r = s.reconstruct;
  r.mode = n.str("mode", "scenario", {"scenario", "file", "gradient"});
  r.run.metric = n.str("metric", "bump", {"bump", "minkowski"});
  r.run.records = n.integer("records", 2000, 26, 1000000);
  r.run.h = n.num("h", 5e-4, 1e-7, 0.1);
  r.run.quantized = n.flag("quantized", true);
  r.run.seed = s.seed;
  r.gradient_points = n.integer("gradient_points", 200, 1, 1000000);
  r.records_file = n.str("records_file", "");
  if (r.mode == "file" && r.records_file.empty()) n.fail("records_file", "required in file mode");
  r.run.passive.k = tol.integer("k", r.run.passive.k, 8, 200);
  r.run.passive.cond_min = tol.num("cond_min", r.run.passive.cond_min, 0, 1);
  r.run.passive.embed_tol = tol.num("embed_tol", r.run.passive.embed_tol, 0, 1);
}

inline void parse_active(const Node& n, Scenario& s) {
  n.allow({"metric", "T", "box_half", "theta1", "targets", "triples", "kappa"});
  auto& a = s.active;
  a.metric = n.str("metric", "minkowski", {"minkowski", "bump"});
  a.T = n.num("T", 4.0, 1.0, 100.0);
  a.box_half = n.num("box_half", 0.5, 0.05, 10.0);
  a.theta1 = n.num("theta1", 0.2, 1e-3, 1.0);
  a.targets = n.integer("targets", 100, 0, 100000);
  a.triples = n.integer("triples", 25, 0, 100000);
  a.seed = s.seed;
  Node k = n.child("kappa");
  k.allow({"levels", "dirs", "safety", "max_param"});
  a.kappa.levels = k.integer("levels", a.kappa.levels, 1, 1000);
  a.kappa.dirs = k.integer("dirs", a.kappa.dirs, 1, 100000);
  a.kappa.safety = k.num("safety", a.kappa.safety, 1e-3, 1.0);
  a.kappa.max_param = k.num("max_param", a.kappa.max_param, 1e-3, 1e3);
}

inline void parse_fourwave(const Node& n, Scenario& s) {
  n.allow({"configs", "oracle_ell", "taus", "tau_ref", "rho3s", "table_ell", "polarizations"});
  auto& f = s.fourwave;
  if (n.has("configs")) {
    f.configs.clear();
    auto rows = n.rows("configs", 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::array<double, 4> r{};
      for (int j = 0; j < 4; ++j) {
        r[j] = rows[i][j];
        if (!(r[j] > 0 && r[j] < 0.9396))
          n.fail("configs[" + std::to_string(i) + "]", "rho entries must lie in (0, 0.9396)");
      }
      f.configs.push_back(r);
    }
  }
  f.oracle_ell = n.integer("oracle_ell", 3, 1, 6);
  f.taus = n.vec("taus", f.taus);
  if (f.taus.size() < 2) n.fail("taus", "need at least two values");
  for (double t : f.taus)
    if (!(t > 1)) n.fail("taus", "values must exceed 1");
  f.tau_ref = n.num("tau_ref", 1e4, 1.0, 1e12);
  f.rho3s = n.vec("rho3s", f.rho3s);
  if (f.rho3s.empty()) n.fail("rho3s", "need at least one value");
  for (double r : f.rho3s)
    if (!(r > 0 && r < 1)) n.fail("rho3s", "values must lie in (0, 1)");
  f.table_ell = n.integer("table_ell", 16, 1, 64);
  f.polarizations = n.integer("polarizations", 20, 0, 100000);
  f.seed = s.seed;
}

inline void parse_simulate(const Node& n, Scenario& s) {
  n.allow({"dims", "n", "half", "cfl", "steps", "t_q", "width_cells", "window", "slices", "theta", "mask_cells",
           "negative", "translate_by", "remainder", "rem_n", "rem_eps", "rem_T", "snapshots"});
  auto& o = s.simulate;
  o.dims = n.integer("dims", 3, 3, 4);
  if (o.dims == 4 && !s.slow) n.fail("dims", "1+3 runs require --slow");
  o.n = n.integer("n", 512, 8, 4096);
  o.half = n.num("half", 4.0, 1e-3, 1e3);
  o.cfl = n.num("cfl", 0.0, 0.0, 10.0);
  o.steps = n.integer("steps", 1024, 1, 10000000);
  o.t_q = n.num("t_q", 2.5, 0.0, 1e3);
  o.width_cells = n.num("width_cells", 10, 1, 1000);
  o.window = n.num("window", 0.5, 1e-3, 1e3);
  o.slices = n.vec("slices", o.slices);
  if (o.slices.empty()) n.fail("slices", "need at least one slice");
  for (double t : o.slices)
    if (!(t > o.t_q)) n.fail("slices", "slices must lie after t_q");
  o.theta = n.num("theta", 0.25, 0.0, 1.0);
  o.mask_cells = n.num("mask_cells", o.dims == 4 ? 3 : 6, 0, 1000);
  o.negative = n.flag("negative", true);
  o.translate_by = n.num("translate_by", 1.5, 0.0, 1e3);
  o.remainder = n.flag("remainder", o.dims == 3);
  o.rem_n = n.integer("rem_n", 96, 16, 4096);
  o.rem_eps = n.vec("rem_eps", o.rem_eps);
  if (o.rem_eps.size() < 2) n.fail("rem_eps", "need at least two values");
  o.rem_T = n.num("rem_T", 0.8, 1e-6, 1e3);
  o.keep_snapshots = n.flag("snapshots", true);
  GridSpec g;
  g.dims = o.dims;
  g.n = o.n;
  g.half = o.half;
  double T = *std::max_element(o.slices.begin(), o.slices.end());
  g.cfl = o.cfl > 0 ? o.cfl : T / (o.steps * g.h());
  if (g.cfl > g.cfl_max()) {
    std::string msg = "CFL " + std::to_string(g.cfl) + " exceeds the stable limit " + std::to_string(g.cfl_max());
    n.fail(o.cfl > 0 ? "cfl" : "steps", msg);
  }
}

// Validates the whole config up front. pipeline may come from the config or
// the subcommand; seed_override < 0 keeps the config's seed.
inline Scenario load_scenario(const json& cfg, const std::string& pipeline = "", long long seed_override = -1,
                              bool slow = false) {
  Node root(cfg, "");
  root.allow({"version", "pipeline", "seed", "metric", "family", "sample", "tolerances", "geodesic", "reconstruct",
              "active", "fourwave", "simulate", "description"});
  if (!root.has("version")) root.fail("version", "missing");
  root.integer("version", kConfigVersion, kConfigVersion, kConfigVersion);
  Scenario s;
  s.config = cfg;
  s.slow = slow;
  std::string p = root.str("pipeline", "", pipelines());
  if (!pipeline.empty() && !p.empty() && p != pipeline)
    root.fail("pipeline", "config is for '" + p + "', subcommand is '" + pipeline + "'");
  s.pipeline = pipeline.empty() ? p : pipeline;
  if (s.pipeline.empty()) root.fail("pipeline", "missing");
  if (root.has("seed")) {
    if (!cfg.at("seed").is_number_unsigned()) root.fail("seed", "expected a nonnegative integer");
    s.seed = cfg.at("seed").get<std::uint64_t>();
  }
  if (seed_override >= 0) s.seed = std::uint64_t(seed_override);
  try {
    s.geodesic.metric = parse_metric(root.child("metric"));
  } catch (const std::invalid_argument& e) {
    root.fail("metric", e.what());
  }
  Node tol = root.child("tolerances");
  tol.allow({"k", "cond_min", "embed_tol"});
  if (s.pipeline == "geodesic") parse_geodesic(root.child("geodesic"), s);
  if (s.pipeline == "observe") parse_observe(root, s);
  if (s.pipeline == "reconstruct") parse_reconstruct(root.child("reconstruct"), tol, s);
  if (s.pipeline == "active") parse_active(root.child("active"), s);
  if (s.pipeline == "fourwave") parse_fourwave(root.child("fourwave"), s);
  if (s.pipeline == "simulate") parse_simulate(root.child("simulate"), s);
  return s;
}

inline json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError(p.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- artifacts

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr)) throw std::runtime_error("sha256 failed");
  static const char* hx = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hx[md[i] >> 4];
    out += hx[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Shortest round-trip formatting keeps CSVs exact and byte-stable.
inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
};

using Tables = std::map<std::string, Table>;

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }
  void text(const std::string& name, const std::string& data) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << data;
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    files_.insert(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
  void binary(const std::string& name, const std::vector<double>& v) {
    std::string s(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    text(name, s);
  }
  Tables& tables() { return tables_; }
  const std::set<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::set<std::string> files_;
  Tables tables_;
};

inline json tables_to_json(const Tables& t) {
  json j = json::object();
  for (auto& [name, tab] : t) {
    json rows = json::array();
    for (auto& r : tab.rows) rows.push_back(r);
    j[name] = {{"columns", tab.columns}, {"rows", rows}};
  }
  return j;
}

inline Tables tables_from_json(const json& j) {
  Tables t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    Table tab;
    tab.columns = it.value().at("columns").get<std::vector<std::string>>();
    for (auto& r : it.value().at("rows")) tab.rows.push_back(r.get<std::vector<json>>());
    t[it.key()] = tab;
  }
  return t;
}

inline std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return num(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::string to_csv(const Table& t) {
  std::string s;
  for (std::size_t i = 0; i < t.columns.size(); ++i) s += (i ? "," : "") + t.columns[i];
  s += "\n";
  for (auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + csv_cell(r[i]);
    s += "\n";
  }
  return s;
}

inline json manifest_for(const fs::path& dir, const std::set<std::string>& files, const json& head) {
  json m = head;
  json arts = json::array();
  for (auto& f : files) {
    std::string data = read_file(dir / f);
    arts.push_back({{"path", f}, {"bytes", data.size()}, {"sha256", sha256_hex(data)}});
  }
  m["artifacts"] = arts;
  return m;
}

// Writes each table of tables.json as <name>.csv or <name>.json and adds the
// files to the manifest.
inline std::vector<std::string> emit_results(const fs::path& dir, const std::string& format) {
  if (format != "csv" && format != "json") throw std::invalid_argument("unknown format '" + format + "' (csv or json)");
  if (!fs::exists(dir / "manifest.json")) throw std::invalid_argument("no manifest.json in " + dir.string());
  json man = json::parse(read_file(dir / "manifest.json"));
  std::set<std::string> files;
  for (auto& a : man.at("artifacts")) files.insert(a.at("path").get<std::string>());
  Tables tabs = tables_from_json(json::parse(read_file(dir / "tables.json")));
  std::vector<std::string> out;
  for (auto& [name, t] : tabs) {
    std::string fn = name + "." + format;
    std::ofstream f(dir / fn, std::ios::binary);
    if (format == "csv") {
      f << to_csv(t);
    } else {
      json rows = json::array();
      for (auto& r : t.rows) rows.push_back(r);
      f << json{{"columns", t.columns}, {"rows", rows}}.dump(2) << "\n";
    }
    files.insert(fn);
    out.push_back(fn);
  }
  json head = man;
  head.erase("artifacts");
  std::ofstream(dir / "manifest.json", std::ios::binary) << manifest_for(dir, files, head).dump(2) << "\n";
  return out;
}

// ---------------------------------------------------------------- pipelines

inline std::vector<json> point_row(const Point& p) { return {p.t(), p.x(1), p.x(2), p.x(3), p.chart}; }

inline json run_geodesic(const Scenario& s, ArtifactWriter& w) {
  const auto& g = s.geodesic;
  if (g.mode == "closed_form") {
    exp::ClosedFormOptions o;
    o.n = g.n;
    o.seed = s.seed;
    return exp::closed_form_suite(o).to_json();
  }
  if (g.mode == "sphere") {
    exp::SphereOptions o;
    o.n = g.n;
    o.seed = s.seed;
    return exp::sphere_suite(o).to_json();
  }
  if (g.mode == "triangle") {
    exp::TriangleOptions o;
    o.n = g.n;
    o.seed = s.seed;
    auto r = exp::triangle_suite(o);
    auto& t = w.tables()["triangle"];
    t.columns = {"kind", "n", "min_slack", "failures"};
    for (auto& row : r.rows) t.rows.push_back({row.kind, row.n, row.min_slack, row.failures});
    return r.to_json();
  }
  const MetricSpec& m = g.metric;
  auto path = integrate_geodesic(m, g.x, g.xi, g.max_param);
  auto& t = w.tables()["geodesic"];
  t.columns = {"s", "t", "x1", "x2", "x3", "chart"};
  double end = path.end();
  for (int i = 0; i < g.samples; ++i) {
    double sp = end * i / (g.samples - 1);
    auto [p, v] = path.at(sp);
    std::vector<json> r{sp};
    for (auto& c : point_row(p)) r.push_back(c);
    t.rows.push_back(r);
  }
  auto cc = causal_character(m, {g.x, g.xi});
  json rep{{"metric", metric_to_json(m)},
           {"causal", cc.cls == Causal::Null ? "null" : cc.cls == Causal::Timelike ? "timelike" : "spacelike"},
           {"termination", termination_name(path.term)},
           {"end_param", end},
           {"norm_drift", path.max_norm_drift}};
  if (g.cut && cc.cls != Causal::Spacelike) {
    auto conj = first_conjugate_time(m, g.x, g.xi, g.max_param);
    rep["conjugate_time"] = conj ? json(*conj) : json(nullptr);
    if (cc.cls == Causal::Null) {
      CutOptions co;
      co.max_param = g.max_param;
      auto c = cut_time(m, g.x, g.xi, co);
      rep["cut_time"] = c.no_cut_in_region ? json(nullptr) : json(c.rho);
    }
  }
  return rep;
}

inline std::vector<Point> sample_points(const ObserveJob& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Point> out;
  if (o.sample == "clustered") return clustered_sources(o.center, o.half, o.n, o.h, rng);
  if (o.sample == "grid") {
    int k = o.n;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int c = 0; c < k; ++c)
          for (int d = 0; d < k; ++d) {
            Vec4 f(a, b, c, d);
            Vec4 x = o.center + o.half.cwiseProduct(k > 1 ? (2.0 * f / (k - 1) - Vec4::Ones()).eval() : Vec4::Zero().eval());
            out.push_back(Point(x));
          }
    return out;
  }
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < o.n; ++i) {
    Vec4 x = o.center;
    for (int j = 0; j < 4; ++j) x(j) += o.half(j) * u(rng);
    out.push_back(Point(x));
  }
  return out;
}

inline json run_observe(const Scenario& s, ArtifactWriter& w) {
  const auto& o = s.observe;
  ObserverFamily f = static_family(o.metric, o.T, o.positions, o.velocities, o.par);
  auto src = sample_points(o, s.seed);
  ObsOptions oo;
  oo.first_cone_hit = o.first_cone_hit;
  auto recs = make_records(f, src, o.blind, oo);
  w.json_file("records.json", records_to_json(f, recs));
  auto& t = w.tables()["observations"];
  t.columns = {"index"};
  if (!o.blind)
    for (auto c : {"t", "x1", "x2", "x3"}) t.columns.push_back(c);
  for (std::size_t a = 0; a < f.size(); ++a) t.columns.push_back("f" + std::to_string(a));
  int boundary = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::vector<json> r{int(i)};
    if (!o.blind)
      for (int j = 0; j < 4; ++j) r.push_back(src[i].x(j));
    for (std::size_t a = 0; a < f.size(); ++a) {
      r.push_back(quantize(recs[i].times[a]));
      boundary += recs[i].boundary[a];
    }
    t.rows.push_back(r);
  }
  return {{"records", recs.size()}, {"observers", f.size()}, {"blind", o.blind}, {"family_condition", check_family(f)},
          {"boundary_entries", boundary}};
}

inline void fit_table(ArtifactWriter& w, const std::vector<ConformalFit>& fits, const std::vector<int>& chart) {
  auto& t = w.tables()["fits"];
  t.columns = {"record", "chart", "residual"};
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) t.columns.push_back("G" + std::to_string(i) + std::to_string(j));
  for (std::size_t k = 0; k < fits.size(); ++k) {
    std::vector<json> r{fits[k].point, chart[k], fits[k].residual};
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) r.push_back(fits[k].G(i, j));
    t.rows.push_back(r);
  }
}

inline json run_reconstruct(const Scenario& s, ArtifactWriter& w, const fs::path& base) {
  const auto& r = s.reconstruct;
  if (r.mode == "gradient") {
    exp::GradientOptions o;
    o.n = r.gradient_points;
    o.seed = s.seed;
    return exp::gradient_suite(o).to_json();
  }
  if (r.mode == "file") {
    fs::path p = fs::path(r.records_file).is_absolute() ? fs::path(r.records_file) : base / r.records_file;
    auto rs = records_from_json(read_json_file(p), true);
    auto res = reconstruct(rs.records, r.run.passive);
    fit_table(w, res.fits, res.fit_chart);
    return {{"records", rs.records.size()},  {"embedding_pass", res.embedding.pass}, {"interior", res.interior},
            {"charted", res.charted},        {"charts", res.atlas.charts.size()},   {"fits", res.fits.size()},
            {"fit_failures", res.fit_failures}};
  }
  auto rep = exp::passive_run(r.run);
  fit_table(w, rep.fits, rep.fit_chart);
  return rep.to_json();
}

inline json run_active(const Scenario& s, ArtifactWriter& w) {
  auto rep = exp::active_run(s.active);
  w.json_file("construction_log.json", rep.construction_log());
  auto& t = w.tables()["targets"];
  t.columns = {"t", "x1", "x2", "x3", "surface", "max_err"};
  for (std::size_t i = 0; i < rep.targets.size(); ++i) {
    const Point& q = rep.targets[i];
    t.rows.push_back({q.t(), q.x(1), q.x(2), q.x(3), rep.stepwise.target_surface[i], rep.target_err[i]});
  }
  auto& l = w.tables()["levels"];
  l.columns = {"level", "s1", "s2", "total", "resolved"};
  for (std::size_t i = 0; i < rep.stepwise.levels.size(); ++i) {
    auto& v = rep.stepwise.levels[i];
    l.rows.push_back({int(i), v.s1, v.s2, v.total, v.resolved});
  }
  return rep.to_json();
}

inline json run_fourwave(const Scenario& s, ArtifactWriter& w) {
  auto rep = exp::fourwave_run(s.fourwave);
  auto& t = w.tables()["terms"];
  t.columns = {"sigma", "kind", "tau_power", "log10_abs", "sign", "m1", "m2", "m3", "m4"};
  for (auto& tv : rep.terms)
    t.rows.push_back({perm_name(tv.sigma), tv.kind == TermKind::T ? "T" : "Ttilde", tv.tau_power, tv.coeff.log10abs(),
                      tv.coeff.s, tv.exps[0], tv.exps[1], tv.exps[2], tv.exps[3]});
  auto& d = w.tables()["dominance"];
  d.columns = {"rho3", "log10_id", "id_equals_sigma1", "id_dominant", "gap", "tilde_gap", "top"};
  for (auto& r : rep.dominance.rows)
    d.rows.push_back({r.rho3, r.log10_id, r.id_equals_sigma1, r.id_dominant, r.gap, r.tilde_gap, perm_name(r.top)});
  auto& o = w.tables()["oracle"];
  o.columns = {"config", "rho1", "rho2", "rho3", "rho4", "slope", "predicted_power", "coeff_numeric", "coeff_closed", "rel_err"};
  for (std::size_t i = 0; i < rep.oracle.size(); ++i) {
    auto& r = rep.oracle[i];
    auto& c = s.fourwave.configs[i];
    o.rows.push_back({int(i), c[0], c[1], c[2], c[3], r.slope, r.predicted_power, r.coeff_numeric, r.coeff_closed, r.rel_err});
  }
  json j = rep.to_json();
  j["table_rho3"] = rep.table_rho3;
  j["table_ell"] = rep.table_ell;
  return j;
}

inline json run_simulate(const Scenario& s, ArtifactWriter& w) {
  auto rep = exp::sim_run(s.simulate);
  const GridSpec& g = rep.grid;
  Lattice L(g);
  for (std::size_t k = 0; k < rep.snapshots.size(); ++k) {
    const Snapshot& sn = rep.snapshots[k];
    std::vector<double> data;
    int nz = L.d == 3 ? L.n : 1;
    for (int kk = 0; kk < nz; ++kk)
      for (int j = 0; j < L.n; ++j)
        for (int i = 0; i < L.n; ++i) data.push_back(sn.data[L.at(i, j, kk)]);
    char name[64];
    std::snprintf(name, sizeof name, "snap_%03zu", k);
    w.binary(std::string(name) + ".bin", data);
    json ext = json::array();
    for (int ax = 0; ax < L.d; ++ax) ext.push_back({-g.half, g.half});
    w.json_file(std::string(name) + ".json", {{"dims", std::vector<int>(L.d, L.n)},
                                              {"extents", ext},
                                              {"h", L.h},
                                              {"dt", g.dt()},
                                              {"time", sn.t},
                                              {"field", sn.field},
                                              {"dtype", "float64"},
                                              {"order", "x fastest"}});
  }
  auto ridges = [&](const InteractionResult& r, const std::string& tag) {
    for (std::size_t k = 0; k < r.slices.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "ridges_%s_%03zu", tag.c_str(), k);
      auto& t = w.tables()[name];
      t.columns = {"t", "x", "y"};
      if (L.d == 3) t.columns.push_back("z");
      for (auto& p : r.slices[k].ridges.points) {
        std::vector<json> row{r.slices[k].t, p.x(0), p.x(1)};
        if (L.d == 3) row.push_back(p.x(2));
        t.rows.push_back(row);
      }
    }
  };
  ridges(rep.positive, "pos");
  if (rep.negative) ridges(*rep.negative, "neg");
  auto& pr = w.tables()["probes"];
  pr.columns = {"t", "x", "y", "z", "on_cone", "D", "I"};
  auto vname = [](Verdict v) { return v == Verdict::True ? "true" : v == Verdict::False ? "false" : "untested"; };
  for (auto& p : rep.positive.probes) pr.rows.push_back({p.t, p.y(0), p.y(1), p.y(2), p.on_cone, vname(p.D), vname(p.I)});
  return rep.to_json();
}

// ---------------------------------------------------------------- runner

struct RunOutput {
  fs::path dir;
  json report;
  std::vector<std::string> files;
};

inline const char* module_of(const std::string& pipeline) {
  if (pipeline == "geodesic") return "geodesic_engine";
  if (pipeline == "observe") return "observation";
  if (pipeline == "reconstruct") return "passive_reconstruction";
  if (pipeline == "active") return "active_detection";
  if (pipeline == "fourwave") return "fourwave_minkowski";
  return "nlwave_sim";
}

// base resolves relative paths inside the config (records_file).
inline RunOutput run_scenario(const Scenario& s, const fs::path& out, const std::string& format = "csv",
                              const fs::path& base = ".") {
  if (format != "csv" && format != "json") throw std::invalid_argument("unknown format '" + format + "' (csv or json)");
  ArtifactWriter w(out);
  json rep;
  try {
    if (s.pipeline == "geodesic") rep = run_geodesic(s, w);
    else if (s.pipeline == "observe") rep = run_observe(s, w);
    else if (s.pipeline == "reconstruct") rep = run_reconstruct(s, w, base);
    else if (s.pipeline == "active") rep = run_active(s, w);
    else if (s.pipeline == "fourwave") rep = run_fourwave(s, w);
    else rep = run_simulate(s, w);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(module_of(s.pipeline), e.what());
  }
  w.json_file("report.json", rep);
  w.json_file("config.json", s.config);
  w.json_file("tables.json", tables_to_json(w.tables()));
  json head{{"version", kConfigVersion},
            {"pipeline", s.pipeline},
            {"seed", s.seed},
            {"slow", s.slow},
            {"config_sha256", sha256_hex(s.config.dump())}};
  std::ofstream(out / "manifest.json", std::ios::binary) << manifest_for(out, w.files(), head).dump(2) << "\n";
  RunOutput r{out, rep, {}};
  r.files = emit_results(out, format);
  return r;
}

inline RunOutput run_scenario(const fs::path& config, const fs::path& out, const std::string& pipeline = "",
                              long long seed = -1, bool slow = false, const std::string& format = "csv") {
  Scenario s = load_scenario(read_json_file(config), pipeline, seed, slow);
  return run_scenario(s, out, format, config.parent_path());
}

}  // namespace ll::cli
