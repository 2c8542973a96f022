#include "csm/cohort.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "csm/error.hpp"
#include "csm/mesh_io.hpp"
#include "csm/rng.hpp"

namespace csm {
namespace {

using Json = nlohmann::json;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::kParse, "bad number '" + s + "' in " + what);
  }
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::kParse, "bad integer '" + s + "' in " + what);
  }
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::kIo, "cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) fail(ErrorCode::kIo, "cannot write " + p.string());
  out.precision(17);
  return out;
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

SurfaceMesh make_icosphere(int subdivisions) {
  if (subdivisions < 0) fail(ErrorCode::kInvalidArgument, "subdivisions must be >= 0");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> pts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : pts) p.normalize();
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                             {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      pts.push_back((pts[a] + pts[b]).normalized());
      int id = static_cast<int>(pts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      int ab = mid(f[0], f[1]);
      int bc = mid(f[1], f[2]);
      int ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  VertexArray v(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return SurfaceMesh(build_topology(std::move(faces), static_cast<int>(pts.size())), std::move(v));
}

SubjectNoise GroundTruthScm::sample_noise(std::uint64_t seed, std::uint64_t id) const {
  Rng rng(derive_seed(seed, id));
  SubjectNoise n;
  n.id = id;
  n.age_gamma = rng.gamma(age_shape, age_scale);
  n.sex = rng.bernoulli(male_fraction) ? 1.0 : 0.0;
  n.eps_b = rng.normal();
  n.eps_v = rng.normal();
  n.w = Eigen::Vector2d(rng.normal(), rng.normal());
  n.jitter_seed = derive_seed(seed ^ 0x6a69747465720000ULL, id);
  return n;
}

CovariateRecord GroundTruthScm::covariates(const SubjectNoise& n) const {
  CovariateRecord r;
  r.a = age_offset + n.age_gamma;
  r.s = n.sex;
  r.b = g_b(r.a, r.s) + b_noise * n.eps_b;
  r.v = g_v(r.a, r.b) + v_noise * n.eps_v;
  return r;
}

TopologyPtr GroundTruthScm::topology() const { return make_icosphere(subdivisions).topology_ptr(); }

namespace {

SurfaceMesh deform(const GroundTruthScm& g, double v, double b, const Eigen::Vector2d& w, const Eigen::VectorXd* jitter) {
  SurfaceMesh sphere = make_icosphere(g.subdivisions);
  const VertexArray& p = sphere.vertices();
  const double scale = std::cbrt(v / g.v0);
  const double zb = (b - g.b0) / g.b_spread;
  VertexArray out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double x = p(i, 0), y = p(i, 1), z = p(i, 2);
    const double y20 = 0.5 * (3.0 * z * z - 1.0);
    const double y21 = 2.0 * x * z;
    const double y22 = x * x - y * y;
    const double radial = scale * (1.0 + g.kappa_b * zb * y20 + g.kappa_w * (w[0] * y21 + w[1] * y22));
    for (int c = 0; c < 3; ++c) out(i, c) = g.radius * g.axes[c] * p(i, c) * radial;
    if (jitter) out.row(i) += jitter->segment<3>(3 * i).transpose();
  }
  return SurfaceMesh(sphere.topology_ptr(), std::move(out));
}

}  // namespace

SurfaceMesh GroundTruthScm::mesh(const CovariateRecord& r, const SubjectNoise& n) const {
  Rng rng(n.jitter_seed);
  const Eigen::Index count = 10 * (Eigen::Index{1} << (2 * subdivisions)) + 2;
  Eigen::VectorXd jit = rng.normal_vector(3 * count) * jitter;
  return deform(*this, r.v, r.b, n.w, &jit);
}

SurfaceMesh GroundTruthScm::template_mesh() const { return deform(*this, v0, b0, Eigen::Vector2d::Zero(), nullptr); }

std::pair<CovariateRecord, SurfaceMesh> GroundTruthScm::counterfactual(const SubjectNoise& n,
                                                                       const Intervention& iv) const {
  if (iv.contains(Node::X)) fail(ErrorCode::kInvalidArgument, "the mesh node cannot be intervened on");
  const CovariateRecord obs = covariates(n);
  CovariateRecord r;
  r.a = iv.value_for(Node::A, obs).value_or(obs.a);
  r.s = iv.value_for(Node::S, obs).value_or(obs.s);
  r.b = iv.value_for(Node::B, obs).value_or(g_b(r.a, r.s) + b_noise * n.eps_b);
  r.v = iv.value_for(Node::V, obs).value_or(g_v(r.a, r.b) + v_noise * n.eps_v);
  return {r, mesh(r, n)};
}

std::pair<CovariateRecord, SurfaceMesh> oracle_counterfactual(const GroundTruthScm& scm, const SubjectNoise& noise,
                                                              const Intervention& iv) {
  return scm.counterfactual(noise, iv);
}

std::vector<const ManifestRow*> CohortManifest::split(const std::string& name) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows)
    if (r.split == name) out.push_back(&r);
  return out;
}

CohortManifest sample_cohort(const GroundTruthScm& scm, const CohortSizes& sizes, std::uint64_t seed,
                             const std::filesystem::path& out_dir) {
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    fail(ErrorCode::kInvalidArgument, "split sizes must be non-negative");
  std::filesystem::create_directories(out_dir / "meshes");
  CohortManifest manifest;
  manifest.directory = out_dir;
  std::vector<SubjectNoise> noise;
  for (int i = 0; i < sizes.total(); ++i) {
    const auto id = static_cast<std::uint64_t>(i);
    SubjectNoise n = scm.sample_noise(seed, id);
    ManifestRow row;
    row.id = id;
    row.record = scm.covariates(n);
    char name[64];
    std::snprintf(name, sizeof(name), "meshes/subject_%06d.ply", i);
    row.mesh_path = name;
    row.split = i < sizes.train ? "train" : i < sizes.train + sizes.val ? "val" : "test";
    write_mesh(scm.mesh(row.record, n), out_dir / row.mesh_path);
    manifest.rows.push_back(std::move(row));
    noise.push_back(n);
  }
  write_mesh(scm.template_mesh(), out_dir / "template.ply");
  write_manifest(manifest, out_dir / "manifest.csv");
  write_noise(noise, out_dir / "noise.csv");
  write_scm(scm, seed, out_dir / "scm.json");
  return manifest;
}

void write_manifest(const CohortManifest& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "id,age,sex,brain_volume,structure_volume,mesh_path,split\n";
  for (const auto& r : m.rows)
    out << r.id << ',' << r.record.a << ',' << r.record.s << ',' << r.record.b << ',' << r.record.v << ','
        << r.mesh_path << ',' << r.split << '\n';
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

CohortManifest read_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  CohortManifest m;
  m.directory = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || trim_cr(line) != "id,age,sex,brain_volume,structure_volume,mesh_path,split")
    fail(ErrorCode::kParse, path.string() + ": unexpected manifest header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 7) fail(ErrorCode::kParse, where + ": expected 7 columns");
    ManifestRow r;
    r.id = to_u64(cells[0], where);
    r.record.a = to_double(cells[1], where);
    r.record.s = to_double(cells[2], where);
    r.record.b = to_double(cells[3], where);
    r.record.v = to_double(cells[4], where);
    r.mesh_path = cells[5];
    r.split = cells[6];
    if (r.split != "train" && r.split != "val" && r.split != "test")
      fail(ErrorCode::kParse, where + ": unknown split '" + r.split + "'");
    m.rows.push_back(std::move(r));
  }
  return m;
}

void write_noise(const std::vector<SubjectNoise>& noise, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "id,age_gamma,sex,eps_b,eps_v,w1,w2,jitter_seed\n";
  for (const auto& n : noise)
    out << n.id << ',' << n.age_gamma << ',' << n.sex << ',' << n.eps_b << ',' << n.eps_v << ',' << n.w[0] << ','
        << n.w[1] << ',' << n.jitter_seed << '\n';
}

std::vector<SubjectNoise> read_noise(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  std::vector<SubjectNoise> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    auto c = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (c.size() != 8) fail(ErrorCode::kParse, where + ": expected 8 columns");
    SubjectNoise n;
    n.id = to_u64(c[0], where);
    n.age_gamma = to_double(c[1], where);
    n.sex = to_double(c[2], where);
    n.eps_b = to_double(c[3], where);
    n.eps_v = to_double(c[4], where);
    n.w = Eigen::Vector2d(to_double(c[5], where), to_double(c[6], where));
    n.jitter_seed = to_u64(c[7], where);
    out.push_back(n);
  }
  return out;
}

void write_scm(const GroundTruthScm& g, std::uint64_t seed, const std::filesystem::path& path) {
  Json j = {{"format", "csm-ground-truth"},
            {"seed", seed},
            {"age_offset", g.age_offset},
            {"age_shape", g.age_shape},
            {"age_scale", g.age_scale},
            {"male_fraction", g.male_fraction},
            {"b0", g.b0},
            {"b_sex", g.b_sex},
            {"b_age", g.b_age},
            {"age_ref", g.age_ref},
            {"b_noise", g.b_noise},
            {"b_spread", g.b_spread},
            {"v0", g.v0},
            {"v_b", g.v_b},
            {"v_age", g.v_age},
            {"v_noise", g.v_noise},
            {"subdivisions", g.subdivisions},
            {"radius", g.radius},
            {"axes", {g.axes[0], g.axes[1], g.axes[2]}},
            {"kappa_b", g.kappa_b},
            {"kappa_w", g.kappa_w},
            {"jitter", g.jitter}};
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

GroundTruthScm read_scm(const std::filesystem::path& path) {
  auto in = open_in(path);
  Json j;
  try {
    in >> j;
    GroundTruthScm g;
    g.age_offset = j.at("age_offset");
    g.age_shape = j.at("age_shape");
    g.age_scale = j.at("age_scale");
    g.male_fraction = j.at("male_fraction");
    g.b0 = j.at("b0");
    g.b_sex = j.at("b_sex");
    g.b_age = j.at("b_age");
    g.age_ref = j.at("age_ref");
    g.b_noise = j.at("b_noise");
    g.b_spread = j.at("b_spread");
    g.v0 = j.at("v0");
    g.v_b = j.at("v_b");
    g.v_age = j.at("v_age");
    g.v_noise = j.at("v_noise");
    g.subdivisions = j.at("subdivisions");
    g.radius = j.at("radius");
    for (int c = 0; c < 3; ++c) g.axes[c] = j.at("axes").at(c);
    g.kappa_b = j.at("kappa_b");
    g.kappa_w = j.at("kappa_w");
    g.jitter = j.at("jitter");
    return g;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

}  // namespace csm
