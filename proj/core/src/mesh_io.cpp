#include "csm/mesh_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "csm/error.hpp"

namespace csm {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

[[noreturn]] void parse_error(const std::filesystem::path& path, const std::string& what) {
  fail(ErrorCode::kParse, path.string() + ": " + what);
}

void validate_faces(const std::filesystem::path& path, const MeshData& data) {
  const auto n = static_cast<int>(data.vertices.rows());
  for (std::size_t f = 0; f < data.faces.size(); ++f) {
    for (int idx : data.faces[f]) {
      if (idx < 0 || idx >= n) {
        parse_error(path, "face " + std::to_string(f) + " index " + std::to_string(idx) +
                              " out of range for " + std::to_string(n) + " vertices");
      }
    }
  }
  if (data.vertices.rows() == 0) parse_error(path, "no vertices");
  if (data.faces.empty()) parse_error(path, "no faces");
}

MeshData read_ply(const std::filesystem::path& path, std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) parse_error(path, "missing 'ply' magic");

  long vertex_count = -1;
  long face_count = -1;
  std::vector<std::string> vertex_props;
  std::string current;
  bool ascii = false;
  bool header_done = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "comment" || kw == "obj_info" || kw.empty()) {
      continue;
    } else if (kw == "element") {
      long count = -1;
      ls >> current >> count;
      if (count < 0) parse_error(path, "bad element count");
      if (current == "vertex") vertex_count = count;
      if (current == "face") face_count = count;
    } else if (kw == "property") {
      if (current == "vertex") {
        std::string type;
        std::string name;
        ls >> type >> name;
        vertex_props.push_back(name);
      }
    } else if (kw == "end_header") {
      header_done = true;
      break;
    } else {
      parse_error(path, "unexpected header line '" + line + "'");
    }
  }
  if (!header_done) parse_error(path, "unterminated header");
  if (!ascii) parse_error(path, "only ASCII PLY is supported");
  if (vertex_count < 0 || face_count < 0) parse_error(path, "missing vertex or face element");

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    if (vertex_props[i] == "x") ix = static_cast<int>(i);
    if (vertex_props[i] == "y") iy = static_cast<int>(i);
    if (vertex_props[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) parse_error(path, "vertex element lacks x/y/z");

  MeshData data;
  data.vertices.resize(vertex_count, 3);
  std::vector<double> values(vertex_props.size());
  for (long v = 0; v < vertex_count; ++v) {
    if (!std::getline(in, line)) parse_error(path, "truncated vertex list");
    std::istringstream ls(line);
    for (double& x : values) {
      if (!(ls >> x)) parse_error(path, "malformed vertex line " + std::to_string(v));
    }
    data.vertices(v, 0) = values[ix];
    data.vertices(v, 1) = values[iy];
    data.vertices(v, 2) = values[iz];
  }
  for (long f = 0; f < face_count; ++f) {
    if (!std::getline(in, line)) parse_error(path, "truncated face list");
    std::istringstream ls(line);
    int k = 0;
    if (!(ls >> k) || k < 3) parse_error(path, "malformed face line " + std::to_string(f));
    std::vector<int> idx(k);
    for (int& i : idx) {
      if (!(ls >> i)) parse_error(path, "malformed face line " + std::to_string(f));
    }
    for (int t = 1; t + 1 < k; ++t) data.faces.push_back({idx[0], idx[t], idx[t + 1]});
  }
  return data;
}

MeshData read_obj(const std::filesystem::path& path, std::istream& in) {
  std::vector<Eigen::RowVector3d> verts;
  std::vector<std::vector<long>> polys;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "v") {
      Eigen::RowVector3d p;
      if (!(ls >> p[0] >> p[1] >> p[2])) parse_error(path, "malformed vertex at line " + std::to_string(line_no));
      verts.push_back(p);
    } else if (kw == "f") {
      std::vector<long> poly;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        try {
          poly.push_back(std::stol(head));
        } catch (const std::exception&) {
          parse_error(path, "malformed face at line " + std::to_string(line_no));
        }
      }
      if (poly.size() < 3) parse_error(path, "face with fewer than 3 vertices at line " + std::to_string(line_no));
      for (long& i : poly) {
        if (i < 0) i = static_cast<long>(verts.size()) + i + 1;
      }
      polys.push_back(std::move(poly));
    }
  }
  MeshData data;
  data.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) data.vertices.row(i) = verts[i];
  for (const auto& poly : polys) {
    for (std::size_t t = 1; t + 1 < poly.size(); ++t) {
      data.faces.push_back({static_cast<int>(poly[0] - 1), static_cast<int>(poly[t] - 1),
                            static_cast<int>(poly[t + 1] - 1)});
    }
  }
  return data;
}

}  // namespace

MeshData read_mesh_data(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  if (in.peek() == std::ifstream::traits_type::eof()) parse_error(path, "empty file");
  const std::string ext = lower_extension(path);
  MeshData data;
  if (ext == ".ply") {
    data = read_ply(path, in);
  } else if (ext == ".obj") {
    data = read_obj(path, in);
  } else {
    fail(ErrorCode::kParse, path.string() + ": unsupported mesh extension '" + ext + "'");
  }
  validate_faces(path, data);
  if (!data.vertices.allFinite()) parse_error(path, "non-finite vertex coordinate");
  return data;
}

SurfaceMesh read_mesh(const std::filesystem::path& path) {
  MeshData data = read_mesh_data(path);
  const int n = static_cast<int>(data.vertices.rows());
  try {
    return SurfaceMesh(build_topology(std::move(data.faces), n), std::move(data.vertices));
  } catch (const Error& e) {
    parse_error(path, e.what());
  }
}

SurfaceMesh read_mesh(const std::filesystem::path& path, const TopologyPtr& topology) {
  MeshData data = read_mesh_data(path);
  if (data.vertices.rows() != topology->vertex_count() || data.faces != topology->faces()) {
    fail(ErrorCode::kTopologyMismatch, path.string() + ": mesh does not share the template topology");
  }
  return SurfaceMesh(topology, std::move(data.vertices));
}

void write_mesh(const SurfaceMesh& mesh, const std::filesystem::path& path,
                const std::optional<Eigen::VectorXd>& signed_displacement) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << std::setprecision(17);
  const VertexArray& v = mesh.vertices();
  const auto& faces = mesh.topology().faces();
  const std::string ext = lower_extension(path);

  if (ext == ".obj") {
    for (Eigen::Index i = 0; i < v.rows(); ++i) out << "v " << v(i, 0) << ' ' << v(i, 1) << ' ' << v(i, 2) << '\n';
    for (const Face& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  } else if (ext == ".ply") {
    if (signed_displacement && signed_displacement->size() != v.rows()) {
      fail(ErrorCode::kDimensionMismatch, "displacement field size != vertex count");
    }
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << v.rows() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    if (signed_displacement) out << "property float signed_disp_mm\n";
    out << "element face " << faces.size() << '\n';
    out << "property list uchar int vertex_indices\nend_header\n";
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      out << v(i, 0) << ' ' << v(i, 1) << ' ' << v(i, 2);
      if (signed_displacement) out << ' ' << (*signed_displacement)[i];
      out << '\n';
    }
    for (const Face& f : faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  } else {
    fail(ErrorCode::kInvalidArgument, "unsupported mesh extension '" + ext + "'");
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace csm
