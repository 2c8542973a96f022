#include "csm/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csm/error.hpp"

namespace csm {
namespace {

using Json = nlohmann::json;

Json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const Json& j) {
  const Eigen::Index r = j.at("rows"), c = j.at("cols");
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != r * c) fail(ErrorCode::kParse, "matrix payload has wrong size");
  Eigen::MatrixXd m(r, c);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json config_json(const MeshCvaeConfig& c) {
  return {{"latent_dim", c.latent_dim},         {"cheb_order", c.cheb_order},
          {"pool_factor", c.pool_factor},       {"levels", c.levels},
          {"encoder_channels", c.encoder_channels}, {"decoder_channels", c.decoder_channels},
          {"output_order", c.output_order},     {"sigma_floor", c.sigma_floor}};
}

MeshCvaeConfig config_from(const Json& j) {
  MeshCvaeConfig c;
  c.latent_dim = j.at("latent_dim");
  c.cheb_order = j.at("cheb_order");
  c.pool_factor = j.at("pool_factor");
  c.levels = j.at("levels");
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.output_order = j.at("output_order");
  c.sigma_floor = j.at("sigma_floor");
  return c;
}

Json graph_json(const CausalGraph& g) {
  Json j = Json::object();
  for (Node n : {Node::B, Node::V}) {
    std::vector<std::string> ps;
    for (Node p : g.parents(n)) ps.emplace_back(node_name(p));
    j[std::string(node_name(n))] = ps;
  }
  return j;
}

CausalGraph graph_from(const Json& j) {
  std::map<Node, std::vector<Node>> parents;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::vector<Node> ps;
    for (const auto& p : it.value()) ps.push_back(parse_node(p.get<std::string>()));
    parents[parse_node(it.key())] = ps;
  }
  return CausalGraph::with_overrides(parents);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, CausalShapeModel& model, const std::optional<TrainState>& state,
                     const std::string& run_config) {
  const MeshCvae& cvae = model.mesh_model();
  const SurfaceMesh& templ = cvae.template_mesh();
  Json j;
  j["format"] = "csm-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = model.seed();
  j["config"] = config_json(cvae.config());
  j["graph"] = graph_json(model.graph());
  std::vector<std::array<int, 3>> faces(templ.topology().faces().begin(), templ.topology().faces().end());
  Eigen::MatrixXd verts = templ.vertices();
  j["template"] = {{"vertices", matrix_json(verts)}, {"faces", faces}, {"hash", hex(templ.topology().hash())}};

  nn::ParamList params;
  model.collect(params);
  Json p = Json::object();
  for (auto* param : params) {
    if (p.contains(param->name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter name " + param->name);
    p[param->name] = matrix_json(param->value);
  }
  j["params"] = p;
  j["checksum"] = hex(fnv1a(p.dump()));
  Json norms = Json::object();
  for (Node n : {Node::A, Node::B, Node::V}) {
    const auto& a = model.mechanism(n).normalisation();
    norms[std::string(node_name(n))] = {{"location", a.location}, {"scale", a.scale}};
  }
  j["normalisation"] = norms;
  j["sex_theta"] = model.sex().theta();
  j["shape"] = {{"mean", matrix_json(cvae.shape_mean())}, {"scale", cvae.shape_scale()}};
  if (state) {
    Json m = Json::array(), v = Json::array();
    for (const auto& x : state->adam.m) m.push_back(matrix_json(x));
    for (const auto& x : state->adam.v) v.push_back(matrix_json(x));
    j["train_state"] = {{"epoch", state->epoch}, {"adam", {{"t", state->adam.t}, {"m", m}, {"v", v}}}};
  }
  try {
    j["run_config"] = Json::parse(run_config);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("run config is not valid JSON: ") + e.what());
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp);
    out << j.dump() << '\n';
    if (!out) fail(ErrorCode::kIo, "failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const MeshTopology* expected) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "csm-checkpoint") fail(ErrorCode::kParse, path.string() + " is not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      fail(ErrorCode::kParse, "unsupported checkpoint version " + j.at("version").dump());
    const auto& t = j.at("template");
    auto faces = t.at("faces").get<std::vector<std::array<int, 3>>>();
    Eigen::MatrixXd verts = matrix_from(t.at("vertices"));
    auto topo = build_topology(std::vector<Face>(faces.begin(), faces.end()), static_cast<int>(verts.rows()));
    if (hex(topo->hash()) != t.at("hash").get<std::string>())
      fail(ErrorCode::kChecksum, "template hash does not match stored faces");
    if (expected && expected->hash() != topo->hash())
      fail(ErrorCode::kTopologyMismatch, "checkpoint template " + hex(topo->hash()) + " does not match mesh topology " +
                                             hex(expected->hash()));
    SurfaceMesh templ(topo, VertexArray(verts));

    const auto& p = j.at("params");
    if (hex(fnv1a(p.dump())) != j.at("checksum").get<std::string>())
      fail(ErrorCode::kChecksum, "parameter checksum mismatch in " + path.string());

    LoadedCheckpoint out;
    out.model = std::make_unique<CausalShapeModel>(templ, config_from(j.at("config")), graph_from(j.at("graph")),
                                                   j.at("seed").get<std::uint64_t>());
    nn::ParamList params;
    out.model->collect(params);
    if (params.size() != p.size()) fail(ErrorCode::kParse, "checkpoint parameter count does not match the model");
    for (auto* param : params) {
      if (!p.contains(param->name)) fail(ErrorCode::kParse, "checkpoint is missing parameter " + param->name);
      Eigen::MatrixXd v = matrix_from(p.at(param->name));
      if (v.rows() != param->value.rows() || v.cols() != param->value.cols())
        fail(ErrorCode::kParse, "parameter " + param->name + " has the wrong shape");
      param->value = v;
    }
    for (Node n : {Node::A, Node::B, Node::V}) {
      const auto& a = j.at("normalisation").at(std::string(node_name(n)));
      out.model->mechanism(n).set_normalisation({a.at("location").get<double>(), a.at("scale").get<double>()});
    }
    out.model->sex().set_theta(j.at("sex_theta").get<double>());
    out.model->mesh_model().set_shape_normalisation(matrix_from(j.at("shape").at("mean")).col(0),
                                                    j.at("shape").at("scale").get<double>());
    if (j.contains("train_state")) {
      const auto& s = j.at("train_state");
      TrainState ts;
      ts.epoch = s.at("epoch");
      ts.adam.t = s.at("adam").at("t");
      for (const auto& m : s.at("adam").at("m")) ts.adam.m.push_back(matrix_from(m));
      for (const auto& v : s.at("adam").at("v")) ts.adam.v.push_back(matrix_from(v));
      out.train_state = std::move(ts);
    }
    out.run_config = j.contains("run_config") ? j.at("run_config").dump() : "{}";
    return out;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

}  // namespace csm
