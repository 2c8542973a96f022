#include "config.hpp"

#include <fstream>

#include "csm/error.hpp"

namespace csm::cli {
namespace {

std::string type_name(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const Json& schema, const Json& value) {
  if (schema.is_boolean()) return value.is_boolean();
  if (schema.is_number_integer()) return value.is_number_integer();
  if (schema.is_number()) return value.is_number();
  if (schema.is_string()) return value.is_string();
  if (schema.is_object()) return value.is_object();
  if (schema.is_array()) {
    if (!value.is_array()) return false;
    if (schema.empty()) return true;
    for (const auto& v : value)
      if (!compatible(schema.front(), v)) return false;
    return true;
  }
  return false;
}

void check(const Json& schema, const Json& value, const std::string& path) {
  if (!compatible(schema, value))
    fail(ErrorCode::kConfig, "config key '" + path + "' must be " +
                                 (schema.is_array() && !schema.empty() ? "an array of " + type_name(schema.front()) + "s"
                                                                       : "of type " + type_name(schema)) +
                                 ", got " + type_name(value));
  if (!schema.is_object()) return;
  for (auto it = value.begin(); it != value.end(); ++it) {
    const std::string sub = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) fail(ErrorCode::kConfig, "unknown config key '" + sub + "'");
    check(schema.at(it.key()), it.value(), sub);
  }
}

void merge(Json& base, const Json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

}  // namespace

Json default_config() {
  return Json::parse(R"({
    "seed": 0,
    "output_dir": "runs/default",
    "data": {
      "manifest": "data/cohort/manifest.csv",
      "template": "",
      "align": "rigid",
      "generate": {"out_dir": "data/cohort", "train": 2000, "val": 250, "test": 500, "subdivisions": 2}
    },
    "model": {
      "latent_dim": 32,
      "cheb_order": 10,
      "pool_factor": 2.0,
      "levels": 3,
      "encoder_channels": [32, 64, 128],
      "decoder_channels": [128, 64, 32],
      "output_order": 10,
      "sigma_floor": 0.0001,
      "graph": {"b": ["a", "s"], "v": ["a", "b"]}
    },
    "train": {
      "epochs": 1000,
      "batch_size": 256,
      "lr_covariate": 0.001,
      "lr_mesh": 0.0001,
      "checkpoint_every": 10
    },
    "eval": {
      "suite": "all",
      "pca_modes": [8, 16, 32, 64],
      "specificity_samples": 100,
      "projection_samples": 5000,
      "trait_subjects": -1,
      "interpolation_dims": [0, 1, 2, 3, 4, 5, 6],
      "interpolation_offsets": [-0.8, 0.8],
      "z_samples": 0
    }
  })");
}

void validate_config(const Json& doc) { check(default_config(), doc, ""); }

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::kConfig, "override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  const Json schema = default_config();
  const Json* s = &schema;
  Json* target = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!s->is_object() || !s->contains(part)) fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
    s = &s->at(part);
    if (dot == std::string::npos) {
      if (s->is_number_float() && value.is_number()) value = value.get<double>();
      (*target)[part] = value;
      break;
    }
    target = &(*target)[part];
    start = dot + 1;
  }
}

RunConfig config_from_json(const Json& doc) {
  validate_config(doc);
  Json j = default_config();
  merge(j, doc);
  RunConfig c;
  c.doc = j;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  const auto& d = j.at("data");
  c.manifest = d.at("manifest").get<std::string>();
  c.template_path = d.at("template").get<std::string>();
  c.align = parse_align_mode(d.at("align"));
  const auto& g = d.at("generate");
  c.generate.out_dir = g.at("out_dir").get<std::string>();
  c.generate.sizes = {g.at("train"), g.at("val"), g.at("test")};
  c.generate.subdivisions = g.at("subdivisions");
  if (c.generate.sizes.train < 0 || c.generate.sizes.val < 0 || c.generate.sizes.test < 0)
    fail(ErrorCode::kConfig, "data.generate split sizes must be non-negative");
  if (c.generate.subdivisions < 0 || c.generate.subdivisions > 6)
    fail(ErrorCode::kConfig, "data.generate.subdivisions must be in [0, 6]");
  const auto& m = j.at("model");
  c.model.latent_dim = m.at("latent_dim");
  c.model.cheb_order = m.at("cheb_order");
  c.model.pool_factor = m.at("pool_factor");
  c.model.levels = m.at("levels");
  c.model.encoder_channels = m.at("encoder_channels").get<std::vector<int>>();
  c.model.decoder_channels = m.at("decoder_channels").get<std::vector<int>>();
  c.model.output_order = m.at("output_order");
  c.model.sigma_floor = m.at("sigma_floor");
  c.model.validate();
  std::map<Node, std::vector<Node>> parents;
  for (auto it = m.at("graph").begin(); it != m.at("graph").end(); ++it) {
    std::vector<Node> ps;
    for (const auto& p : it.value()) ps.push_back(parse_node(p.get<std::string>()));
    parents[parse_node(it.key())] = ps;
  }
  c.graph = CausalGraph::with_overrides(parents);
  const auto& t = j.at("train");
  c.train.epochs = t.at("epochs");
  c.train.batch_size = t.at("batch_size");
  c.train.lr_covariate = t.at("lr_covariate");
  c.train.lr_mesh = t.at("lr_mesh");
  c.train.seed = c.seed;
  c.checkpoint_every = t.at("checkpoint_every");
  if (c.train.epochs < 0 || c.train.batch_size < 1 || c.checkpoint_every < 1)
    fail(ErrorCode::kConfig, "train.epochs >= 0, train.batch_size >= 1 and train.checkpoint_every >= 1 required");
  if (!(c.train.lr_covariate > 0) || !(c.train.lr_mesh > 0)) fail(ErrorCode::kConfig, "learning rates must be positive");
  const auto& e = j.at("eval");
  c.eval.suite = e.at("suite");
  c.eval.pca_modes = e.at("pca_modes").get<std::vector<int>>();
  c.eval.specificity_samples = e.at("specificity_samples");
  c.eval.projection_samples = e.at("projection_samples");
  c.eval.trait_subjects = e.at("trait_subjects");
  c.eval.interpolation_dims = e.at("interpolation_dims").get<std::vector<int>>();
  c.eval.interpolation_offsets = e.at("interpolation_offsets").get<std::vector<double>>();
  c.eval.z_samples = e.at("z_samples");
  if (c.eval.specificity_samples < 1 || c.eval.projection_samples < 0 || c.eval.z_samples < 0)
    fail(ErrorCode::kConfig, "eval sample counts must be positive");
  return c;
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::kIo, "cannot open config " + file.string());
    try {
      in >> doc;
    } catch (const Json::exception& e) {
      fail(ErrorCode::kParse, file.string() + ": " + e.what());
    }
    if (!doc.is_object()) fail(ErrorCode::kConfig, file.string() + ": top level must be an object");
    validate_config(doc);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

}  // namespace csm::cli
