#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csm/cvae.hpp"
#include "csm/scm.hpp"
#include "csm/train.hpp"

namespace csm::cli {

using Json = nlohmann::json;

struct GenerateConfig {
  std::filesystem::path out_dir;
  CohortSizes sizes;
  int subdivisions = 2;
};

struct EvalConfig {
  std::string suite = "all";
  std::vector<int> pca_modes;
  int specificity_samples = 100;
  int projection_samples = 5000;
  int trait_subjects = -1;
  std::vector<int> interpolation_dims;
  std::vector<double> interpolation_offsets;
  int z_samples = 0;
};

struct RunConfig {
  Json doc;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path manifest;
  std::filesystem::path template_path;
  AlignMode align = AlignMode::kRigid;
  GenerateConfig generate;
  MeshCvaeConfig model;
  CausalGraph graph;
  TrainConfig train;
  int checkpoint_every = 10;
  EvalConfig eval;
};

/// Default key tree; every accepted key appears here.
Json default_config();

/// Rejects unknown keys and type mismatches (kConfig), naming the key path.
void validate_config(const Json& doc);

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise. Unknown paths are rejected.
void apply_override(Json& doc, const std::string& assignment);

/// Defaults, then the optional file, then the overrides; validated.
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

RunConfig config_from_json(const Json& doc);

}  // namespace csm::cli
