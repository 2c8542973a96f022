#pragma once

#include <filesystem>
#include <string>

#include "csm/cohort.hpp"
#include "csm/cvae.hpp"
#include "csm/scm.hpp"
#include "csm/train.hpp"

namespace csm::testing {

/// Small network on the 42-vertex icosphere.
inline MeshCvaeConfig tiny_config() {
  MeshCvaeConfig c;
  c.latent_dim = 4;
  c.cheb_order = 3;
  c.levels = 2;
  c.encoder_channels = {4, 6};
  c.decoder_channels = {6, 4};
  c.output_order = 2;
  return c;
}

/// Generator on the 42-vertex icosphere.
inline GroundTruthScm tiny_scm() {
  GroundTruthScm s;
  s.subdivisions = 1;
  return s;
}

/// In-memory dataset drawn straight from the generator.
inline Dataset synthetic_dataset(const GroundTruthScm& scm, int n, std::uint64_t seed, std::uint64_t first_id = 0) {
  Dataset d;
  d.meshes.resize(n, 3 * scm.template_mesh().vertex_count());
  for (int i = 0; i < n; ++i) {
    SubjectNoise e = scm.sample_noise(seed, first_id + i);
    CovariateRecord r = scm.covariates(e);
    d.ids.push_back(first_id + i);
    d.records.push_back(r);
    d.meshes.row(i) = scm.mesh(r, e).flattened().transpose();
  }
  return d;
}

/// Untrained tiny model with statistics fitted on `train`.
inline CausalShapeModel tiny_model(const GroundTruthScm& scm, const Dataset& train, std::uint64_t seed = 3) {
  CausalShapeModel m(scm.template_mesh(), tiny_config(), CausalGraph(), seed);
  fit_statistics(m, train);
  return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("csm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace csm::testing
