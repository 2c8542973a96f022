#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "csm/nn.hpp"
#include "csm/scm.hpp"

namespace csm {

inline constexpr int kCheckpointVersion = 1;

/// Training progress stored alongside the model.
struct TrainState {
  int epoch = 0;
  nn::Adam::State adam;
};

struct LoadedCheckpoint {
  std::unique_ptr<CausalShapeModel> model;
  std::optional<TrainState> train_state;
  /// Opaque run configuration (JSON text) recorded by the writer.
  std::string run_config;
};

/// Writes a single versioned JSON archive: model config, template mesh and
/// topology hash, every named parameter, normalisation statistics, the sex
/// parameter, shape normalisation and optional optimiser state. The write
/// goes through a temporary file and a rename.
void save_checkpoint(const std::filesystem::path& path, CausalShapeModel& model,
                     const std::optional<TrainState>& state = std::nullopt, const std::string& run_config = "{}");

/// Loads a checkpoint. When `expected` is given, refuses (kTopologyMismatch)
/// if its topology hash differs from the stored template's.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const MeshTopology* expected = nullptr);

}  // namespace csm
