#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "csm/mesh.hpp"

namespace csm {

/// Raw mesh as read from disk, before topology sharing.
struct MeshData {
  VertexArray vertices;
  std::vector<Face> faces;
};

/// Reads ASCII PLY or Wavefront OBJ, chosen by extension.
MeshData read_mesh_data(const std::filesystem::path& path);

/// Reads a mesh and builds its own topology.
SurfaceMesh read_mesh(const std::filesystem::path& path);

/// Reads a mesh that must share `topology` (same faces).
SurfaceMesh read_mesh(const std::filesystem::path& path, const TopologyPtr& topology);

/// Writes ASCII PLY (canonical) or OBJ by extension. An optional per-vertex
/// scalar is written to PLY as the float property `signed_disp_mm`.
void write_mesh(const SurfaceMesh& mesh, const std::filesystem::path& path,
                const std::optional<Eigen::VectorXd>& signed_displacement = std::nullopt);

}  // namespace csm
