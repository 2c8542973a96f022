#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"
#include "csm/checkpoint.hpp"
#include "csm/cohort.hpp"
#include "csm/train.hpp"

namespace csm::cli {

std::filesystem::path default_checkpoint(const RunConfig& cfg);

/// Loads one manifest split registered onto `templ`. When CSM_CACHE_DIR is
/// set the registered matrix is cached there, keyed by manifest contents,
/// split, alignment mode and template.
Dataset load_dataset(const RunConfig& cfg, const CohortManifest& manifest, const std::string& split,
                     const SurfaceMesh& templ);

std::filesystem::path cmd_generate_data(const RunConfig& cfg, std::ostream& out);
std::filesystem::path cmd_train(const RunConfig& cfg, bool resume, std::ostream& out);
void cmd_reconstruct(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& split,
                     const std::filesystem::path& out_dir, std::ostream& out);
void cmd_intervene(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& do_text, int n,
                   const std::filesystem::path& out_dir, std::ostream& out);
void cmd_counterfact(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::uint64_t subject,
                     const std::vector<std::string>& do_list, const std::filesystem::path& out_dir, std::ostream& out);
std::filesystem::path cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                   const std::string& suite, const std::filesystem::path& out_dir, std::ostream& out);
void cmd_export_mesh(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                     const std::string& what, const std::filesystem::path& output, std::ostream& out);

/// Full command-line entry point. Returns the process exit code: 0 ok,
/// 1 user error, 2 internal error. Errors go to `err` as a single line
/// `error[E_TAG]: message`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace csm::cli
