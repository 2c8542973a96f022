#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "csm/align.hpp"
#include "csm/error.hpp"
#include "csm/eval.hpp"
#include "csm/mesh_io.hpp"
#include "csm/report.hpp"

namespace csm::cli {
namespace {

namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path template_for(const RunConfig& cfg) {
  return cfg.template_path.empty() ? cfg.manifest.parent_path() / "template.ply" : cfg.template_path;
}

LoadedCheckpoint open_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorCode::kIo, "checkpoint not found: " + p.string());
  return load_checkpoint(p);
}

const ManifestRow& find_subject(const CohortManifest& m, std::uint64_t id) {
  for (const auto& r : m.rows)
    if (r.id == id) return r;
  fail(ErrorCode::kInvalidArgument, "subject " + std::to_string(id) + " is not in the manifest");
}

Eigen::VectorXd normal_displacement(const SurfaceMesh& from, const SurfaceMesh& to) {
  VertexArray n = vertex_normals(from);
  return (to.vertices() - from.vertices()).cwiseProduct(n).rowwise().sum();
}

bool binary_read(std::istream& in, void* p, std::size_t n) { return static_cast<bool>(in.read(static_cast<char*>(p), n)); }

}  // namespace

fs::path default_checkpoint(const RunConfig& cfg) { return cfg.output_dir / "checkpoint.json"; }

Dataset load_dataset(const RunConfig& cfg, const CohortManifest& manifest, const std::string& split,
                     const SurfaceMesh& templ) {
  const char* cache = std::getenv("CSM_CACHE_DIR");
  if (!cache || !*cache) return load_split(manifest, split, templ, cfg.align);
  std::ostringstream key;
  key << read_file(manifest.directory / "manifest.csv") << '|' << fs::absolute(manifest.directory).string() << '|'
      << split << '|' << align_mode_name(cfg.align) << '|' << templ.topology().hash() << '|';
  for (Eigen::Index i = 0; i < templ.vertices().size(); ++i) key << templ.vertices().data()[i] << ',';
  char name[64];
  std::snprintf(name, sizeof(name), "dataset-%016llx.bin", static_cast<unsigned long long>(fnv1a(key.str())));
  const fs::path path = fs::path(cache) / name;
  if (std::ifstream in{path, std::ios::binary}) {
    std::int64_t n = 0, p = 0;
    Dataset d;
    if (binary_read(in, &n, sizeof n) && binary_read(in, &p, sizeof p) && n >= 0 && p == 3 * templ.vertex_count()) {
      d.ids.resize(n);
      d.records.resize(n);
      d.meshes.resize(n, p);
      bool ok = binary_read(in, d.ids.data(), n * sizeof(std::uint64_t)) &&
                binary_read(in, d.records.data(), n * sizeof(CovariateRecord)) &&
                binary_read(in, d.meshes.data(), n * p * sizeof(double));
      if (ok) return d;
    }
  }
  Dataset d = load_split(manifest, split, templ, cfg.align);
  fs::create_directories(cache);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    const std::int64_t n = d.size(), p = d.meshes.cols();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&p), sizeof p);
    out.write(reinterpret_cast<const char*>(d.ids.data()), n * sizeof(std::uint64_t));
    out.write(reinterpret_cast<const char*>(d.records.data()), n * sizeof(CovariateRecord));
    out.write(reinterpret_cast<const char*>(d.meshes.data()), n * p * sizeof(double));
    if (!out) fail(ErrorCode::kIo, "cannot write cache file " + tmp.string());
  }
  fs::rename(tmp, path);
  return d;
}

fs::path cmd_generate_data(const RunConfig& cfg, std::ostream& out) {
  GroundTruthScm scm;
  scm.subdivisions = cfg.generate.subdivisions;
  auto manifest = sample_cohort(scm, cfg.generate.sizes, cfg.seed, cfg.generate.out_dir);
  const fs::path path = cfg.generate.out_dir / "manifest.csv";
  out << "wrote " << manifest.rows.size() << " subjects to " << path.string() << '\n';
  return path;
}

fs::path cmd_train(const RunConfig& cfg, bool resume, std::ostream& out) {
  const auto manifest = read_manifest(cfg.manifest);
  const SurfaceMesh templ = read_mesh(template_for(cfg));
  const Dataset train = load_dataset(cfg, manifest, "train", templ);
  const fs::path ckpt = default_checkpoint(cfg);
  const fs::path log_path = cfg.output_dir / "train_log.csv";
  fs::create_directories(cfg.output_dir);

  std::unique_ptr<CausalShapeModel> model;
  std::optional<TrainState> state;
  if (resume && fs::exists(ckpt)) {
    auto loaded = load_checkpoint(ckpt, &templ.topology());
    model = std::move(loaded.model);
    state = std::move(loaded.train_state);
  } else {
    model = std::make_unique<CausalShapeModel>(templ, cfg.model, cfg.graph, cfg.seed);
    fit_statistics(*model, train);
  }
  Trainer trainer(*model, cfg.train);
  if (state) {
    trainer.optimizer().restore(state->adam);
    trainer.set_epoch(state->epoch);
  }
  const bool append = resume && state && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) fail(ErrorCode::kIo, "cannot write " + log_path.string());
  log.precision(17);
  if (!append) log << "epoch,elbo,covariate_evidence,log_likelihood,kl,recon_ved,seconds\n";

  const std::string run_config = cfg.doc.dump();
  auto save = [&] { save_checkpoint(ckpt, *model, TrainState{trainer.epoch(), trainer.optimizer().state()}, run_config); };
  try {
    trainer.fit(train, [&](const EpochLog& l) {
      log << l.epoch << ',' << l.elbo << ',' << l.covariate_evidence << ',' << l.log_likelihood << ',' << l.kl << ','
          << l.recon_ved << ',' << l.seconds << '\n'
          << std::flush;
      out << "epoch " << l.epoch << " elbo " << std::setprecision(6) << l.elbo << " kl " << l.kl << " ved "
          << l.recon_ved << '\n'
          << std::flush;
      if (l.epoch % cfg.checkpoint_every == 0) save();
    });
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDivergence) save();
    throw;
  }
  save();
  out << "checkpoint " << ckpt.string() << '\n';
  return ckpt;
}

void cmd_reconstruct(const RunConfig& cfg, const fs::path& checkpoint, const std::string& split,
                     const fs::path& out_dir, std::ostream& out) {
  auto loaded = open_checkpoint(checkpoint);
  const auto& model = *loaded.model;
  const auto manifest = read_manifest(cfg.manifest);
  const SurfaceMesh& templ = model.mesh_model().template_mesh();
  const Dataset data = load_dataset(cfg, manifest, split, templ);
  const Dataset train = load_dataset(cfg, manifest, "train", templ);
  const auto& cvae = model.mesh_model();
  for (int i = 0; i < data.size(); ++i) {
    SurfaceMesh x = data.mesh(i, cvae.topology());
    ExogenousState e = model.abduct(data.records[i], x, {cfg.eval.z_samples, cfg.seed});
    Intermediates h = model.intermediates(data.records[i]);
    LikelihoodParams p = cvae.decode(e.z, h.v, h.b);
    Rng rng(derive_seed(cfg.seed, data.ids[i]));
    SurfaceMesh sampled = cvae.reparam_forward(rng.normal_vector(3 * cvae.vertex_count()), p);
    const std::string stem = "subject_" + std::to_string(data.ids[i]);
    write_mesh(cvae.reparam_forward(e.u, p), out_dir / (stem + "_inferred.ply"));
    write_mesh(sampled, out_dir / (stem + "_sampled.ply"), normal_displacement(x, sampled));
  }
  EvalReport r = reconstruction_table(model, data, fit_pca(train.meshes), cfg.eval.pca_modes, cfg.seed);
  write_report(r, out_dir);
  out << "reconstructed " << data.size() << " subjects into " << out_dir.string() << '\n';
}

void cmd_intervene(const RunConfig& cfg, const fs::path& checkpoint, const std::string& do_text, int n,
                   const fs::path& out_dir, std::ostream& out) {
  if (n < 0) fail(ErrorCode::kInvalidArgument, "--n must be non-negative");
  auto loaded = open_checkpoint(checkpoint);
  const auto& model = *loaded.model;
  Intervention iv = Intervention::parse(do_text);
  auto samples = model.intervene_population(iv, Eigen::VectorXd::Zero(model.mesh_model().latent_dim()), n, cfg.seed);
  Table t{"samples", {"index", "a", "s", "b", "v"}, {}};
  for (int k = 0; k < n; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d.ply", k);
    write_mesh(samples[k].mesh, out_dir / name);
    const auto& r = samples[k].record;
    t.add_row({static_cast<double>(k), r.a, r.s, r.b, r.v});
  }
  write_text(out_dir / "samples.csv", table_csv(t));
  out << "wrote " << n << " samples under do(" << iv.to_string() << ") to " << out_dir.string() << '\n';
}

void cmd_counterfact(const RunConfig& cfg, const fs::path& checkpoint, std::uint64_t subject,
                     const std::vector<std::string>& do_list, const fs::path& out_dir, std::ostream& out) {
  std::vector<Intervention> steps;
  for (const auto& d : do_list) steps.push_back(Intervention::parse(d));
  if (steps.empty()) steps.emplace_back();
  auto loaded = open_checkpoint(checkpoint);
  const auto& model = *loaded.model;
  const auto manifest = read_manifest(cfg.manifest);
  const ManifestRow& row = find_subject(manifest, subject);
  const SurfaceMesh& templ = model.mesh_model().template_mesh();
  const SurfaceMesh native = read_mesh(manifest.resolve(row), templ.topology_ptr());
  SimilarityTransform to_template;
  if (cfg.align != AlignMode::kNone)
    to_template = estimate_similarity(native.vertices(), templ.vertices(), cfg.align == AlignMode::kSimilarity);
  const SurfaceMesh x(templ.topology_ptr(), to_template.apply(native.vertices()));
  auto to_native = [&](const SurfaceMesh& m) {
    VertexArray v = ((m.vertices().rowwise() - to_template.translation.transpose()) * to_template.rotation) /
                    to_template.scale;
    return SurfaceMesh(m.topology_ptr(), v);
  };
  ExogenousState e = model.abduct(row.record, x, {cfg.eval.z_samples, cfg.seed});
  Table t{"trajectory", {"step", "a", "s", "b", "v", "ved_to_observed"}, {}};
  for (std::size_t k = 0; k < steps.size(); ++k) {
    CounterfactualResult cf = model.counterfactual_from(row.record, e, steps[k]);
    char name[64];
    std::snprintf(name, sizeof(name), "subject_%llu_step%zu.ply", static_cast<unsigned long long>(subject), k + 1);
    const SurfaceMesh mesh = to_native(cf.mesh);
    const double d = ved(mesh, native);
    write_mesh(mesh, out_dir / name, normal_displacement(native, mesh));
    t.add_row({static_cast<double>(k + 1), cf.record.a, cf.record.s, cf.record.b, cf.record.v, d});
    out << "step " << k + 1 << " do(" << steps[k].to_string() << "): b=" << cf.record.b << " v=" << cf.record.v
        << " ved=" << d << '\n';
  }
  write_text(out_dir / "trajectory.csv", table_csv(t));
}

fs::path cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint, const std::string& suite,
                      const fs::path& out_dir, std::ostream& out) {
  static const std::vector<std::string> kSuites = {"all",         "reconstruction", "compactness", "specificity",
                                                   "trait",       "trajectories",   "interpolation", "projection"};
  if (std::find(kSuites.begin(), kSuites.end(), suite) == kSuites.end())
    fail(ErrorCode::kInvalidArgument, "unknown suite '" + suite + "'");
  auto loaded = open_checkpoint(checkpoint);
  const auto& model = *loaded.model;
  const auto manifest = read_manifest(cfg.manifest);
  const SurfaceMesh& templ = model.mesh_model().template_mesh();
  const auto& topo = templ.topology_ptr();
  const Dataset test = load_dataset(cfg, manifest, "test", templ);
  if (test.size() == 0) fail(ErrorCode::kInvalidArgument, "manifest has no test subjects");
  auto want = [&](const char* s) { return suite == "all" || suite == s; };
  const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(model.mesh_model().latent_dim());
  EvalReport report;
  fs::create_directories(out_dir);

  if (want("reconstruction") || want("compactness")) {
    const Dataset train = load_dataset(cfg, manifest, "train", templ);
    if (want("reconstruction")) report.merge(reconstruction_table(model, test, fit_pca(train.meshes), cfg.eval.pca_modes, cfg.seed));
    if (want("compactness")) {
      const auto& cvae = model.mesh_model();
      Eigen::MatrixXd recon(test.size(), test.meshes.cols()), cf(test.size(), test.meshes.cols());
      for (int i = 0; i < test.size(); ++i) {
        ExogenousState e = model.abduct(test.records[i], test.mesh(i, topo));
        Intermediates h = model.intermediates(test.records[i]);
        Rng rng(derive_seed(cfg.seed, test.ids[i]));
        recon.row(i) = cvae.reparam_forward(rng.normal_vector(3 * cvae.vertex_count()), cvae.decode(e.z, h.v, h.b))
                           .flattened()
                           .transpose();
        cf.row(i) = model.counterfactual_from(test.records[i], e, Intervention().shift(Node::A, 10.0))
                        .mesh.flattened()
                        .transpose();
      }
      const int k = std::min<int>(50, static_cast<int>(test.meshes.cols()));
      auto a = pca_compactness(test.meshes, recon, k);
      auto b = pca_compactness(test.meshes, cf, k);
      auto curve = [&](const std::string& name, const std::vector<double>& y) {
        Curve c{name, {}, y};
        for (std::size_t i = 0; i < y.size(); ++i) c.x.push_back(static_cast<double>(i + 1));
        return c;
      };
      std::vector<Curve> curves{curve("test", a.original), curve("reconstruction", a.other),
                                curve("counterfactual_a+10", b.other)};
      report.curves.insert(report.curves.end(), curves.begin(), curves.end());
      write_text(out_dir / "compactness.svg", svg_line_chart(curves, "PCA compactness", "component", "explained variance ratio"));
    }
  }
  if (want("specificity"))
    report.merge(specificity(model, z0, default_specificity_families(test), cfg.eval.specificity_samples, test, cfg.seed));
  if (want("trait")) {
    EvalReport tp = trait_preservation(model, test, default_trait_buckets(), cfg.eval.trait_subjects);
    const Table& t = tp.tables.front();
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& row : t.rows) {
      labels.push_back(std::get<std::string>(row[0]));
      values.push_back(std::get<double>(row[t.column("median_ved")]));
    }
    write_text(out_dir / "trait_preservation.svg", svg_bar_chart(labels, values, "Trait preservation", "median VED (mm)"));
    report.merge(tp);
  }
  if (want("trajectories")) {
    std::vector<SurfaceMesh> meshes;
    SurfaceMesh x = test.mesh(0, topo);
    report.merge(counterfactual_trajectories(model, test.records[0], x, default_trajectory_families(test.records[0]), &meshes));
    for (std::size_t k = 0; k < meshes.size(); ++k) {
      char name[48];
      std::snprintf(name, sizeof(name), "trajectories/mesh_%03zu.ply", k);
      write_mesh(meshes[k], out_dir / name, normal_displacement(x, meshes[k]));
    }
  }
  if (want("interpolation")) {
    double vm = 0, bm = 0;
    for (const auto& r : test.records) {
      vm += r.v;
      bm += r.b;
    }
    std::vector<int> dims;
    for (int d : cfg.eval.interpolation_dims)
      if (d < model.mesh_model().latent_dim()) dims.push_back(d);
    auto grid = latent_interpolation(model, dims, cfg.eval.interpolation_offsets, vm / test.size(), bm / test.size());
    Table t{"interpolation", {"index", "dim", "offset", "max_abs_displacement"}, {}};
    for (std::size_t k = 0; k < grid.size(); ++k) {
      char name[48];
      std::snprintf(name, sizeof(name), "interpolation/mesh_%03zu.ply", k);
      write_mesh(grid[k].mesh, out_dir / name, grid[k].signed_displacement);
      t.add_row({static_cast<double>(k), static_cast<double>(grid[k].dim), grid[k].offset,
                 grid[k].signed_displacement.cwiseAbs().maxCoeff()});
    }
    report.tables.push_back(std::move(t));
  }
  if (want("projection") && cfg.eval.projection_samples > 0) {
    EvalReport p = shape_projection(model, z0, cfg.eval.projection_samples, cfg.seed);
    const Table& t = p.tables.front();
    std::vector<double> x, y, a;
    for (const auto& row : t.rows) {
      x.push_back(std::get<double>(row[0]));
      y.push_back(std::get<double>(row[1]));
      a.push_back(std::get<double>(row[2]));
    }
    write_text(out_dir / "shape_projection.svg", svg_scatter(x, y, a, "Shape projection (colour: age)"));
    report.merge(p);
  }
  write_report(report, out_dir);
  out << "wrote " << report.tables.size() << " tables to " << out_dir.string() << '\n';
  return out_dir;
}

void cmd_export_mesh(const fs::path& checkpoint, const fs::path& input, const std::string& what,
                     const fs::path& output, std::ostream& out) {
  if (!input.empty()) {
    write_mesh(read_mesh(input), output);
  } else {
    auto loaded = open_checkpoint(checkpoint);
    const auto& model = *loaded.model;
    if (what == "template") {
      write_mesh(model.mesh_model().template_mesh(), output);
    } else if (what == "mean") {
      const auto& cvae = model.mesh_model();
      LikelihoodParams p = cvae.decode(Eigen::VectorXd::Zero(cvae.latent_dim()), 0.0, 0.0);
      write_mesh(SurfaceMesh::from_flat(cvae.topology(), p.mu), output);
    } else {
      fail(ErrorCode::kInvalidArgument, "--what must be template or mean");
    }
  }
  out << "wrote " << output.string() << '\n';
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal shape models: synthetic cohorts, training, counterfactuals and evaluation", "csm"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  std::string checkpoint;
  auto common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=20");
    if (with_checkpoint) sub->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/checkpoint.json)");
  };

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic cohort");
  common(gen, false);
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory (overrides data.generate.out_dir)");

  auto* train = app.add_subcommand("train", "Train a model");
  common(train, false);
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from <output_dir>/checkpoint.json");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct a split");
  common(recon, true);
  std::string split = "test", out_dir;
  recon->add_option("--split", split, "train, val or test");
  recon->add_option("--out", out_dir, "Output directory")->required();

  auto* inter = app.add_subcommand("intervene", "Sample meshes under an intervention");
  common(inter, true);
  std::string do_text;
  int n = 10;
  inter->add_option("--do", do_text, "Intervention, e.g. \"a=80 s=0.5\"")->required();
  inter->add_option("--n", n, "Number of samples");
  inter->add_option("--out", out_dir, "Output directory")->required();

  auto* cf = app.add_subcommand("counterfact", "Subject-level counterfactuals");
  common(cf, true);
  std::uint64_t subject = 0;
  std::vector<std::string> do_list;
  cf->add_option("--subject", subject, "Subject id from the manifest")->required();
  cf->add_option("--do", do_list, "Intervention per step (repeatable); empty for the null counterfactual");
  cf->add_option("--out", out_dir, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Run evaluation suites");
  common(ev, true);
  std::string suite;
  ev->add_option("--suite", suite, "all, reconstruction, compactness, specificity, trait, trajectories, interpolation, projection");
  ev->add_option("--out", out_dir, "Report directory (default <output_dir>/eval)");

  auto* ex = app.add_subcommand("export-mesh", "Export the template, the mean shape, or convert a mesh file");
  common(ex, true);
  std::string input, what = "template", output;
  ex->add_option("--input", input, "Mesh file to convert");
  ex->add_option("--what", what, "template or mean");
  ex->add_option("--out", output, "Output .ply or .obj")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[E_USAGE]: " << e.what() << '\n';
    return 1;
  }

  try {
    RunConfig cfg = load_config(config_file, overrides);
    const fs::path ckpt = checkpoint.empty() ? default_checkpoint(cfg) : fs::path(checkpoint);
    if (gen->parsed()) {
      if (!gen_out.empty()) cfg.generate.out_dir = gen_out;
      cmd_generate_data(cfg, out);
    } else if (train->parsed()) {
      cmd_train(cfg, resume, out);
    } else if (recon->parsed()) {
      cmd_reconstruct(cfg, ckpt, split, out_dir, out);
    } else if (inter->parsed()) {
      cmd_intervene(cfg, ckpt, do_text, n, out_dir, out);
    } else if (cf->parsed()) {
      cmd_counterfact(cfg, ckpt, subject, do_list, out_dir, out);
    } else if (ev->parsed()) {
      cmd_evaluate(cfg, ckpt, suite.empty() ? cfg.eval.suite : suite,
                   out_dir.empty() ? cfg.output_dir / "eval" : fs::path(out_dir), out);
    } else if (ex->parsed()) {
      cmd_export_mesh(ckpt, input, what, output, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error[" << error_tag(e.code()) << "]: " << e.what() << '\n';
    return is_user_error(e.code()) ? 1 : 2;
  } catch (const fs::filesystem_error& e) {
    err << "error[E_IO]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error[E_INTERNAL]: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace csm::cli
