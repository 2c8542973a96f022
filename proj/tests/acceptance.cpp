// Acceptance suite: one line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csm/checkpoint.hpp"
#include "csm/cohort.hpp"
#include "csm/eval.hpp"
#include "csm/mesh_io.hpp"
#include "csm/report.hpp"
#include "csm/simplify.hpp"
#include "csm/spectral.hpp"
#include "csm/train.hpp"
#include "oracles.hpp"

using namespace csm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

struct Desk {
  GroundTruthScm scm;
  CohortManifest manifest;
  std::vector<SubjectNoise> noise;
  SurfaceMesh templ;
  Dataset train, val, test;
  std::unique_ptr<CausalShapeModel> model;
  std::vector<EpochLog> logs;
  double train_seconds = 0.0;
  fs::path checkpoint;
};

MeshCvaeConfig desk_config() {
  MeshCvaeConfig c;
  c.latent_dim = 8;
  c.cheb_order = 6;
  c.output_order = 6;
  c.encoder_channels = {16, 32, 32};
  c.decoder_channels = {32, 32, 16};
  return c;
}

Desk build_desk(const fs::path& dir, int epochs) {
  Desk d{GroundTruthScm{}, {}, {}, make_icosphere(0), {}, {}, {}, nullptr, {}, 0.0, dir / "checkpoint.json"};
  const fs::path cohort = dir / "cohort";
  if (!fs::exists(cohort / "manifest.csv")) sample_cohort(d.scm, CohortSizes{}, 7, cohort);
  d.manifest = read_manifest(cohort / "manifest.csv");
  d.noise = read_noise(cohort / "noise.csv");
  d.templ = read_mesh(cohort / "template.ply");
  d.train = load_split(d.manifest, "train", d.templ);
  d.val = load_split(d.manifest, "val", d.templ);
  d.test = load_split(d.manifest, "test", d.templ);
  d.model = std::make_unique<CausalShapeModel>(d.templ, desk_config(), CausalGraph(), 7);
  fit_statistics(*d.model, d.train);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 64;
  tc.lr_mesh = 1e-3;
  tc.seed = 7;
  Trainer trainer(*d.model, tc);
  const auto t0 = Clock::now();
  d.logs = trainer.fit(d.train, [](const EpochLog& l) {
    std::fprintf(stderr, "  epoch %3d  elbo %10.3f  kl %8.3f  ved %.4f  %.1fs\n", l.epoch, l.elbo, l.kl, l.recon_ved,
                 l.seconds);
  });
  d.train_seconds = seconds_since(t0);
  save_checkpoint(d.checkpoint, *d.model, TrainState{trainer.epoch(), trainer.optimizer().state()});
  return d;
}

Outcome spectral_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int g = 0; g < 200; ++g) {
    const int n = 3 + static_cast<int>(rng.uniform() * 48);
    const int k = 1 + g % 8;
    auto topo = testing::random_connected_topology(n, rng);
    Eigen::MatrixXd x(n, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    ChebCoefficients theta;
    for (int j = 0; j < k; ++j) {
      Eigen::MatrixXd t(3, 2);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
      theta.push_back(t);
    }
    worst = std::max(worst, (cheb_filter(*topo, x, theta) - testing::dense_cheb_filter(*topo, x, theta))
                                .cwiseAbs()
                                .maxCoeff());
  }
  const double s = seconds_since(t0);
  return {worst < 1e-8 && s < 30.0, fmt("200 graphs, max abs err %.3g (tol 1e-8), %.2f s (limit 30 s)", worst, s)};
}

Outcome flow_invertibility(const CausalShapeModel& m, const Dataset& ref) {
  const auto t0 = Clock::now();
  Rng rng(99);
  double round_trip = 0.0, jac = 0.0;
  for (Node node : {Node::A, Node::B, Node::V}) {
    const auto& mech = m.mechanism(node);
    for (int i = 0; i < 10000; ++i) {
      const CovariateRecord& r = ref.records[i % ref.size()];
      const auto ctx = m.context(node, r);
      const double eps = rng.normal();
      const double value = mech.forward(eps, ctx).value;
      round_trip = std::max(round_trip, std::abs(mech.inverse(value, ctx).eps - eps));
      if (i % 10 == 0) {
        const double h = 1e-5;
        const double num = (mech.forward(eps + h, ctx).value - mech.forward(eps - h, ctx).value) / (2 * h);
        const double ana = std::exp(mech.log_abs_det_jacobian(eps, ctx));
        jac = std::max(jac, std::abs(ana - num) / std::abs(num));
      }
    }
  }
  for (double s : {0.0, 1.0}) round_trip = std::max(round_trip, std::abs(m.sex().forward(s) - s));
  const double s = seconds_since(t0);
  return {round_trip < 1e-6 && jac < 1e-4 && s < 60.0,
          fmt("a/b/v 1e4 samples each: max |eps'-eps| %.3g (tol 1e-6), max Jacobian rel err %.3g (tol 1e-4), "
              "s identity; %.2f s (limit 60 s)",
              round_trip, jac, s)};
}

Outcome exact_reconstruction(const Desk& d) {
  const auto& cvae = d.model->mesh_model();
  double worst = 0.0;
  for (int i = 0; i < d.test.size(); ++i) {
    SurfaceMesh x = d.test.mesh(i, cvae.topology());
    ExogenousState e = d.model->abduct(d.test.records[i], x);
    Intermediates h = d.model->intermediates(d.test.records[i]);
    worst = std::max(worst, ved(cvae.reparam_forward(e.u, cvae.decode(e.z, h.v, h.b)), x));
  }
  return {worst < 1e-5, fmt("%d test subjects, max VED %.3g mm (tol 1e-5)", d.test.size(), worst)};
}

Outcome null_counterfactual(const Desk& d) {
  double worst_mesh = 0.0, worst_cov = 0.0;
  for (int i = 0; i < d.test.size(); ++i) {
    SurfaceMesh x = d.test.mesh(i, d.model->mesh_model().topology());
    auto cf = d.model->counterfactual(d.test.records[i], x, Intervention());
    worst_mesh = std::max(worst_mesh, ved(cf.mesh, x));
    for (Node n : kCovariateNodes)
      worst_cov = std::max(worst_cov, std::abs(cf.record.get(n) - d.test.records[i].get(n)));
  }
  return {worst_mesh < 1e-5 && worst_cov < 1e-6,
          fmt("%d test subjects, max VED %.3g mm (tol 1e-5), max covariate diff %.3g (tol 1e-6)", d.test.size(),
              worst_mesh, worst_cov)};
}

Outcome graph_semantics(const Desk& d) {
  int ok_v = 0, ok_b = 0;
  for (int i = 0; i < 100; ++i) {
    const CovariateRecord& r = d.test.records[i];
    ExogenousState e = d.model->abduct(r, d.test.mesh(i, d.model->mesh_model().topology()));
    auto cv = d.model->counterfactual_from(r, e, Intervention().set(Node::V, r.v * 1.1));
    ok_v += cv.record.b == r.b;
    const double big_b = r.b * 1.08;
    auto cb = d.model->counterfactual_from(r, e, Intervention().set(Node::B, big_b));
    CovariateRecord rb = r;
    rb.b = big_b;
    ok_b += cb.record.v == d.model->mechanism(Node::V).forward(e.eps_v, d.model->context(Node::V, rb)).value;
  }
  return {ok_v == 100 && ok_b == 100,
          fmt("do(v): b_cf == b on %d/100; do(b:=B): v_cf == f_V(eps_V; a, B) on %d/100", ok_v, ok_b)};
}

Outcome trait_preservation_check(const Desk& d) {
  double radius = 0.0;
  for (int i = 0; i < d.test.size(); ++i) radius += mean_radius(d.test.mesh(i, d.model->mesh_model().topology()).vertices());
  radius /= d.test.size();
  const double limit = 0.05 * radius;
  const auto buckets = default_trait_buckets();
  auto r = trait_preservation(*d.model, d.test, buckets);
  const Table& t = r.table("trait_preservation");
  bool pass = true;
  double worst = 0.0;
  std::string worst_label;
  std::vector<double> shift, shift_med;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    const double med = std::get<double>(row[t.column("median_ved")]);
    if (buckets[k].age_shift != 0.0) {
      shift.push_back(std::abs(buckets[k].age_shift));
      shift_med.push_back(med);
    }
    pass = pass && med < limit;
    if (med >= worst) {
      worst = med;
      worst_label = std::get<std::string>(row[0]);
    }
  }
  return {pass, fmt("%zu buckets, worst median VED %.4g mm in %s (limit 5%% of mean radius %.3f = %.4f mm); "
                    "Spearman(|da|, median VED) %.2f; training %.0f s on this machine (budget 900 s)",
                    t.rows.size(), worst, worst_label.c_str(), radius, limit, spearman(shift, shift_med),
                    d.train_seconds)};
}

Outcome oracle_agreement(const Desk& d) {
  std::vector<double> eb, ev;
  for (int i = 0; i < 200; ++i) {
    const SubjectNoise& n = d.noise.at(d.test.ids[i]);
    SurfaceMesh x = d.test.mesh(i, d.model->mesh_model().topology());
    for (double delta : {-10.0, 10.0}) {
      Intervention iv = Intervention().shift(Node::A, delta);
      auto truth = oracle_counterfactual(d.scm, n, iv).first;
      auto cf = d.model->counterfactual(d.test.records[i], x, iv);
      eb.push_back(std::abs(cf.record.b - truth.b) / truth.b);
      ev.push_back(std::abs(cf.record.v - truth.v) / truth.v);
    }
  }
  const double mb = summarise(eb).median, mv = summarise(ev).median;
  return {mb < 0.1 && mv < 0.1,
          fmt("200 test subjects x do(a-10), do(a+10): median rel err b %.4f, v %.4f (tol 0.10)", mb, mv)};
}

Outcome training_sanity(const Desk& d) {
  bool finite = true;
  for (const auto& l : d.logs) finite = finite && std::isfinite(l.elbo) && std::isfinite(l.log_likelihood) &&
                                        std::isfinite(l.kl) && std::isfinite(l.covariate_evidence);
  const int window = 3, first = std::min<int>(10, static_cast<int>(d.logs.size()));
  std::vector<double> ma;
  for (int e = window; e <= first; ++e) {
    double s = 0.0;
    for (int k = e - window; k < e; ++k) s += d.logs[k].elbo;
    ma.push_back(s / window);
  }
  bool increasing = first == 10;
  for (std::size_t i = 1; i < ma.size(); ++i) increasing = increasing && ma[i] > ma[i - 1];
  auto loaded = load_checkpoint(d.checkpoint, &d.templ.topology());
  const double e0 = evaluate_elbo(*d.model, d.val, 11).elbo;
  const double e1 = evaluate_elbo(*loaded.model, d.val, 11).elbo;
  const double diff = std::abs(e0 - e1);
  return {finite && increasing && diff <= 1e-6 && d.model->mesh_model().config().sigma_floor > 0.0,
          fmt("3-epoch moving ELBO over epochs 1-10: %.2f -> %.2f, strictly increasing: %s; all %zu epochs finite: "
              "%s (sigma floor %.0e); reload |dELBO| %.3g (tol 1e-6)",
              ma.empty() ? NAN : ma.front(), ma.empty() ? NAN : ma.back(), increasing ? "yes" : "no", d.logs.size(),
              finite ? "yes" : "no", d.model->mesh_model().config().sigma_floor, diff)};
}

Outcome simplification_contract() {
  bool pass = true;
  std::string counts;
  for (int n : {2, 3, 4}) {
    SurfaceMesh m = make_icosphere(n);
    auto h = build_hierarchy(m, {2.0, 2.0, 2.0});
    int expected = m.vertex_count();
    for (int c : h.vertex_counts()) {
      pass = pass && c == expected;
      counts += std::to_string(c) + (c == h.vertex_counts().back() ? "" : ">");
      expected = (expected + 1) / 2;
    }
    counts += n == 4 ? "" : ", ";
    Eigen::MatrixXd current = Eigen::MatrixXd::Random(m.vertex_count(), 8);
    for (const auto& level : h.levels) {
      Eigen::MatrixXd up = unsimplify(simplify_transfer(current, level), level);
      for (int rep : level.representative) pass = pass && up.row(rep) == current.row(rep);
      current = simplify_transfer(current, level);
    }
  }
  return {pass, "vertex counts " + counts + "; up(down(f)) == f on every surviving vertex at every level"};
}

Outcome gradient_integrity() {
  double worst = 0.0;
  Rng rng(7);
  {
    SurfaceMesh ico = make_icosphere(1);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(42, 2), gy = Eigen::MatrixXd::Random(42, 3);
    ChebCoefficients theta;
    for (int k = 0; k < 5; ++k) theta.push_back(Eigen::MatrixXd::Random(2, 3));
    auto g = cheb_filter_backward(ico.topology(), x, theta, gy);
    auto f = [&](const Eigen::VectorXd& v) {
      return (cheb_filter(ico.topology(), Eigen::Map<const Eigen::MatrixXd>(v.data(), 42, 2), theta).array() *
              gy.array())
          .sum();
    };
    worst = std::max(worst, testing::relative_error(Eigen::Map<const Eigen::VectorXd>(g.x.data(), g.x.size()),
                                                    testing::numerical_gradient(
                                                        f, Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()))));
  }
  GroundTruthScm scm;
  scm.subdivisions = 1;
  MeshCvaeConfig c;
  c.latent_dim = 4;
  c.cheb_order = 3;
  c.levels = 2;
  c.encoder_channels = {4, 6};
  c.decoder_channels = {6, 4};
  c.output_order = 2;
  MeshCvae cvae(scm.template_mesh(), c, 3);
  Eigen::MatrixXd x(3, 126), cond = Eigen::MatrixXd::Random(3, 2);
  for (int i = 0; i < 3; ++i) {
    auto e = scm.sample_noise(1, i);
    x.row(i) = scm.mesh(scm.covariates(e), e).flattened().transpose();
  }
  cvae.set_shape_normalisation(x.colwise().mean().transpose(), 0.3);
  nn::ParamList ps;
  cvae.collect(ps);
  auto param_check = [&](const std::function<void()>& accumulate, const std::function<double()>& loss) {
    nn::zero_grad(ps);
    accumulate();
    Eigen::VectorXd ana(0), num(0);
    for (auto* p : ps)
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.uniform() * p->value.size()) % p->value.size();
        const double x0 = p->value.data()[i], h = 1e-5;
        p->value.data()[i] = x0 + h;
        const double fp = loss();
        p->value.data()[i] = x0 - h;
        const double fm = loss();
        p->value.data()[i] = x0;
        ana.conservativeResize(ana.size() + 1);
        num.conservativeResize(num.size() + 1);
        ana[ana.size() - 1] = p->grad.data()[i];
        num[num.size() - 1] = (fp - fm) / (2 * h);
      }
    return testing::relative_error(ana, num);
  };
  Eigen::MatrixXd gm = Eigen::MatrixXd::Random(3, 4), gl = Eigen::MatrixXd::Random(3, 4);
  const double enc = param_check([&] { cvae.encode_backward(x, cond, gm, gl); },
                                 [&] {
                                   auto e = cvae.encode_batch(x, cond);
                                   return (e.mu_z.array() * gm.array()).sum() + (e.log_var_z.array() * gl.array()).sum();
                                 });
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(3, 4), gmu = Eigen::MatrixXd::Random(3, 126),
                  gs = Eigen::MatrixXd::Random(3, 126);
  Eigen::MatrixXd dz = cvae.decode_backward_z(z, cond, gmu, gs);
  auto fz = [&](const Eigen::VectorXd& v) {
    auto dd = cvae.decode_batch(Eigen::Map<const Eigen::MatrixXd>(v.data(), 3, 4), cond);
    return (dd.mu.array() * gmu.array()).sum() + (dd.sigma.array() * gs.array()).sum();
  };
  const double dec = testing::relative_error(Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size()),
                                             testing::numerical_gradient(
                                                 fz, Eigen::Map<const Eigen::VectorXd>(z.data(), z.size()), 1e-5));
  Eigen::MatrixXd xi = Eigen::MatrixXd::Random(3, 4);
  const double elbo = param_check([&] { cvae.elbo_terms(x, cond, xi, 1.0); },
                                  [&] {
                                    auto t = cvae.elbo_terms(x, cond, xi, 0.0);
                                    return -(t.log_likelihood - t.kl).sum();
                                  });
  const double cheb = worst;
  worst = std::max({worst, enc, dec, elbo});
  return {worst <= 1e-3, fmt("42-vertex toy, float64 rel err: cheb_filter %.2g, encoder %.2g, decoder %.2g, ELBO %.2g "
                             "(tol 1e-3)",
                             cheb, enc, dec, elbo)};
}

std::vector<std::string> first_column(const Table& t) {
  std::vector<std::string> out;
  for (const auto& r : t.rows) out.push_back(std::get<std::string>(r[0]));
  return out;
}

Outcome report_formats(const Desk& d) {
  auto build = [&](const CausalShapeModel& m) {
    EvalReport r = reconstruction_table(m, d.test, fit_pca(d.train.meshes), {8, 16, 32, 64}, 5);
    r.merge(specificity(m, Eigen::VectorXd::Zero(m.mesh_model().latent_dim()), default_specificity_families(d.test),
                        10, d.test, 5));
    r.merge(trait_preservation(m, d.test, default_trait_buckets(), 100));
    return r;
  };
  auto a = load_checkpoint(d.checkpoint);
  auto b = load_checkpoint(d.checkpoint);
  const EvalReport ra = build(*a.model);
  const bool identical = report_json(ra) == report_json(build(*b.model));
  const Table& rec = ra.table("reconstruction");
  const Table& sp = ra.table("specificity");
  const Table& trait = ra.table("trait_preservation");
  const bool rec_ok =
      rec.columns == std::vector<std::string>{"model", "latent_dim", "mean_ved", "std_ved", "median_ved", "chamfer"} &&
      first_column(rec) == std::vector<std::string>{"pca", "pca", "pca", "pca", "f_X(z_i,u)", "f_X(z_i,u_i)"};
  const bool spec_ok = sp.columns == std::vector<std::string>{"do", "mean", "std", "median", "n"} &&
                       first_column(sp) == std::vector<std::string>{"do(a,s)", "do(b,v)"};
  std::vector<std::string> expected_buckets{"identity"};
  for (const char* s : {"-20", "-15", "-10", "-5", "+5", "+10", "+15", "+20"}) expected_buckets.push_back(std::string("do(a") + s + ")");
  expected_buckets.push_back("do(s=1) female");
  expected_buckets.push_back("do(s=0) male");
  const bool trait_ok = trait.columns == std::vector<std::string>{"bucket", "n", "median_ved", "mean_ved"} &&
                        first_column(trait) == expected_buckets;
  return {identical && rec_ok && spec_ok && trait_ok,
          fmt("reconstruction layout %s, specificity layout %s, trait buckets %s; two reloads of the checkpoint give "
              "byte-identical reports: %s",
              rec_ok ? "ok" : "MISMATCH", spec_ok ? "ok" : "MISMATCH", trait_ok ? "ok" : "MISMATCH",
              identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance";
  int epochs = 40;
  app.add_option("--work-dir", work_dir, "Scratch directory for the desk cohort and checkpoint");
  app.add_option("--epochs", epochs, "Desk-scale training epochs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work_dir);

  std::vector<std::pair<std::string, std::function<Outcome()>>> checks;
  std::fprintf(stderr, "training desk-scale model (%d epochs)\n", epochs);
  Desk desk = build_desk(work_dir, epochs);
  checks.emplace_back("spectral oracle equivalence", spectral_oracle);
  checks.emplace_back("flow invertibility", [&] { return flow_invertibility(*desk.model, desk.test); });
  checks.emplace_back("exact reconstruction", [&] { return exact_reconstruction(desk); });
  checks.emplace_back("null counterfactual identity", [&] { return null_counterfactual(desk); });
  checks.emplace_back("graph-structure semantics", [&] { return graph_semantics(desk); });
  checks.emplace_back("trait preservation", [&] { return trait_preservation_check(desk); });
  checks.emplace_back("oracle agreement", [&] { return oracle_agreement(desk); });
  checks.emplace_back("training sanity", [&] { return training_sanity(desk); });
  checks.emplace_back("simplification contract", simplification_contract);
  checks.emplace_back("gradient integrity", gradient_integrity);
  checks.emplace_back("report formats", [&] { return report_formats(desk); });

  int failed = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] C%zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, checks[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", checks.size() - failed, checks.size());
  return failed == 0 ? 0 : 1;
}
