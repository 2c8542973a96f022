#include <benchmark/benchmark.h>

#include "csm/cohort.hpp"
#include "csm/cvae.hpp"
#include "csm/simplify.hpp"
#include "csm/spectral.hpp"

namespace {

using namespace csm;

MeshCvaeConfig desk_config() {
  MeshCvaeConfig c;
  c.latent_dim = 8;
  c.cheb_order = 6;
  c.output_order = 6;
  c.encoder_channels = {16, 32, 32};
  c.decoder_channels = {32, 32, 16};
  return c;
}

void BM_ChebFilter(benchmark::State& state) {
  SurfaceMesh m = make_icosphere(static_cast<int>(state.range(0)));
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(m.vertex_count(), 16);
  ChebCoefficients theta(static_cast<std::size_t>(state.range(1)), Eigen::MatrixXd::Random(16, 16));
  for (auto _ : state) benchmark::DoNotOptimize(cheb_filter(m.topology(), x, theta));
  state.SetItemsProcessed(state.iterations() * m.vertex_count());
}
BENCHMARK(BM_ChebFilter)->Args({2, 6})->Args({3, 6})->Args({3, 10})->Args({4, 10});

void BM_QuadricSimplify(benchmark::State& state) {
  SurfaceMesh m = make_icosphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(quadric_simplify(m, 2.0));
}
BENCHMARK(BM_QuadricSimplify)->DenseRange(2, 4)->Unit(benchmark::kMillisecond);

void BM_LargestEigenvalue(benchmark::State& state) {
  SurfaceMesh m = make_icosphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(largest_eigenvalue(m.topology().laplacian()));
}
BENCHMARK(BM_LargestEigenvalue)->DenseRange(2, 4)->Unit(benchmark::kMicrosecond);

class CvaeFixture : public benchmark::Fixture {
 public:
  void SetUp(const benchmark::State& state) override {
    GroundTruthScm scm;
    cvae = std::make_unique<MeshCvae>(scm.template_mesh(), desk_config(), 1);
    const int b = static_cast<int>(state.range(0));
    x = Eigen::MatrixXd::Zero(b, 3 * cvae->vertex_count());
    for (int i = 0; i < b; ++i) {
      auto e = scm.sample_noise(1, i);
      x.row(i) = scm.mesh(scm.covariates(e), e).flattened().transpose();
    }
    cond = Eigen::MatrixXd::Random(b, 2);
    z = Eigen::MatrixXd::Random(b, 8);
    xi = Eigen::MatrixXd::Random(b, 8);
  }
  void TearDown(const benchmark::State&) override { cvae.reset(); }

  std::unique_ptr<MeshCvae> cvae;
  Eigen::MatrixXd x, cond, z, xi;
};

BENCHMARK_DEFINE_F(CvaeFixture, Encode)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(cvae->encode_batch(x, cond));
  state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK_REGISTER_F(CvaeFixture, Encode)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_DEFINE_F(CvaeFixture, Decode)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(cvae->decode_batch(z, cond));
  state.SetItemsProcessed(state.iterations() * z.rows());
}
BENCHMARK_REGISTER_F(CvaeFixture, Decode)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_DEFINE_F(CvaeFixture, ElboWithGradients)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(cvae->elbo_terms(x, cond, xi, 1.0));
  state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK_REGISTER_F(CvaeFixture, ElboWithGradients)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
