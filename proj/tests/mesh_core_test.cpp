#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "csm/align.hpp"
#include "csm/cohort.hpp"
#include "csm/error.hpp"
#include "csm/mesh_io.hpp"
#include "csm/simplify.hpp"
#include "csm/spectral.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace csm {
namespace {

using testing::random_connected_topology;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no csm::Error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(Topology, TriangleLaplacian) {
  auto t = build_topology({{0, 1, 2}}, 3);
  Eigen::MatrixXd l(t->laplacian());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(l(i, j), i == j ? 1.0 : -0.5, 1e-15);
  EXPECT_NEAR(t->lambda_max(), 1.5, 1e-12);
}

TEST(Topology, IcosphereLevel3Has642Vertices) {
  SurfaceMesh m = make_icosphere(3);
  auto t = build_topology(m.topology().faces(), m.vertex_count());
  EXPECT_EQ(t->vertex_count(), 642);
  EXPECT_EQ(t->faces().size(), 1280u);
}

TEST(Topology, RejectsBadFaces) {
  EXPECT_EQ(code_of([] { build_topology({{0, 0, 1}}, 3); }), ErrorCode::kDegenerateFace);
  EXPECT_EQ(code_of([] { build_topology({{0, 1, 3}}, 3); }), ErrorCode::kIndexOutOfRange);
}

TEST(Spectral, ScaledLaplacianFormula) {
  auto t = build_topology({{0, 1, 2}, {0, 2, 3}, {0, 3, 4}, {0, 4, 1}}, 5);
  SparseMatrix lt = scale_laplacian(*t);
  Eigen::MatrixXd expect = 2.0 * Eigen::MatrixXd(t->laplacian()) / t->lambda_max() -
                           Eigen::MatrixXd::Identity(5, 5);
  EXPECT_LT((Eigen::MatrixXd(lt) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Spectral, ScaledSpectrumInsideUnitInterval) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto t = random_connected_topology(4 + trial, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig{Eigen::MatrixXd(scale_laplacian(*t))};
    EXPECT_LE(eig.eigenvalues().cwiseAbs().maxCoeff(), 1.0 + 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dense(testing::dense_laplacian(*t));
    EXPECT_NEAR(t->lambda_max(), dense.eigenvalues().maxCoeff(), 1e-10);
  }
}

TEST(Spectral, ConstantVectorUnderScaledLaplacian) {
  Rng rng(5);
  auto t = random_connected_topology(20, rng);
  // D^{1/2} 1 spans the kernel of the normalised Laplacian.
  Eigen::VectorXd d = Eigen::MatrixXd(t->adjacency()).rowwise().sum().cwiseSqrt();
  Eigen::VectorXd y = scale_laplacian(*t) * d;
  EXPECT_LT((y + d).cwiseAbs().maxCoeff(), 1e-12);
  SurfaceMesh ico = make_icosphere(0);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(12);
  EXPECT_LT((scale_laplacian(ico.topology()) * ones + ones).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ChebFilter, ZerothOrderIsIdentity) {
  Rng rng(1);
  auto t = random_connected_topology(10, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 1);
  EXPECT_EQ(cheb_filter(*t, x, {Eigen::MatrixXd::Ones(1, 1)}), x);
}

TEST(ChebFilter, ZeroCoefficientsGiveZero) {
  Rng rng(2);
  auto t = random_connected_topology(10, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 3);
  ChebCoefficients theta(4, Eigen::MatrixXd::Zero(3, 2));
  EXPECT_EQ(cheb_filter(*t, x, theta).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ChebFilter, MatchesDenseSpectralOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform() * 48);
    const int k = 1 + trial % 8;
    auto t = random_connected_topology(n, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 2);
    ChebCoefficients theta;
    for (int i = 0; i < k; ++i) theta.push_back(Eigen::MatrixXd::Random(2, 3));
    EXPECT_LT((cheb_filter(*t, x, theta) - testing::dense_cheb_filter(*t, x, theta)).cwiseAbs().maxCoeff(), 1e-8)
        << "n=" << n << " K=" << k;
  }
}

TEST(ChebFilter, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  auto t = random_connected_topology(12, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(12, 2);
  ChebCoefficients theta;
  for (int i = 0; i < 4; ++i) theta.push_back(Eigen::MatrixXd::Random(2, 3));
  Eigen::MatrixXd gy = Eigen::MatrixXd::Random(12, 3);
  auto g = cheb_filter_backward(*t, x, theta, gy);
  auto fx = [&](const Eigen::VectorXd& v) {
    return (cheb_filter(*t, Eigen::Map<const Eigen::MatrixXd>(v.data(), 12, 2), theta).array() * gy.array()).sum();
  };
  Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  EXPECT_LT(testing::relative_error(Eigen::Map<const Eigen::VectorXd>(g.x.data(), g.x.size()),
                                    testing::numerical_gradient(fx, xv)),
            1e-6);
  auto ft = [&](const Eigen::VectorXd& v) {
    ChebCoefficients th = theta;
    th[2] = Eigen::Map<const Eigen::MatrixXd>(v.data(), 2, 3);
    return (cheb_filter(*t, x, th).array() * gy.array()).sum();
  };
  Eigen::VectorXd tv = Eigen::Map<const Eigen::VectorXd>(theta[2].data(), 6);
  EXPECT_LT(testing::relative_error(Eigen::Map<const Eigen::VectorXd>(g.theta[2].data(), 6),
                                    testing::numerical_gradient(ft, tv)),
            1e-6);
}

TEST(Simplify, VertexCountsHalve) {
  for (int n : {2, 3, 4}) {
    SurfaceMesh m = make_icosphere(n);
    auto h = build_hierarchy(m, {2.0, 2.0, 2.0});
    int expected = m.vertex_count();
    auto counts = h.vertex_counts();
    ASSERT_EQ(counts.size(), 4u);
    for (std::size_t l = 0; l < counts.size(); ++l) {
      EXPECT_EQ(counts[l], expected) << "n=" << n << " level " << l;
      expected = (expected + 1) / 2;
    }
  }
  EXPECT_EQ(build_hierarchy(make_icosphere(3), {2.0, 2.0}).vertex_counts().back(), 161);
}

TEST(Simplify, PlanarQuadricVanishesInPlane) {
  std::vector<Face> faces;
  VertexArray v(9, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v.row(3 * i + j) << i, j, 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      int a = 3 * i + j;
      faces.push_back({a, a + 1, a + 4});
      faces.push_back({a, a + 4, a + 3});
    }
  SurfaceMesh m(build_topology(faces, 9), v);
  auto q = vertex_quadrics(m);
  Eigen::Vector3d mid = 0.5 * (v.row(4) + v.row(5)).transpose();
  EXPECT_NEAR(quadric_error(q[4] + q[5], mid), 0.0, 1e-15);
  EXPECT_GT(quadric_error(q[4], mid + Eigen::Vector3d(0, 0, 0.1)), 0.0);
}

TEST(Simplify, UpDownIdentityOnSurvivors) {
  for (int n : {2, 3, 4}) {
    SurfaceMesh m = make_icosphere(n);
    auto r = quadric_simplify(m, 2.0);
    Eigen::MatrixXd f = Eigen::MatrixXd::Random(m.vertex_count(), 16);
    Eigen::MatrixXd up = unsimplify(simplify_transfer(f, r.level), r.level);
    for (int rep : r.level.representative) EXPECT_EQ(up.row(rep), f.row(rep));
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(r.level.coarse->vertex_count(), 2, 3.5);
    EXPECT_EQ(unsimplify(c, r.level).cwiseAbs().minCoeff(), 3.5);
    EXPECT_EQ(unsimplify(c, r.level).rows(), m.vertex_count());
  }
  auto r = quadric_simplify(make_icosphere(3), 2.0);
  EXPECT_EQ(unsimplify(Eigen::MatrixXd::Zero(321, 16), r.level).rows(), 642);
  EXPECT_EQ(unsimplify(Eigen::MatrixXd::Zero(321, 16), r.level).cols(), 16);
}

TEST(Simplify, TransferAdjoints) {
  auto r = quadric_simplify(make_icosphere(2), 2.0);
  Eigen::MatrixXd f = Eigen::MatrixXd::Random(162, 3), c = Eigen::MatrixXd::Random(81, 3);
  EXPECT_NEAR((simplify_transfer(f, r.level).array() * c.array()).sum(),
              (f.array() * simplify_transfer_adjoint(c, r.level).array()).sum(), 1e-12);
  EXPECT_NEAR((unsimplify(c, r.level).array() * f.array()).sum(),
              (c.array() * unsimplify_adjoint(f, r.level).array()).sum(), 1e-12);
}

TEST(Simplify, ReplayReproducesMesh) {
  SurfaceMesh m = make_icosphere(2);
  auto r = quadric_simplify(m, 2.0);
  EXPECT_EQ(replay_contractions(m, r.level).vertices(), r.mesh.vertices());
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

TEST(Align, RecoversSimilarity) {
  Rng rng(9);
  SurfaceMesh m = make_icosphere(2);
  VertexArray v = m.vertices();
  v.col(0) *= 1.3;
  SurfaceMesh base(m.topology_ptr(), v);
  Eigen::Matrix3d r = random_rotation(rng);
  VertexArray moved = (2.5 * (base.vertices() * r.transpose())).rowwise() + Eigen::RowVector3d(4, -2, 7);
  SurfaceMesh aligned = kabsch_umeyama_align(SurfaceMesh(m.topology_ptr(), moved), base, true);
  EXPECT_LT(ved(aligned, base), 1e-8);
  auto id = estimate_similarity(base.vertices(), base.vertices());
  EXPECT_LT((id.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_NEAR(id.scale, 1.0, 1e-12);
  EXPECT_EQ(ved(kabsch_umeyama_align(base, base), base), 0.0);
}

TEST(Align, ReflectionGivesProperRotation) {
  Rng rng(10);
  VertexArray src = VertexArray::Random(30, 3);
  VertexArray tgt = src;
  tgt.col(2) *= -1.0;
  auto t = estimate_similarity(src, tgt, false);
  EXPECT_NEAR(t.rotation.determinant(), 1.0, 1e-12);
  const double err = (t.apply(src) - tgt).squaredNorm();
  EXPECT_GT(err, 1e-6);
  // Oracle: best proper rotation among the SVD sign corrections.
  Eigen::RowVector3d mu_s = src.colwise().mean(), mu_t = tgt.colwise().mean();
  Eigen::MatrixXd s0 = src.rowwise() - mu_s, t0 = tgt.rowwise() - mu_t;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(t0.transpose() * s0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  double best = INFINITY;
  for (int mask = 0; mask < 8; ++mask) {
    Eigen::Vector3d d(mask & 1 ? -1 : 1, mask & 2 ? -1 : 1, mask & 4 ? -1 : 1);
    Eigen::Matrix3d r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    if (r.determinant() < 0) continue;
    best = std::min(best, ((s0 * r.transpose()) - t0).squaredNorm());
  }
  EXPECT_NEAR(err, best, 1e-9);
}

TEST(Ved, ClosedForms) {
  SurfaceMesh m = make_icosphere(1);
  EXPECT_EQ(ved(m, m), 0.0);
  VertexArray shifted = m.vertices().rowwise() + Eigen::RowVector3d(1, 0, 0);
  EXPECT_NEAR(ved(m.vertices(), shifted), 1.0, 1e-15);
  VertexArray a = VertexArray::Zero(2, 3), b = VertexArray::Zero(2, 3);
  b.row(0) << 3, 4, 0;
  EXPECT_DOUBLE_EQ(ved(a, b), 2.5);
}

TEST(MeshIo, RoundTripAndParseErrors) {
  auto dir = testing::scratch_dir("mesh_io");
  SurfaceMesh m = make_icosphere(2);
  write_mesh(m, dir / "m.ply");
  write_mesh(m, dir / "m.obj");
  EXPECT_LT(ved(read_mesh(dir / "m.ply", m.topology_ptr()), m), 1e-6);
  EXPECT_LT(ved(read_mesh(dir / "m.obj", m.topology_ptr()), m), 1e-6);
  std::ofstream(dir / "bad.ply") << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                                    "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
                                    "end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n";
  EXPECT_EQ(code_of([&] { read_mesh(dir / "bad.ply"); }), ErrorCode::kParse);
  std::ofstream(dir / "empty.ply").flush();
  EXPECT_EQ(code_of([&] { read_mesh(dir / "empty.ply"); }), ErrorCode::kParse);
}

}  // namespace
}  // namespace csm
