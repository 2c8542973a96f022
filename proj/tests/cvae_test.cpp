#include <cmath>

#include <gtest/gtest.h>

#include "csm/cohort.hpp"
#include "csm/cvae.hpp"
#include "csm/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace csm {
namespace {

class CvaeTest : public ::testing::Test {
 protected:
  CvaeTest() : scm_(testing::tiny_scm()), model_(scm_.template_mesh(), testing::tiny_config(), 17) {
    data_ = testing::synthetic_dataset(scm_, 8, 4);
    Eigen::VectorXd mean = data_.meshes.colwise().mean().transpose();
    model_.set_shape_normalisation(mean, 0.3);
    cond_ = Eigen::MatrixXd::Random(8, 2);
  }

  /// Picks a few entries of every parameter and compares the accumulated
  /// gradient to central differences of `loss`.
  void check_param_gradients(const std::function<double()>& loss, double tol) {
    nn::ParamList ps;
    model_.collect(ps);
    Rng rng(5);
    Eigen::VectorXd ana(0), num(0);
    for (auto* p : ps) {
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
    }
    EXPECT_LT(testing::relative_error(ana, num), tol);
  }

  GroundTruthScm scm_;
  MeshCvae model_;
  Dataset data_;
  Eigen::MatrixXd cond_;
};

TEST_F(CvaeTest, EncoderShapesAndDeterminism) {
  SurfaceMesh x = data_.mesh(0, model_.topology());
  auto a = model_.encode(x, 0.1, -0.2), b = model_.encode(x, 0.1, -0.2);
  EXPECT_EQ(a.mu_z.size(), 4);
  EXPECT_EQ(a.log_var_z.size(), 4);
  EXPECT_EQ(a.mu_z, b.mu_z);
  EXPECT_EQ(a.log_var_z, b.log_var_z);
  const double h = 1e-4;
  Eigen::VectorXd d = (model_.encode(x, 0.1, -0.2 + h).mu_z - model_.encode(x, 0.1, -0.2 - h).mu_z) / (2 * h);
  EXPECT_GT(d.norm(), 1e-8);
}

TEST_F(CvaeTest, RejectsForeignTopology) {
  try {
    model_.encode(make_icosphere(2), 0.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTopologyMismatch);
  }
}

TEST_F(CvaeTest, DecoderShapesAndMeanShape) {
  auto p = model_.decode(Eigen::VectorXd::Zero(4), 0.0, 0.0);
  EXPECT_EQ(p.mu.size(), 3 * 42);
  EXPECT_EQ(p.sigma.size(), 3 * 42);
  EXPECT_GE(p.sigma.minCoeff(), model_.config().sigma_floor);
  SurfaceMesh mean = model_.reparam_forward(Eigen::VectorXd::Zero(126), p);
  EXPECT_EQ(mean.flattened(), p.mu);
}

TEST_F(CvaeTest, ReparamRoundTripAndLogDet) {
  Rng rng(3);
  auto p = model_.decode(rng.normal_vector(4), 0.3, -0.1);
  Eigen::VectorXd u = rng.normal_vector(126);
  SurfaceMesh x = model_.reparam_forward(u, p);
  EXPECT_LT((model_.reparam_inverse(x, p) - u).cwiseAbs().maxCoeff(), 1e-9);
  Eigen::MatrixXd jac(126, 126);
  const double h = 1e-6;
  for (int j = 0; j < 126; ++j) {
    Eigen::VectorXd up = u, um = u;
    up[j] += h;
    um[j] -= h;
    jac.col(j) = (model_.reparam_forward(up, p).flattened() - model_.reparam_forward(um, p).flattened()) / (2 * h);
  }
  const double num = std::log(std::abs(jac.fullPivLu().determinant()));
  EXPECT_NEAR(MeshCvae::log_abs_det_jacobian(p), num, 1e-4 * std::abs(num));
}

TEST_F(CvaeTest, KlVanishesAtPrior) {
  EncoderOutput q{Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)};
  EXPECT_EQ(MeshCvae::kl_divergence(q), 0.0);
  q.mu_z[0] = 1.0;
  EXPECT_NEAR(MeshCvae::kl_divergence(q), 0.5, 1e-15);
}

TEST_F(CvaeTest, DecoderLatentGradient) {
  Rng rng(4);
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 4);
  Eigen::MatrixXd gm = Eigen::MatrixXd::Random(2, 126), gs = Eigen::MatrixXd::Random(2, 126);
  Eigen::MatrixXd c = cond_.topRows(2);
  Eigen::MatrixXd dz = model_.decode_backward_z(z, c, gm, gs);
  auto f = [&](const Eigen::VectorXd& zv) {
    Eigen::MatrixXd zz = Eigen::Map<const Eigen::MatrixXd>(zv.data(), 2, 4);
    auto d = model_.decode_batch(zz, c);
    return (d.mu.array() * gm.array()).sum() + (d.sigma.array() * gs.array()).sum();
  };
  Eigen::VectorXd zv = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
  EXPECT_LT(testing::relative_error(Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size()),
                                    testing::numerical_gradient(f, zv, 1e-5)),
            1e-3);
}

TEST_F(CvaeTest, EncoderParameterGradient) {
  Eigen::MatrixXd x = data_.meshes.topRows(3), c = cond_.topRows(3);
  Eigen::MatrixXd gm = Eigen::MatrixXd::Random(3, 4), gl = Eigen::MatrixXd::Random(3, 4);
  nn::ParamList ps;
  model_.collect(ps);
  nn::zero_grad(ps);
  model_.encode_backward(x, c, gm, gl);
  check_param_gradients(
      [&] {
        auto e = model_.encode_batch(x, c);
        return (e.mu_z.array() * gm.array()).sum() + (e.log_var_z.array() * gl.array()).sum();
      },
      1e-3);
}

TEST_F(CvaeTest, ElboParameterGradient) {
  Eigen::MatrixXd x = data_.meshes.topRows(4), c = cond_.topRows(4);
  Eigen::MatrixXd xi = Eigen::MatrixXd::Random(4, 4);
  nn::ParamList ps;
  model_.collect(ps);
  nn::zero_grad(ps);
  model_.elbo_terms(x, c, xi, 1.0);
  check_param_gradients(
      [&] {
        auto t = model_.elbo_terms(x, c, xi, 0.0);
        return -(t.log_likelihood - t.kl).sum();
      },
      1e-3);
}

TEST_F(CvaeTest, ElboBelowImportanceSampledEvidence) {
  Eigen::RowVectorXd x = data_.meshes.row(0);
  Eigen::RowVector2d c = cond_.row(0);
  auto q = model_.encode_batch(x, c);
  Rng rng(8);
  std::vector<double> weights;
  double elbo = 0.0;
  const int n = 1000;
  for (int k = 0; k < n; ++k) {
    Eigen::RowVectorXd xi = rng.normal_vector(4).transpose();
    auto t = model_.elbo_terms(x, c, xi, 0.0);
    elbo += (t.log_likelihood[0] - t.kl[0]) / n;
    Eigen::RowVectorXd z = q.mu_z + (0.5 * q.log_var_z.array()).exp().matrix().cwiseProduct(xi);
    auto d = model_.decode_batch(z, c);
    const double log_prior = -0.5 * z.squaredNorm() - 2.0 * std::log(2 * M_PI);
    const double log_q = -0.5 * xi.squaredNorm() - 0.5 * q.log_var_z.sum() - 2.0 * std::log(2 * M_PI);
    weights.push_back(MeshCvae::log_likelihood(x.transpose(), {d.mu.row(0).transpose(), d.sigma.row(0).transpose()}) +
                      log_prior - log_q);
  }
  EXPECT_LE(elbo, testing::log_mean_exp(weights));
}

}  // namespace
}  // namespace csm
