#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "csm/mesh.hpp"
#include "csm/nn.hpp"
#include "csm/simplify.hpp"

namespace csm {

struct MeshCvaeConfig {
  int latent_dim = 32;
  int cheb_order = 10;
  double pool_factor = 2.0;
  /// Number of pooling steps; one ChebConv block per step in each direction.
  int levels = 3;
  std::vector<int> encoder_channels{32, 64, 128};
  std::vector<int> decoder_channels{128, 64, 32};
  /// Order of the extra output ChebConv on the 3 location channels.
  int output_order = 10;
  double sigma_floor = 1e-4;

  /// Throws kConfig on inconsistent values.
  void validate() const;
};

struct EncoderOutput {
  Eigen::VectorXd mu_z;
  Eigen::VectorXd log_var_z;
};

/// Parameters of the location-scale head, flattened as x0, y0, z0, x1, ...
struct LikelihoodParams {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

/// Conditional mesh VAE with a Gaussian location-scale output head.
///
/// The conditioning vector is [v-hat, b-hat]. Batched entry points take
/// one sample per row: meshes as B x 3|V| flattened vertices, conditions
/// as B x 2, latents as B x D.
class MeshCvae {
 public:
  MeshCvae(const SurfaceMesh& templ, MeshCvaeConfig config, std::uint64_t seed);

  const MeshCvaeConfig& config() const { return config_; }
  const SurfaceMesh& template_mesh() const { return template_; }
  const TopologyPtr& topology() const { return template_.topology_ptr(); }
  const SimplificationHierarchy& hierarchy() const { return hierarchy_; }
  int vertex_count() const { return template_.vertex_count(); }
  int latent_dim() const { return config_.latent_dim; }

  /// Inputs are whitened as (x - mean) / scale; outputs are mapped back.
  void set_shape_normalisation(const Eigen::VectorXd& mean_flat, double scale);
  const Eigen::VectorXd& shape_mean() const { return shape_mean_; }
  double shape_scale() const { return shape_scale_; }

  EncoderOutput encode(const SurfaceMesh& x, double v_hat, double b_hat) const;
  LikelihoodParams decode(const Eigen::VectorXd& z, double v_hat, double b_hat) const;

  SurfaceMesh reparam_forward(const Eigen::VectorXd& u, const LikelihoodParams& params) const;
  Eigen::VectorXd reparam_inverse(const SurfaceMesh& x, const LikelihoodParams& params) const;
  /// log|det du l_X| = sum log sigma.
  static double log_abs_det_jacobian(const LikelihoodParams& params);
  /// log p(x | params) by change of variables through the head.
  static double log_likelihood(const Eigen::VectorXd& x_flat, const LikelihoodParams& params);
  /// KL(q || N(0, I)) for a diagonal Gaussian.
  static double kl_divergence(const EncoderOutput& q);

  struct BatchEncoding {
    Eigen::MatrixXd mu_z;
    Eigen::MatrixXd log_var_z;
  };
  struct BatchDecoding {
    Eigen::MatrixXd mu;
    Eigen::MatrixXd sigma;
  };
  BatchEncoding encode_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond) const;
  BatchDecoding decode_batch(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond) const;

  struct ElboTerms {
    Eigen::VectorXd log_likelihood;
    Eigen::VectorXd kl;
    /// Decoded location for each sample, B x 3|V|.
    Eigen::MatrixXd mu;
  };
  /// Mesh part of the ELBO with one particle z = mu_z + exp(log_var / 2) * xi.
  /// With grad_weight != 0, accumulates d(-grad_weight * sum(log_lik - kl))/dparams.
  ElboTerms elbo_terms(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond, const Eigen::MatrixXd& xi,
                       double grad_weight);

  /// Vector-Jacobian products used by gradient checks.
  Eigen::MatrixXd decode_backward_z(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond,
                                    const Eigen::MatrixXd& grad_mu, const Eigen::MatrixXd& grad_sigma);
  void encode_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond, const Eigen::MatrixXd& grad_mu_z,
                       const Eigen::MatrixXd& grad_log_var_z);

  void collect(nn::ParamList& out);

 private:
  struct EncTrace;
  struct DecTrace;

  void check_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond) const;
  Eigen::MatrixXd encode_impl(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond, EncTrace* tr) const;
  void encode_grad(const EncTrace& tr, const Eigen::MatrixXd& grad_out);
  BatchDecoding decode_impl(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond, DecTrace* tr) const;
  Eigen::MatrixXd decode_grad(const DecTrace& tr, const Eigen::MatrixXd& grad_mu, const Eigen::MatrixXd& grad_sigma);

  MeshCvaeConfig config_;
  SurfaceMesh template_;
  SimplificationHierarchy hierarchy_;
  Eigen::VectorXd shape_mean_;
  double shape_scale_ = 1.0;

  std::vector<nn::ChebConv> enc_conv_;
  nn::Dense enc_dense_;
  nn::Dense dec_dense_;
  std::vector<nn::ChebConv> dec_conv_;
  nn::ChebConv head_;
  nn::ChebConv out_conv_;
};

}  // namespace csm
