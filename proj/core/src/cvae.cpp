#include "csm/cvae.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "csm/error.hpp"
#include "csm/rng.hpp"
#include "csm/spectral.hpp"

namespace csm {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Sample-major node features (B n) x F <-> one flattened sample per row.
Eigen::MatrixXd flatten_nodes(const Eigen::MatrixXd& nodes, Eigen::Index batch) {
  const Eigen::Index n = nodes.rows() / batch;
  const Eigen::Index f = nodes.cols();
  Eigen::MatrixXd out(batch, n * f);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < f; ++c) out(b, i * f + c) = nodes(b * n + i, c);
  return out;
}

Eigen::MatrixXd unflatten_nodes(const Eigen::MatrixXd& flat, Eigen::Index features) {
  const Eigen::Index batch = flat.rows();
  const Eigen::Index n = flat.cols() / features;
  Eigen::MatrixXd out(batch * n, features);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < features; ++c) out(b * n + i, c) = flat(b, i * features + c);
  return out;
}

std::shared_ptr<const SparseMatrix> scaled(const TopologyPtr& t) {
  return std::make_shared<const SparseMatrix>(scale_laplacian(*t));
}

Eigen::MatrixXd as_row(const Eigen::VectorXd& v) { return v.transpose(); }

}  // namespace

void MeshCvaeConfig::validate() const {
  if (latent_dim < 1) fail(ErrorCode::kConfig, "latent_dim must be >= 1");
  if (cheb_order < 1) fail(ErrorCode::kConfig, "cheb_order must be >= 1");
  if (output_order < 1) fail(ErrorCode::kConfig, "output_order must be >= 1");
  if (!(pool_factor > 1.0)) fail(ErrorCode::kConfig, "pool_factor must be > 1");
  if (levels < 1) fail(ErrorCode::kConfig, "levels must be >= 1");
  if (static_cast<int>(encoder_channels.size()) != levels || static_cast<int>(decoder_channels.size()) != levels)
    fail(ErrorCode::kConfig, "channel schedules must have one entry per level (" + std::to_string(levels) + ")");
  for (int c : encoder_channels)
    if (c < 1) fail(ErrorCode::kConfig, "encoder channels must be positive");
  for (int c : decoder_channels)
    if (c < 1) fail(ErrorCode::kConfig, "decoder channels must be positive");
  if (!(sigma_floor > 0.0)) fail(ErrorCode::kConfig, "sigma_floor must be positive");
}

struct MeshCvae::EncTrace {
  Eigen::Index batch = 0;
  std::vector<nn::ChebConv::Trace> conv;
  std::vector<Eigen::MatrixXd> act;
  Eigen::MatrixXd dense_in;
};

struct MeshCvae::DecTrace {
  Eigen::Index batch = 0;
  Eigen::MatrixXd dense_in;
  std::vector<nn::ChebConv::Trace> conv;
  std::vector<Eigen::MatrixXd> act;
  nn::ChebConv::Trace head;
  nn::ChebConv::Trace out;
  Eigen::MatrixXd sigma_raw;
};

MeshCvae::MeshCvae(const SurfaceMesh& templ, MeshCvaeConfig config, std::uint64_t seed)
    : config_(std::move(config)), template_(templ) {
  config_.validate();
  hierarchy_ = build_hierarchy(template_, std::vector<double>(config_.levels, config_.pool_factor));
  shape_mean_ = template_.flattened();

  Rng rng(derive_seed(seed, 0x6d657368));
  const int levels = config_.levels;
  const auto& enc = config_.encoder_channels;
  const auto& dec = config_.decoder_channels;
  const auto group = nn::ParamGroup::kMesh;

  int in = 3;
  for (int l = 0; l < levels; ++l) {
    enc_conv_.emplace_back(scaled(hierarchy_.levels[l].fine), in, enc[l], config_.cheb_order,
                           "enc.conv" + std::to_string(l), group, rng);
    in = enc[l];
  }
  const int coarsest = hierarchy_.levels.back().coarse->vertex_count();
  enc_dense_ = nn::Dense(coarsest * enc.back() + 2, 2 * config_.latent_dim, "enc.dense", group, rng);
  dec_dense_ = nn::Dense(config_.latent_dim + 2, coarsest * dec[0], "dec.dense", group, rng);
  in = dec[0];
  for (int j = 0; j < levels; ++j) {
    const int out = dec[std::min(j + 1, levels - 1)];
    dec_conv_.emplace_back(scaled(hierarchy_.levels[levels - 1 - j].fine), in, out, config_.cheb_order,
                           "dec.conv" + std::to_string(j), group, rng);
    in = out;
  }
  auto fine = scaled(template_.topology_ptr());
  head_ = nn::ChebConv(fine, in, 6, config_.cheb_order, "dec.head", group, rng);
  out_conv_ = nn::ChebConv(fine, 3, 3, config_.output_order, "dec.out", group, rng);
}

void MeshCvae::set_shape_normalisation(const Eigen::VectorXd& mean_flat, double scale) {
  if (mean_flat.size() != 3 * vertex_count())
    fail(ErrorCode::kDimensionMismatch, "shape mean has wrong length");
  if (!(scale > 0.0) || !std::isfinite(scale)) fail(ErrorCode::kDomain, "shape scale must be positive");
  shape_mean_ = mean_flat;
  shape_scale_ = scale;
}

void MeshCvae::check_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond) const {
  if (x.cols() != 3 * vertex_count())
    fail(ErrorCode::kTopologyMismatch, "mesh batch has " + std::to_string(x.cols() / 3) + " vertices, model expects " +
                                           std::to_string(vertex_count()));
  if (cond.rows() != x.rows() || cond.cols() != 2) fail(ErrorCode::kDimensionMismatch, "conditioning must be B x 2");
}

Eigen::MatrixXd MeshCvae::encode_impl(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond, EncTrace* tr) const {
  const Eigen::Index batch = x.rows();
  Eigen::MatrixXd whitened = (x.rowwise() - shape_mean_.transpose()) / shape_scale_;
  Eigen::MatrixXd h = unflatten_nodes(whitened, 3);
  if (tr) {
    tr->batch = batch;
    tr->conv.assign(config_.levels, {});
    tr->act.assign(config_.levels, {});
  }
  for (int l = 0; l < config_.levels; ++l) {
    Eigen::MatrixXd a = nn::elu(enc_conv_[l].forward(h, tr ? &tr->conv[l] : nullptr));
    h = simplify_transfer(a, hierarchy_.levels[l]);
    if (tr) tr->act[l] = std::move(a);
  }
  Eigen::MatrixXd flat = flatten_nodes(h, batch);
  Eigen::MatrixXd dense_in(batch, flat.cols() + 2);
  dense_in << flat, cond;
  Eigen::MatrixXd out = enc_dense_.forward(dense_in);
  if (tr) tr->dense_in = std::move(dense_in);
  return out;
}

void MeshCvae::encode_grad(const EncTrace& tr, const Eigen::MatrixXd& grad_out) {
  Eigen::MatrixXd g = enc_dense_.backward(tr.dense_in, grad_out);
  g = unflatten_nodes(g.leftCols(g.cols() - 2), config_.encoder_channels.back());
  for (int l = config_.levels - 1; l >= 0; --l) {
    g = simplify_transfer_adjoint(g, hierarchy_.levels[l]);
    g = nn::elu_backward(tr.act[l], g);
    g = enc_conv_[l].backward(tr.conv[l], g, l > 0);
  }
}

MeshCvae::BatchDecoding MeshCvae::decode_impl(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond,
                                              DecTrace* tr) const {
  const Eigen::Index batch = z.rows();
  if (z.cols() != config_.latent_dim) fail(ErrorCode::kDimensionMismatch, "latent has wrong dimension");
  if (cond.rows() != batch || cond.cols() != 2) fail(ErrorCode::kDimensionMismatch, "conditioning must be B x 2");
  Eigen::MatrixXd dense_in(batch, z.cols() + 2);
  dense_in << z, cond;
  Eigen::MatrixXd h = unflatten_nodes(dec_dense_.forward(dense_in), config_.decoder_channels[0]);
  if (tr) {
    tr->batch = batch;
    tr->dense_in = dense_in;
    tr->conv.assign(config_.levels, {});
    tr->act.assign(config_.levels, {});
  }
  for (int j = 0; j < config_.levels; ++j) {
    h = unsimplify(h, hierarchy_.levels[config_.levels - 1 - j]);
    h = nn::elu(dec_conv_[j].forward(h, tr ? &tr->conv[j] : nullptr));
    if (tr) tr->act[j] = h;
  }
  Eigen::MatrixXd o = head_.forward(h, tr ? &tr->head : nullptr);
  Eigen::MatrixXd mu_out = out_conv_.forward(o.leftCols(3), tr ? &tr->out : nullptr);
  Eigen::MatrixXd sraw = o.rightCols(3);

  BatchDecoding d;
  d.mu = (flatten_nodes(mu_out, batch) * shape_scale_).rowwise() + shape_mean_.transpose();
  Eigen::MatrixXd sraw_flat = flatten_nodes(sraw, batch);
  d.sigma = sraw_flat.unaryExpr([&](double r) { return shape_scale_ * nn::softplus(r) + config_.sigma_floor; });
  if (tr) tr->sigma_raw = std::move(sraw_flat);
  return d;
}

Eigen::MatrixXd MeshCvae::decode_grad(const DecTrace& tr, const Eigen::MatrixXd& grad_mu,
                                      const Eigen::MatrixXd& grad_sigma) {
  Eigen::MatrixXd g_mu_out = unflatten_nodes(grad_mu * shape_scale_, 3);
  Eigen::MatrixXd g_sraw_flat =
      grad_sigma.cwiseProduct(tr.sigma_raw.unaryExpr([&](double r) { return shape_scale_ * nn::sigmoid(r); }));
  Eigen::MatrixXd g_o(g_mu_out.rows(), 6);
  g_o.leftCols(3) = out_conv_.backward(tr.out, g_mu_out, true);
  g_o.rightCols(3) = unflatten_nodes(g_sraw_flat, 3);
  Eigen::MatrixXd g = head_.backward(tr.head, g_o, true);
  for (int j = config_.levels - 1; j >= 0; --j) {
    g = nn::elu_backward(tr.act[j], g);
    g = dec_conv_[j].backward(tr.conv[j], g, true);
    g = unsimplify_adjoint(g, hierarchy_.levels[config_.levels - 1 - j]);
  }
  Eigen::MatrixXd g_flat = flatten_nodes(g, tr.batch);
  Eigen::MatrixXd g_in = dec_dense_.backward(tr.dense_in, g_flat);
  return g_in.leftCols(config_.latent_dim);
}

MeshCvae::BatchEncoding MeshCvae::encode_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond) const {
  check_batch(x, cond);
  Eigen::MatrixXd out = encode_impl(x, cond, nullptr);
  return {out.leftCols(config_.latent_dim), out.rightCols(config_.latent_dim)};
}

MeshCvae::BatchDecoding MeshCvae::decode_batch(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond) const {
  return decode_impl(z, cond, nullptr);
}

EncoderOutput MeshCvae::encode(const SurfaceMesh& x, double v_hat, double b_hat) const {
  if (!(x.topology() == template_.topology()))
    fail(ErrorCode::kTopologyMismatch, "mesh topology does not match the model template");
  Eigen::MatrixXd cond(1, 2);
  cond << v_hat, b_hat;
  auto e = encode_batch(as_row(x.flattened()), cond);
  return {e.mu_z.row(0).transpose(), e.log_var_z.row(0).transpose()};
}

LikelihoodParams MeshCvae::decode(const Eigen::VectorXd& z, double v_hat, double b_hat) const {
  Eigen::MatrixXd cond(1, 2);
  cond << v_hat, b_hat;
  auto d = decode_batch(as_row(z), cond);
  return {d.mu.row(0).transpose(), d.sigma.row(0).transpose()};
}

SurfaceMesh MeshCvae::reparam_forward(const Eigen::VectorXd& u, const LikelihoodParams& p) const {
  if (u.size() != p.mu.size() || p.sigma.size() != p.mu.size() || u.size() != 3 * vertex_count())
    fail(ErrorCode::kDimensionMismatch, "reparam_forward: inconsistent shapes");
  if (p.sigma.minCoeff() < config_.sigma_floor) fail(ErrorCode::kDomain, "sigma below floor");
  Eigen::VectorXd x = u.cwiseProduct(p.sigma) + p.mu;
  return SurfaceMesh::from_flat(topology(), x);
}

Eigen::VectorXd MeshCvae::reparam_inverse(const SurfaceMesh& x, const LikelihoodParams& p) const {
  if (!(x.topology() == template_.topology()))
    fail(ErrorCode::kTopologyMismatch, "mesh topology does not match the model template");
  if (p.sigma.size() != p.mu.size() || p.mu.size() != 3 * vertex_count())
    fail(ErrorCode::kDimensionMismatch, "reparam_inverse: inconsistent shapes");
  if (p.sigma.minCoeff() < config_.sigma_floor) fail(ErrorCode::kDomain, "sigma below floor");
  return (x.flattened() - p.mu).cwiseQuotient(p.sigma);
}

double MeshCvae::log_abs_det_jacobian(const LikelihoodParams& p) { return p.sigma.array().log().sum(); }

double MeshCvae::log_likelihood(const Eigen::VectorXd& x_flat, const LikelihoodParams& p) {
  Eigen::ArrayXd u = (x_flat - p.mu).array() / p.sigma.array();
  return (-0.5 * u.square() - kHalfLog2Pi).sum() - log_abs_det_jacobian(p);
}

double MeshCvae::kl_divergence(const EncoderOutput& q) {
  Eigen::ArrayXd lv = q.log_var_z.array();
  return 0.5 * (q.mu_z.array().square() + lv.exp() - lv - 1.0).sum();
}

MeshCvae::ElboTerms MeshCvae::elbo_terms(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond,
                                         const Eigen::MatrixXd& xi, double grad_weight) {
  check_batch(x, cond);
  const Eigen::Index batch = x.rows();
  const int dim = config_.latent_dim;
  if (xi.rows() != batch || xi.cols() != dim) fail(ErrorCode::kDimensionMismatch, "particle noise must be B x D");
  const bool grad = grad_weight != 0.0;

  EncTrace etr;
  Eigen::MatrixXd enc = encode_impl(x, cond, grad ? &etr : nullptr);
  Eigen::MatrixXd mu_z = enc.leftCols(dim);
  Eigen::MatrixXd lv = enc.rightCols(dim);
  Eigen::MatrixXd half_std = (0.5 * lv.array()).exp().matrix();
  Eigen::MatrixXd z = mu_z + half_std.cwiseProduct(xi);

  DecTrace dtr;
  BatchDecoding d = decode_impl(z, cond, grad ? &dtr : nullptr);

  ElboTerms t;
  Eigen::ArrayXXd u = (x - d.mu).array() / d.sigma.array();
  t.log_likelihood = (-0.5 * u.square() - kHalfLog2Pi - d.sigma.array().log()).rowwise().sum().matrix();
  t.kl = 0.5 * (mu_z.array().square() + lv.array().exp() - lv.array() - 1.0).rowwise().sum().matrix();
  if (grad) {
    Eigen::MatrixXd g_mu = (-grad_weight * u / d.sigma.array()).matrix();
    Eigen::MatrixXd g_sigma = (-grad_weight * (u.square() - 1.0) / d.sigma.array()).matrix();
    Eigen::MatrixXd g_z = decode_grad(dtr, g_mu, g_sigma);
    Eigen::MatrixXd g_enc(batch, 2 * dim);
    g_enc.leftCols(dim) = g_z + grad_weight * mu_z;
    g_enc.rightCols(dim) = (g_z.array() * 0.5 * half_std.array() * xi.array() +
                            grad_weight * 0.5 * (lv.array().exp() - 1.0))
                               .matrix();
    encode_grad(etr, g_enc);
  }
  t.mu = std::move(d.mu);
  return t;
}

Eigen::MatrixXd MeshCvae::decode_backward_z(const Eigen::MatrixXd& z, const Eigen::MatrixXd& cond,
                                            const Eigen::MatrixXd& grad_mu, const Eigen::MatrixXd& grad_sigma) {
  DecTrace tr;
  decode_impl(z, cond, &tr);
  return decode_grad(tr, grad_mu, grad_sigma);
}

void MeshCvae::encode_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond,
                               const Eigen::MatrixXd& grad_mu_z, const Eigen::MatrixXd& grad_log_var_z) {
  check_batch(x, cond);
  EncTrace tr;
  encode_impl(x, cond, &tr);
  Eigen::MatrixXd g(x.rows(), 2 * config_.latent_dim);
  g << grad_mu_z, grad_log_var_z;
  encode_grad(tr, g);
}

void MeshCvae::collect(nn::ParamList& out) {
  for (auto& c : enc_conv_) c.collect(out);
  enc_dense_.collect(out);
  dec_dense_.collect(out);
  for (auto& c : dec_conv_) c.collect(out);
  head_.collect(out);
  out_conv_.collect(out);
}

}  // namespace csm
