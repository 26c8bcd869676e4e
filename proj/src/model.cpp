#include "oobc/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace oobc {

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

double softplus_prime(double z) { return 1.0 / (1.0 + std::exp(-z)); }

int ModelParams::param_count() const {
  if (variant == ModelVariant::linear) return out_dim * feature_dim();
  const int in = input_dim();
  return hidden * in + hidden + hidden * hidden + hidden + out_dim * hidden + out_dim;
}

namespace {

Vec normalized_input(const ModelParams& p, const Vec& b, const Vec& c, double tbar) {
  Vec v(p.input_dim());
  v.head(p.dim_b) = b / p.bscale;
  v.segment(p.dim_b, p.dim_c) = c / p.cscale;
  v[p.input_dim() - 1] = tbar;
  return v;
}

struct MlpViews {
  Eigen::Map<const Mat> w1, w2, w3;
  Eigen::Map<const Vec> b1, b2, b3;
};

MlpViews mlp_views(const ModelParams& p) {
  const int in = p.input_dim(), h = p.hidden, out = p.out_dim;
  const double* d = p.theta.data();
  Eigen::Map<const Mat> w1(d, h, in);
  Eigen::Map<const Vec> b1(d + h * in, h);
  Eigen::Map<const Mat> w2(d + h * in + h, h, h);
  Eigen::Map<const Vec> b2(d + h * in + h + h * h, h);
  Eigen::Map<const Mat> w3(d + h * in + h + h * h + h, out, h);
  Eigen::Map<const Vec> b3(d + h * in + h + h * h + h + out * h, out);
  return {w1, w2, w3, b1, b2, b3};
}

struct MlpCache {
  Vec v, a1, a2, raw;
};

MlpCache mlp_forward_cache(const ModelParams& p, const Vec& b, const Vec& c,
                           double tbar) {
  MlpCache cc;
  cc.v = normalized_input(p, b, c, tbar);
  const MlpViews m = mlp_views(p);
  cc.a1 = (m.w1 * cc.v + m.b1).array().tanh();
  cc.a2 = (m.w2 * cc.a1 + m.b2).array().tanh();
  cc.raw = m.w3 * cc.a2 + m.b3;
  return cc;
}

}  // namespace

ModelParams init_model(ModelVariant variant, int out_dim, int dim_b, int dim_c,
                       std::uint64_t seed, double bscale, double cscale) {
  ModelParams p;
  p.variant = variant;
  p.out_dim = out_dim;
  p.dim_b = dim_b;
  p.dim_c = dim_c;
  p.bscale = bscale;
  p.cscale = cscale;
  p.theta = Vec::Zero(p.param_count());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  auto fill = [&](double* ptr, int count, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < count; ++i) ptr[i] = uni(rng) * scale;
  };
  if (variant == ModelVariant::linear) {
    fill(p.theta.data(), p.theta.size(), p.feature_dim());
  } else {
    const int in = p.input_dim(), h = p.hidden;
    double* d = p.theta.data();
    fill(d, h * in + h, in);
    fill(d + h * in + h, h * h + h, h);
    fill(d + h * in + h + h * h + h, out_dim * h + out_dim, h);
  }
  return p;
}

Vec model_forward_raw(const ModelParams& p, const Vec& b, const Vec& c,
                      double tbar) {
  if (tbar < -1e-12 || tbar > 1.0 + 1e-12)
    throw std::invalid_argument("model: tbar outside [0,1]");
  if (p.variant == ModelVariant::linear) {
    const Vec v = normalized_input(p, b, c, tbar);
    Vec phi(p.feature_dim());
    phi.head(p.input_dim()) = v;
    phi[p.feature_dim() - 1] = 1.0;
    Eigen::Map<const Mat> w(p.theta.data(), p.out_dim, p.feature_dim());
    return w * phi;
  }
  return mlp_forward_cache(p, b, c, tbar).raw;
}

Vec model_forward(const ModelParams& p, const Vec& b, const Vec& c, double tbar) {
  Vec raw = model_forward_raw(p, b, c, tbar);
  for (int i = 0; i < raw.size(); ++i) raw[i] = softplus(raw[i]);
  return raw;
}

namespace {

// Reverse pass for one output coordinate with seed weight on the raw output.
void mlp_backward_one(const ModelParams& p, const MlpCache& cc, int out_idx,
                      double seed, Eigen::Ref<Vec> dtheta_row,
                      Eigen::Ref<Vec> db_row) {
  const MlpViews m = mlp_views(p);
  const int in = p.input_dim(), h = p.hidden, out = p.out_dim;

  Vec dz3 = Vec::Zero(out);
  dz3[out_idx] = seed;
  const Vec da2 = m.w3.transpose() * dz3;
  const Vec dz2 = da2.array() * (1.0 - cc.a2.array().square());
  const Vec da1 = m.w2.transpose() * dz2;
  const Vec dz1 = da1.array() * (1.0 - cc.a1.array().square());

  double* d = dtheta_row.data();
  Eigen::Map<Mat>(d, h, in) = dz1 * cc.v.transpose();
  Eigen::Map<Vec>(d + h * in, h) = dz1;
  Eigen::Map<Mat>(d + h * in + h, h, h) = dz2 * cc.a1.transpose();
  Eigen::Map<Vec>(d + h * in + h + h * h, h) = dz2;
  Eigen::Map<Mat>(d + h * in + h + h * h + h, out, h) = dz3 * cc.a2.transpose();
  Eigen::Map<Vec>(d + h * in + h + h * h + h + out * h, out) = dz3;

  const Vec dv = m.w1.transpose() * dz1;
  db_row = dv.head(p.dim_b) / p.bscale;
}

ModelGradients backward_impl(const ModelParams& p, const Vec& b, const Vec& c,
                             double tbar, bool through_softplus) {
  ModelGradients out;
  out.dtheta = Mat::Zero(p.out_dim, p.param_count());
  out.db = Mat::Zero(p.out_dim, p.dim_b);

  if (p.variant == ModelVariant::linear) {
    const Vec v = normalized_input(p, b, c, tbar);
    Vec phi(p.feature_dim());
    phi.head(p.input_dim()) = v;
    phi[p.feature_dim() - 1] = 1.0;
    Eigen::Map<const Mat> w(p.theta.data(), p.out_dim, p.feature_dim());
    const Vec raw = w * phi;
    for (int i = 0; i < p.out_dim; ++i) {
      const double seed = through_softplus ? softplus_prime(raw[i]) : 1.0;
      // theta layout is column-major over (out_dim x feature_dim)
      for (int q = 0; q < p.feature_dim(); ++q)
        out.dtheta(i, q * p.out_dim + i) = seed * phi[q];
      out.db.row(i) = (seed / p.bscale) * w.block(i, 0, 1, p.dim_b);
    }
    return out;
  }

  const MlpCache cc = mlp_forward_cache(p, b, c, tbar);
  Vec dtheta_row(p.param_count());
  Vec db_row(p.dim_b);
  for (int i = 0; i < p.out_dim; ++i) {
    const double seed = through_softplus ? softplus_prime(cc.raw[i]) : 1.0;
    mlp_backward_one(p, cc, i, seed, dtheta_row, db_row);
    out.dtheta.row(i) = dtheta_row.transpose();
    out.db.row(i) = db_row.transpose();
  }
  return out;
}

}  // namespace

ModelGradients model_backward(const ModelParams& p, const Vec& b, const Vec& c,
                              double tbar) {
  return backward_impl(p, b, c, tbar, true);
}

ModelGradients model_backward_raw(const ModelParams& p, const Vec& b,
                                  const Vec& c, double tbar) {
  return backward_impl(p, b, c, tbar, false);
}

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.precision(17);
  out << "OOBC-CKPT v1\n";
  out << "variant " << (p.variant == ModelVariant::linear ? "linear" : "mlp") << "\n";
  out << "dims " << p.out_dim << " " << p.dim_b << " " << p.dim_c << " "
      << p.hidden << "\n";
  out << "scales " << p.bscale << " " << p.cscale << "\n";
  out << "params " << p.theta.size() << "\n";
  for (int i = 0; i < p.theta.size(); ++i) out << p.theta[i] << "\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic, version, key, variant;
  in >> magic >> version;
  if (magic != "OOBC-CKPT" || version != "v1")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  ModelParams p;
  in >> key >> variant;
  if (key != "variant" || (variant != "linear" && variant != "mlp"))
    throw std::runtime_error("checkpoint: bad variant field");
  p.variant = variant == "linear" ? ModelVariant::linear : ModelVariant::mlp;
  in >> key >> p.out_dim >> p.dim_b >> p.dim_c >> p.hidden;
  if (key != "dims") throw std::runtime_error("checkpoint: bad dims field");
  in >> key >> p.bscale >> p.cscale;
  if (key != "scales") throw std::runtime_error("checkpoint: bad scales field");
  long count = 0;
  in >> key >> count;
  if (key != "params" || count != p.param_count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  p.theta = Vec(count);
  for (long i = 0; i < count; ++i) in >> p.theta[i];
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return p;
}

}  // namespace oobc
