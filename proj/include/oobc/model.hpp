#pragma once

#include <cstdint>
#include <string>

#include "oobc/problem.hpp"

namespace oobc {

enum class ModelVariant { linear, mlp };

// Multiplier predictor f_theta(b, c, tbar) -> lambda >= 0. Parameters live in
// a single flat vector so optimizers can treat every variant uniformly.
//
// linear: lambda = softplus(W * phi(v)), phi(v) = [b/bscale; c/cscale; tbar; 1]
// mlp:    two tanh hidden layers of `hidden` units, softplus output head.
struct ModelParams {
  ModelVariant variant = ModelVariant::mlp;
  int out_dim = 1;   // M for multiplier models, d for direct policies
  int dim_b = 1;     // leading inputs treated as remaining budget
  int dim_c = 1;
  int hidden = 10;
  double bscale = 1.0;  // N * x_max by default
  double cscale = 1.0;  // 95th percentile of training contexts
  Vec theta;

  int input_dim() const { return dim_b + dim_c + 1; }
  int feature_dim() const { return input_dim() + 1; }  // identity features + bias
  int param_count() const;
};

struct ModelGradients {
  Mat dtheta;  // out_dim x param_count
  Mat db;      // out_dim x dim_b (w.r.t. the unnormalized budget input)
};

ModelParams init_model(ModelVariant variant, int out_dim, int dim_b, int dim_c,
                       std::uint64_t seed, double bscale, double cscale);

Vec model_forward(const ModelParams& params, const Vec& b, const Vec& c,
                  double tbar);

// Raw pre-softplus output; direct policies apply their own head.
Vec model_forward_raw(const ModelParams& params, const Vec& b, const Vec& c,
                      double tbar);

ModelGradients model_backward(const ModelParams& params, const Vec& b,
                              const Vec& c, double tbar);
ModelGradients model_backward_raw(const ModelParams& params, const Vec& b,
                                  const Vec& c, double tbar);

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

double softplus(double z);
double softplus_prime(double z);

}  // namespace oobc
