#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msync/params.hpp"

namespace msync {

// Inverse-square-root warm-up schedule:
//   lr(t) = d_model^(-1/2) * min(t^(-1/2), t * warmup^(-3/2))
struct NoamSchedule {
  Index d_model = 512;
  std::int64_t warmup = 6000;
  double factor = 1.0;

  double lr(std::int64_t t) const {
    const double dt = double(t);
    return factor * std::pow(double(d_model), -0.5) *
           std::min(std::pow(dt, -0.5), dt * std::pow(double(warmup), -1.5));
  }
};

// Adam over an explicit list of trainable parameters (staged schemes train
// a subset; everything else keeps its bytes). Learning rate comes either
// from a fixed value or from a NoamSchedule.
template <typename S>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<S>*> params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Parameter<S>* p : params_)
      state_[p->name] = Moments{Tensor<S>(p->value.shape()), Tensor<S>(p->value.shape())};
  }

  std::int64_t steps_taken() const { return t_; }

  // One update from the gradients accumulated in Parameter::grad; grads of
  // the trained subset are zeroed afterwards.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (Parameter<S>* p : params_) {
      Moments& mo = state_[p->name];
      auto g = p->grad.vec().array();
      auto m = mo.m.vec().array();
      auto v = mo.v.vec().array();
      m = S(beta1_) * m + S(1.0 - beta1_) * g;
      v = S(beta2_) * v + S(1.0 - beta2_) * g.square();
      p->value.vec().array() -=
          S(lr) * (m / S(bc1)) / ((v / S(bc2)).sqrt() + S(eps_));
      p->grad.set_zero();
    }
  }

  void step(const NoamSchedule& schedule) { step(schedule.lr(t_ + 1)); }

 private:
  struct Moments {
    Tensor<S> m, v;
  };

  std::vector<Parameter<S>*> params_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace msync
