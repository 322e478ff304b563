#include "pixpoint/optim.hpp"

#include <cmath>

#include "pixpoint/error.hpp"

namespace pixpoint::optim {

void AdamW::step(const std::vector<ParamGroup>& groups, double base_lr) {
  for (const ParamGroup& group : groups) {
    const double lr = base_lr * group.lr_scale;
    for (Parameter* p : group.params) {
      if (!p->grad.same_shape(p->value)) p->zero_grad();
      Moments& st = state_[p->name];
      if (!st.m.same_shape(p->value)) {
        st.m = Matrix(p->value.rows, p->value.cols);
        st.v = Matrix(p->value.rows, p->value.cols);
        st.steps = 0;
      }
      ++st.steps;
      const double t = static_cast<double>(st.steps);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
      const double decay = p->decay ? (1.0 - lr * cfg_.weight_decay) : 1.0;
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        const double g = p->grad.data[i];
        double& m = st.m.data[i];
        double& v = st.v.data[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        double& w = p->value.data[i];
        w *= decay;
        w -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data) s += g * g;
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  require(std::isfinite(norm), ErrorCode::kNumerical, "clip_global_norm: non-finite gradient");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.data) g *= factor;
  }
  return norm;
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace pixpoint::optim
