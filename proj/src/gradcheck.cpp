#include "pixpoint/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pixpoint {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Matrix>& inputs) {
  ag::Graph g;
  std::vector<ag::Var> leaves;
  for (const Matrix& m : inputs) leaves.push_back(g.constant(m));
  return build(g, leaves).scalar();
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build, std::vector<Matrix> inputs,
                                const std::vector<ag::Parameter*>& params, double h, double floor) {
  for (ag::Parameter* p : params) p->zero_grad();
  std::vector<Matrix> input_grads;
  {
    ag::Graph g;
    std::vector<ag::Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(g.input(m));
    ag::Var loss = build(g, leaves);
    g.backward(loss);
    for (const ag::Var& v : leaves) {
      const Matrix& val = v.value();
      // Leaves unused by the loss never receive a gradient slot.
      try {
        input_grads.push_back(g.grad(v));
      } catch (...) {
        input_grads.emplace_back(val.rows, val.cols);
      }
    }
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      const double orig = inputs[k].data[i];
      inputs[k].data[i] = orig + h;
      const double up = evaluate(build, inputs);
      inputs[k].data[i] = orig - h;
      const double down = evaluate(build, inputs);
      inputs[k].data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(input_grads[k].data[i], numeric, floor));
      ++result.entries;
    }
  }
  for (ag::Parameter* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + h;
      const double up = evaluate(build, inputs);
      p->value.data[i] = orig - h;
      const double down = evaluate(build, inputs);
      p->value.data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic.data[i], numeric, floor));
      ++result.entries;
    }
  }
  return result;
}

}  // namespace pixpoint
