#include "linattn/grad/optim.hpp"

#include <cmath>

namespace linattn::grad {

double cosine_lr(long step, long total_steps, double lr0, double lr_min) {
  if (total_steps <= 0) return lr0;
  double x = std::min(1.0, std::max(0.0, static_cast<double>(step) / total_steps));
  return lr_min + (lr0 - lr_min) * 0.5 * (1.0 + std::cos(M_PI * x));
}

OptimState OptimState::init(const ParamSet& params, OptimHyper hyper,
                            std::set<std::string> exempt) {
  OptimState s;
  s.hyper = hyper;
  s.decay_exempt = std::move(exempt);
  for (const auto& [name, t] : params) {
    s.m.emplace_back(name, Tensor(t.shape));
    s.v.emplace_back(name, Tensor(t.shape));
  }
  return s;
}

void adamw_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
                OptimState& state) {
  const OptimHyper& h = state.hyper;
  const double lr = cosine_lr(state.step, h.total_steps, h.lr0, h.lr_min);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    auto it = grads.find(name);
    if (it == grads.end()) throw Error("adamw_step: missing gradient for '" + name + "'");
    const Tensor& g = it->second;
    if (g.numel() != p.numel()) throw ShapeError("adamw_step: gradient shape mismatch");
    Tensor& m = state.m[k].second;
    Tensor& v = state.v[k].second;
    const bool decay = h.weight_decay != 0.0 && !state.decay_exempt.count(name);
    for (long i = 0; i < p.numel(); ++i) {
      double gi = g.data[i];
      m.data[i] = h.beta1 * m.data[i] + (1.0 - h.beta1) * gi;
      v.data[i] = h.beta2 * v.data[i] + (1.0 - h.beta2) * gi * gi;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
      if (decay) p.data[i] -= lr * h.weight_decay * p.data[i];
    }
  }
}

}  // namespace linattn::grad
