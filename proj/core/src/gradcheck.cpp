#include "spikereg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spikereg {

std::vector<double> analytic_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor probe = x.detach();
  probe.require_grad();
  Tape tape;
  Tensor y = f(probe);
  if (y.size() != 1) {
    throw std::invalid_argument("analytic_grad: f must return a scalar, got shape " +
                                shape_str(y.shape()));
  }
  backward(y);
  auto g = probe.grad();
  return {g.begin(), g.end()};
}

std::vector<double> central_differences(const std::function<Tensor(const Tensor&)>& f,
                                        const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("central_differences: step must be positive");
  Tensor probe = x.detach();  // untracked: evaluations record nothing
  std::vector<double> fd(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe).item();
    probe[i] = saved - h;
    const double down = f(probe).item();
    probe[i] = saved;
    fd[i] = (up - down) / (2.0 * h);
  }
  return fd;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h) {
  const std::vector<double> analytic = analytic_grad(f, x);
  const std::vector<double> fd = central_differences(f, x, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
  }
  return worst;
}

}  // namespace spikereg
