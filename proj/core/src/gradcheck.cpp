#include "tkvseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tkvseg {

namespace {

constexpr ParamId kPointId = 0;

double evaluate(const ScalarFunction& f, const Tensor<double>& point) {
  Graph<double> graph;
  Var<double> out = f(graph, graph.parameter(kPointId, point));
  if (out.value().numel() != 1) throw ContractError("gradcheck: function is not scalar");
  return out.value()[0];
}

}  // namespace

double gradcheck(const ScalarFunction& f, const Tensor<double>& point, double step) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Tensor<double> analytic;
  {
    Graph<double> graph;
    Var<double> out = f(graph, graph.parameter(kPointId, point));
    if (!std::isfinite(out.value().item())) return kInf;
    analytic = graph.backward(out).at(kPointId);
  }

  double worst = 0;
  Tensor<double> probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(f, probe);
    probe[i] = point[i] - step;
    const double down = evaluate(f, probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    if (!std::isfinite(numeric) || !std::isfinite(a)) return kInf;
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace tkvseg
