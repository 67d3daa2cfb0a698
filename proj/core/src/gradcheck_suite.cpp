#include "tkvseg/gradcheck_suite.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>

#include "tkvseg/gradcheck.hpp"
#include "tkvseg/loss.hpp"
#include "tkvseg/random.hpp"

namespace tkvseg {

namespace {

using Rng = std::mt19937_64;
using T = Tensor<double>;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

T random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return T::uniform(std::move(shape), lo, hi, rng);
}

// Random projection so that every output element contributes to the scalar.
Var<double> project(Var<double> v, Rng& rng) {
  T w = random_tensor(rng, v.shape(), 0.5, 1.5);
  return sum(mul(v, v.graph().constant(std::move(w))));
}

Shape spatial5(Rng& rng, std::size_t b, std::size_t c, std::size_t lo, std::size_t hi) {
  return Shape{b, c, pick(rng, lo, hi), pick(rng, lo, hi), pick(rng, lo, hi)};
}

Var<double> faulty_relu(Var<double> x) {
  T out = x.value();
  for (double& v : out.data()) v = std::max(v, 0.0);
  // Wrong on purpose: passes the gradient through negative inputs as well.
  return x.graph().record(std::move(out), {x.id()},
                          [](const T& g, std::span<T* const> in) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i];
                          });
}

class Suite {
 public:
  explicit Suite(const GradcheckOptions& o) : opt_(o) {}

  // `make(rng)` returns (function, point) for one random instance.
  template <typename Make>
  void check(const std::string& name, Make&& make) {
    GradcheckEntry e;
    e.name = name;
    Rng rng(mix_seed(opt_.seed, fnv1a(name)));
    for (std::size_t s = 0; s < opt_.shapes_per_check; ++s) {
      auto [f, point] = make(rng);
      e.max_error = std::max(e.max_error, gradcheck(f, point, opt_.step));
      ++e.shapes;
    }
    e.passed = e.max_error < opt_.tolerance;
    entries_.push_back(e);
  }

  std::vector<GradcheckEntry> take() { return std::move(entries_); }

 private:
  GradcheckOptions opt_;
  std::vector<GradcheckEntry> entries_;
};

using Instance = std::pair<ScalarFunction, T>;

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options) {
  Suite suite(options);
  const bool fault = options.inject_fault;

  auto conv_case = [](Rng& rng, int wrt) -> Instance {
    const std::size_t cin = pick(rng, 1, 2), cout = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
    const Padding pad = pick(rng, 0, 3) == 0 ? Padding::valid : Padding::same;
    Shape xs = spatial5(rng, pick(rng, 1, 2), cin, 3, 4);
    T x = random_tensor(rng, xs), w = random_tensor(rng, {cout, cin, k, k, k});
    T b = random_tensor(rng, {cout});
    auto rs = std::make_shared<Rng>(rng());
    T point = wrt == 0 ? x : wrt == 1 ? w : b;
    ScalarFunction f = [=](Graph<double>& g, Var<double> p) {
      Rng local = *rs;
      Var<double> vx = wrt == 0 ? p : g.constant(x);
      Var<double> vw = wrt == 1 ? p : g.constant(w);
      Var<double> vb = wrt == 2 ? p : g.constant(b);
      return project(conv3d(vx, vw, vb, pad), local);
    };
    return {f, point};
  };
  suite.check("conv3d.input", [&](Rng& r) { return conv_case(r, 0); });
  suite.check("conv3d.kernel", [&](Rng& r) { return conv_case(r, 1); });
  suite.check("conv3d.bias", [&](Rng& r) { return conv_case(r, 2); });

  suite.check("maxpool3d", [](Rng& rng) -> Instance {
    Shape s{pick(rng, 1, 2), pick(rng, 1, 2), 2 * pick(rng, 1, 2), 2 * pick(rng, 1, 2),
            2 * pick(rng, 1, 2)};
    // Distinct values spaced well beyond the step so the argmax cannot flip.
    const std::size_t n = checked_numel(s);
    std::vector<double> v(n);
    std::iota(v.begin(), v.end(), 0.0);
    for (double& e : v) e = 0.01 * e - 0.5;
    std::shuffle(v.begin(), v.end(), rng);
    auto rs = std::make_shared<Rng>(rng());
    ScalarFunction f = [=](Graph<double>&, Var<double> p) {
      Rng local = *rs;
      return project(maxpool3d(p), local);
    };
    return {f, T(s, std::move(v))};
  });

  auto upconv_case = [](Rng& rng, int wrt) -> Instance {
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    T x = random_tensor(rng, spatial5(rng, pick(rng, 1, 2), cin, 1, 2));
    T w = random_tensor(rng, {cin, cout, 2, 2, 2}), b = random_tensor(rng, {cout});
    auto rs = std::make_shared<Rng>(rng());
    T point = wrt == 0 ? x : wrt == 1 ? w : b;
    ScalarFunction f = [=](Graph<double>& g, Var<double> p) {
      Rng local = *rs;
      return project(upconv3d(wrt == 0 ? p : g.constant(x), wrt == 1 ? p : g.constant(w),
                              wrt == 2 ? p : g.constant(b)),
                     local);
    };
    return {f, point};
  };
  suite.check("upconv3d.input", [&](Rng& r) { return upconv_case(r, 0); });
  suite.check("upconv3d.kernel", [&](Rng& r) { return upconv_case(r, 1); });
  suite.check("upconv3d.bias", [&](Rng& r) { return upconv_case(r, 2); });

  auto bn_case = [](Rng& rng, int wrt) -> Instance {
    const std::size_t c = pick(rng, 1, 3);
    T x = random_tensor(rng, spatial5(rng, pick(rng, 1, 2), c, 2, 3));
    T gamma = random_tensor(rng, {c}, 0.5, 1.5), beta = random_tensor(rng, {c});
    auto rs = std::make_shared<Rng>(rng());
    T point = wrt == 0 ? x : wrt == 1 ? gamma : beta;
    ScalarFunction f = [=](Graph<double>& g, Var<double> p) {
      Rng local = *rs;
      BatchNormState<double> state(c);
      return project(batchnorm(wrt == 0 ? p : g.constant(x), wrt == 1 ? p : g.constant(gamma),
                               wrt == 2 ? p : g.constant(beta), Mode::train, state),
                     local);
    };
    return {f, point};
  };
  suite.check("batchnorm.input", [&](Rng& r) { return bn_case(r, 0); });
  suite.check("batchnorm.gamma", [&](Rng& r) { return bn_case(r, 1); });
  suite.check("batchnorm.beta", [&](Rng& r) { return bn_case(r, 2); });

  suite.check("relu", [fault](Rng& rng) -> Instance {
    Shape s = spatial5(rng, 1, pick(rng, 1, 2), 1, 3);
    T x = random_tensor(rng, s, 0.1, 1.0);
    std::bernoulli_distribution neg(0.5);
    for (double& v : x.data()) {
      if (neg(rng)) v = -v;
    }
    auto rs = std::make_shared<Rng>(rng());
    ScalarFunction f = [=](Graph<double>&, Var<double> p) {
      Rng local = *rs;
      return project(fault ? faulty_relu(p) : relu(p), local);
    };
    return {f, x};
  });

  suite.check("softmax_channel", [](Rng& rng) -> Instance {
    T x = random_tensor(rng, spatial5(rng, pick(rng, 1, 2), pick(rng, 2, 4), 1, 3), -2.0, 2.0);
    auto rs = std::make_shared<Rng>(rng());
    ScalarFunction f = [=](Graph<double>&, Var<double> p) {
      Rng local = *rs;
      return project(softmax_channel(p), local);
    };
    return {f, x};
  });

  auto concat_case = [](Rng& rng, bool first) -> Instance {
    Shape sa = spatial5(rng, pick(rng, 1, 2), pick(rng, 1, 3), 1, 3);
    Shape sb = sa;
    sb[1] = pick(rng, 1, 3);
    T a = random_tensor(rng, sa), b = random_tensor(rng, sb);
    auto rs = std::make_shared<Rng>(rng());
    ScalarFunction f = [=](Graph<double>& g, Var<double> p) {
      Rng local = *rs;
      return project(first ? concat_channel(p, g.constant(b)) : concat_channel(g.constant(a), p),
                     local);
    };
    return {f, first ? a : b};
  };
  suite.check("concat_channel.a", [&](Rng& r) { return concat_case(r, true); });
  suite.check("concat_channel.b", [&](Rng& r) { return concat_case(r, false); });

  auto random_labels = [](Rng& rng, const Shape& logits_shape) {
    const std::size_t c = logits_shape[1];
    LabelTensor labels(Shape{logits_shape[0], logits_shape[2], logits_shape[3], logits_shape[4]},
                       std::uint8_t{0});
    for (auto& v : labels.data()) v = static_cast<std::uint8_t>(pick(rng, 0, c - 1));
    return labels;
  };

  suite.check("dice_loss", [&](Rng& rng) -> Instance {
    Shape s = spatial5(rng, pick(rng, 1, 2), pick(rng, 2, 3), 1, 3);
    T logits = random_tensor(rng, s, -2.0, 2.0);
    const T target = one_hot<double>(random_labels(rng, s), s[1]);
    const double smoothing = pick(rng, 0, 1) ? 0.0 : 1.0;
    ScalarFunction f = [=](Graph<double>&, Var<double> p) {
      return dice_loss(softmax_channel(p), target, smoothing);
    };
    return {f, logits};
  });

  suite.check("bootstrap_ce_loss", [&](Rng& rng) -> Instance {
    Shape s = spatial5(rng, pick(rng, 1, 2), pick(rng, 2, 3), 2, 3);
    T logits = random_tensor(rng, s, -2.0, 2.0);
    const LabelTensor labels = random_labels(rng, s);
    const double fraction = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    ScalarFunction f = [=](Graph<double>&, Var<double> p) {
      return bootstrap_ce_loss(softmax_channel(p), labels, fraction);
    };
    return {f, logits};
  });

  return suite.take();
}

}  // namespace tkvseg
