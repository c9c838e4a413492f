#include <doctest.h>

#include "bsn/acceptance.hpp"
#include "bsn/modules.hpp"
#include "bsn/rng.hpp"

using namespace bsn;

namespace {

template <typename Scalar>
void fill(Tensor<Scalar>& t, Rng& rng) {
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
}

template <typename Scalar>
void fill_params(const ModuleSpec& m, ParameterStore<Scalar>& p, Rng& rng) {
  for (const auto& d : module_params(m)) fill(p.declare(param_name(m, d.name), d.shape).value, rng);
}

// straight loops: zero padding, cross-correlation, bias per output channel
TensorD naive_conv(const TensorD& x, const TensorD& w, const TensorD* b, int stride, int pad) {
  const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
  const int cout = w.shape[0], k = w.shape[2];
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  TensorD y({cout, ho, wo});
  for (int o = 0; o < cout; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = b ? b->data[o] : 0.0;
        for (int c = 0; c < cin; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += w.data[((o * cin + c) * k + ky) * k + kx] * x.data[(c * h + iy) * wd + ix];
            }
        y.data[(o * ho + oy) * wo + ox] = s;
      }
  return y;
}

TensorD run(const ModuleSpec& m, const TensorD& x, ParameterStore<double>& p) {
  Tape<double> tape;
  return tape.value(apply_module(m, tape.leaf(x), p, tape));
}

}  // namespace

TEST_CASE("modules: output shapes") {
  CHECK(*module_output_shape(ModuleSpec::dense(10, 5, "a"), {10}) == Shape{5});
  CHECK_FALSE(module_output_shape(ModuleSpec::dense(10, 5, "a"), {9}).has_value());
  CHECK(*module_output_shape(ModuleSpec::conv2d(3, 8, 3, 1, "a"), {3, 7, 7}) == Shape{8, 7, 7});
  CHECK(*module_output_shape(ModuleSpec::conv2d(3, 8, 3, 2, "a"), {3, 8, 8}) == Shape{8, 4, 4});
  CHECK(*module_output_shape(ModuleSpec::projection(3, 8, 2, "a"), {3, 8, 8}) == Shape{8, 4, 4});
  CHECK(*module_output_shape(ModuleSpec::downsample_conv(3, 8, 3, "a"), {3, 8, 8}) == Shape{8, 4, 4});
  CHECK(*module_output_shape(ModuleSpec::upsample_conv(3, 8, 3, 2, "a"), {3, 4, 4}) == Shape{8, 8, 8});
  CHECK(*module_output_shape(ModuleSpec::basic_block(4, 8, 2, "a"), {4, 8, 8}) == Shape{8, 4, 4});
  CHECK(*module_output_shape(ModuleSpec::classifier(4, 10, "a"), {4, 8, 8}) == Shape{10});
  CHECK(*module_output_shape(ModuleSpec::identity(), {4, 8, 8}) == Shape{4, 8, 8});
}

TEST_CASE("modules: parameter and mult-add counts") {
  const auto d = ModuleSpec::dense(10, 5, "a");
  CHECK(module_param_count(d) == 55);
  CHECK(module_mult_adds(d, {10}, {5}) == 50.0);
  const auto c = ModuleSpec::conv2d(16, 16, 3, 1, "a");
  CHECK(module_param_count(c) == 16 * 16 * 9 + 16);
  CHECK(module_mult_adds(c, {16, 32, 32}, {16, 32, 32}) == 32.0 * 32 * 16 * 16 * 9);
  const auto same = ModuleSpec::basic_block(16, 16, 1, "a");
  CHECK_FALSE(basic_block_has_projection(same));
  CHECK(module_param_count(same) == 2 * (16 * 16 * 9 + 16));
  const auto down = ModuleSpec::basic_block(16, 32, 2, "a");
  CHECK(basic_block_has_projection(down));
  CHECK(module_param_count(down) == (16 * 32 * 9 + 32) + (32 * 32 * 9 + 32) + (16 * 32 + 32));
  CHECK(module_mult_adds(down, {16, 32, 32}, {32, 16, 16}) == 256.0 * (16 * 32 * 9 + 32 * 32 * 9 + 16 * 32));
  CHECK(module_param_count(ModuleSpec::identity()) == 0);
}

TEST_CASE("modules: convolution matches a direct loop") {
  Rng rng(2);
  for (int stride : {1, 2}) {
    for (int k : {1, 3, 5}) {
      const auto m = ModuleSpec::conv2d(2, 3, k, stride, "c");
      ParameterStore<double> p;
      fill_params(m, p, rng);
      TensorD x({2, 7, 6});
      fill(x, rng);
      const TensorD y = run(m, x, p);
      const TensorD want = naive_conv(x, p.at("c/w").value, &p.at("c/b").value, stride, k / 2);
      REQUIRE(y.shape == want.shape);
      CHECK((y.data - want.data).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("modules: upsample conv convolves then repeats pixels") {
  Rng rng(3);
  const auto m = ModuleSpec::upsample_conv(2, 2, 3, 2, "u");
  ParameterStore<double> p;
  fill_params(m, p, rng);
  TensorD x({2, 3, 3});
  fill(x, rng);
  const TensorD y = run(m, x, p);
  const TensorD z = naive_conv(x, p.at("u/w").value, &p.at("u/b").value, 1, 1);
  REQUIRE(y.shape == Shape{2, 6, 6});
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 6; ++r)
      for (int q = 0; q < 6; ++q) CHECK(y.data[(c * 6 + r) * 6 + q] == doctest::Approx(z.data[(c * 3 + r / 2) * 3 + q / 2]).epsilon(1e-12));
}

TEST_CASE("modules: basic block with identity shortcut") {
  Rng rng(4);
  const auto m = ModuleSpec::basic_block(2, 2, 1, "b");
  ParameterStore<double> p;
  fill_params(m, p, rng);
  TensorD x({2, 4, 4});
  fill(x, rng);
  TensorD a = naive_conv(x, p.at("b/conv1.w").value, &p.at("b/conv1.b").value, 1, 1);
  a.data = a.data.cwiseMax(0.0);
  TensorD pre = naive_conv(a, p.at("b/conv2.w").value, &p.at("b/conv2.b").value, 1, 1);
  pre.data += x.data;
  const TensorD y = run(m, x, p);
  CHECK((y.data - pre.data.cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("modules: dense gradient by hand under squared error") {
  const auto m = ModuleSpec::dense(3, 2, "d");
  ParameterStore<double> p;
  p.declare("d/w", {2, 3}).value.data << 1, 2, 3, 4, 5, 6;
  p.declare("d/b", {2}).value.data << 0.5, -1;
  TensorD x({3}), t({2});
  x.data << 1, -1, 2;
  t.data << 0, 1;
  Tape<double> tape;
  const Var in = tape.leaf(x);
  const Var y = apply_module(m, in, p, tape);
  // y = [1-2+6+0.5, 4-5+12-1] = [5.5, 10]; r = y - t = [5.5, 9]
  CHECK(tape.value(y).data[0] == 5.5);
  CHECK(tape.value(y).data[1] == 10.0);
  TensorD r({2});
  r.data << 5.5, 9;
  backward(tape, r, p);
  Eigen::VectorXd dw(6);
  dw << 5.5, -5.5, 11, 9, -9, 18;
  CHECK(p.at("d/w").grad.data == dw);
  CHECK(p.at("d/b").grad.data == r.data);
  Eigen::VectorXd dx(3);
  dx << 5.5 * 1 + 9 * 4, 5.5 * 2 + 9 * 5, 5.5 * 3 + 9 * 6;
  CHECK(tape.grad(in)->data == dx);
}

TEST_CASE("modules: double-precision gradients against central differences") {
  const auto checks = module_gradient_checks(17);
  CHECK(checks.size() == 10);
  for (const auto& c : checks) {
    INFO(c.label);
    CHECK(c.max_rel_error < 1e-3);
  }
}

TEST_CASE("modules: float32 gradients against central differences") {
  // Analytic gradients in float32 vs a double-precision difference quotient on
  // the same (float-representable) weights; compared tensor-wise since single
  // entries near zero carry float rounding only.
  const std::vector<std::pair<ModuleSpec, Shape>> cases{
      {ModuleSpec::dense(5, 3, "m"), {5}},
      {ModuleSpec::conv2d(2, 3, 3, 1, "m"), {2, 5, 5}},
      {ModuleSpec::conv2d(2, 2, 3, 2, "m"), {2, 6, 6}},
      {ModuleSpec::projection(2, 3, 2, "m"), {2, 4, 4}},
      {ModuleSpec::downsample_conv(2, 3, 3, "m"), {2, 4, 4}},
      {ModuleSpec::upsample_conv(2, 2, 3, 2, "m"), {2, 3, 3}},
      {ModuleSpec::basic_block(2, 2, 1, "m"), {2, 4, 4}},
      {ModuleSpec::basic_block(2, 3, 2, "m"), {2, 4, 4}},
      {ModuleSpec::classifier(3, 4, "m"), {3, 2, 2}},
  };
  for (const auto& [m, shape] : cases) {
    INFO(module_kind_name(m.kind));
    Rng rng(21);
    ParameterStore<float> pf;
    fill_params(m, pf, rng);
    TensorF x(shape);
    fill(x, rng);
    const Shape out = *module_output_shape(m, shape);
    TensorF w(out);
    fill(w, rng);

    Tape<float> tape;
    const Var in = tape.leaf(x);
    const Var y = apply_module(m, in, pf, tape);
    backward(tape, w, pf);

    auto pd = pf.cast<double>();
    const TensorD xd = x.cast<double>(), wd = w.cast<double>();
    const auto objective = [&](const TensorD& xx) { return run(m, xx, pd).data.dot(wd.data); };
    constexpr double h = 1e-6;
    const auto normwise = [](const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
      return (a - n).norm() / (n.norm() + 1e-8);
    };

    Eigen::VectorXd num_x(xd.size());
    for (Eigen::Index i = 0; i < xd.size(); ++i) {
      TensorD up = xd, dn = xd;
      up[i] += h;
      dn[i] -= h;
      num_x[i] = (objective(up) - objective(dn)) / (2 * h);
    }
    CHECK(normwise(tape.grad(in)->data.cast<double>(), num_x) < 1e-3);

    for (auto& [name, slot] : pd.slots()) {
      Eigen::VectorXd num(slot.value.size());
      for (Eigen::Index i = 0; i < slot.value.size(); ++i) {
        const double keep = slot.value[i];
        slot.value[i] = keep + h;
        const double a = objective(xd);
        slot.value[i] = keep - h;
        const double b = objective(xd);
        slot.value[i] = keep;
        num[i] = (a - b) / (2 * h);
      }
      INFO(name);
      CHECK(normwise(pf.at(name).grad.data.cast<double>(), num) < 1e-3);
    }
    (void)y;
  }
}

TEST_CASE("modules: backward on an empty tape") {
  Tape<double> tape;
  ParameterStore<double> p;
  CHECK_THROWS_AS(backward(tape, TensorD({1}), p), Error);
}
