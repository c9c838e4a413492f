#pragma once

#include <string>

#include "bsn/graph.hpp"
#include "bsn/tape.hpp"

namespace bsn {

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  int cin = 0, h = 0, w = 0;
  int cout = 0, kernel = 1, stride = 1, pad = 0;
  int ho = 0, wo = 0;

  static ConvGeometry make(const Shape& in, int cout, int kernel, int stride, int pad) {
    ConvGeometry g{in[0], in[1], in[2], cout, kernel, stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - kernel) / stride + 1;
    g.wo = (g.w + 2 * pad - kernel) / stride + 1;
    return g;
  }
};

// [C, H, W] -> [C*k*k, Ho*Wo] patch matrix.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g) {
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(Eigen::Index(g.cin) * g.kernel * g.kernel, Eigen::Index(g.ho) * g.wo);
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Eigen::Index row = (Eigen::Index(c) * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            cols(row, Eigen::Index(oy) * g.wo + ox) = x.data[(Eigen::Index(c) * g.h + iy) * g.w + ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Tensor<Scalar>& dx, const ConvGeometry& g) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Eigen::Index row = (Eigen::Index(c) * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            dx.data[(Eigen::Index(c) * g.h + iy) * g.w + ix] += cols(row, Eigen::Index(oy) * g.wo + ox);
          }
        }
      }
    }
  }
}

template <typename Scalar>
auto weight_matrix(const Tensor<Scalar>& w) {
  return Eigen::Map<const RowMatrix<Scalar>>(w.data.data(), w.shape[0], w.size() / w.shape[0]);
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* b,
                            const ConvGeometry& g) {
  Tensor<Scalar> y({g.cout, g.ho, g.wo});
  auto out = y.as_matrix();
  out.noalias() = weight_matrix(w) * im2col(x, g);
  if (b) out.colwise() += b->data;
  return y;
}

/// Accumulates weight/bias gradients and, when dx is non-null, input gradients.
template <typename Scalar>
void conv_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& gy, const ConvGeometry& g,
                   Tensor<Scalar>* dx, Tensor<Scalar>& dw, Tensor<Scalar>* db) {
  const auto gout = gy.as_matrix();
  const RowMatrix<Scalar> cols = im2col(x, g);
  Eigen::Map<RowMatrix<Scalar>>(dw.data.data(), g.cout, dw.size() / g.cout).noalias() += gout * cols.transpose();
  if (db) db->data += gout.rowwise().sum();
  if (dx) {
    const RowMatrix<Scalar> dcols = weight_matrix(w).transpose() * gout;
    col2im_add(dcols, *dx, g);
  }
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape, x.data.cwiseMax(Scalar(0)));
}

/// Zeroes gradient entries where the pre-activation was not positive.
template <typename Scalar>
Tensor<Scalar> relu_grad(const Tensor<Scalar>& pre, const Tensor<Scalar>& g) {
  return Tensor<Scalar>(g.shape, (pre.data.array() > Scalar(0)).select(g.data, Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& x, int f) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor<Scalar> y({c, h * f, w * f});
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < h * f; ++yy)
      for (int xx = 0; xx < w * f; ++xx)
        y.data[(Eigen::Index(ch) * h * f + yy) * w * f + xx] = x.data[(Eigen::Index(ch) * h + yy / f) * w + xx / f];
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest_grad(const Tensor<Scalar>& gy, int f) {
  const int c = gy.shape[0], h = gy.shape[1] / f, w = gy.shape[2] / f;
  Tensor<Scalar> gx({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < h * f; ++yy)
      for (int xx = 0; xx < w * f; ++xx)
        gx.data[(Eigen::Index(ch) * h + yy / f) * w + xx / f] += gy.data[(Eigen::Index(ch) * h * f + yy) * w * f + xx];
  return gx;
}

template <typename Scalar>
const Tensor<Scalar>* bias_of(const ModuleSpec& m, ParameterStore<Scalar>& params, const std::string& prefix) {
  return m.bias ? &params.at(param_name(m, prefix + "b")).value : nullptr;
}

template <typename Scalar>
Tensor<Scalar>* bias_grad_of(const ModuleSpec& m, ParameterStore<Scalar>& params, const std::string& prefix) {
  return m.bias ? &params.at(param_name(m, prefix + "b")).grad : nullptr;
}

}  // namespace detail

/// Applies f_{k,i} to a recorded value and records the operation.
/// Throws ShapeMismatch if the input does not fit the module.
template <typename Scalar>
Var apply_module(const ModuleSpec& m, Var input, ParameterStore<Scalar>& params, Tape<Scalar>& tape) {
  using T = Tensor<Scalar>;
  using detail::ConvGeometry;
  const T& x = tape.value(input);
  const auto out_shape = module_output_shape(m, x.shape);
  if (!out_shape) {
    throw Error(Errc::ShapeMismatch, std::string(module_kind_name(m.kind)) + " cannot take input " + shape_string(x.shape));
  }

  switch (m.kind) {
    case ModuleKind::Identity:
      return tape.record(x, [input](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>&) { t.accumulate_grad(input, g); });

    case ModuleKind::Dense: {
      const auto& w = params.at(param_name(m, "w")).value;
      T y(*out_shape);
      y.data.noalias() = detail::weight_matrix(w) * x.data;
      if (m.bias) y.data += params.at(param_name(m, "b")).value.data;
      return tape.record(std::move(y), [m, input](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>& p) {
        const T& xin = t.value(input);
        auto& ws = p.at(param_name(m, "w"));
        Eigen::Map<detail::RowMatrix<Scalar>>(ws.grad.data.data(), m.out_channels, m.in_channels).noalias() +=
            g.data * xin.data.transpose();
        if (m.bias) p.at(param_name(m, "b")).grad.data += g.data;
        T gx(xin.shape);
        gx.data.noalias() = detail::weight_matrix(ws.value).transpose() * g.data;
        t.accumulate_grad(input, gx);
      });
    }

    case ModuleKind::Classifier: {
      const auto& w = params.at(param_name(m, "w")).value;
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pooled = x.as_matrix().rowwise().mean();
      T y(*out_shape);
      y.data.noalias() = detail::weight_matrix(w) * pooled;
      if (m.bias) y.data += params.at(param_name(m, "b")).value.data;
      return tape.record(std::move(y), [m, input](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>& p) {
        const T& xin = t.value(input);
        const auto xm = xin.as_matrix();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pooled_in = xm.rowwise().mean();
        auto& ws = p.at(param_name(m, "w"));
        Eigen::Map<detail::RowMatrix<Scalar>>(ws.grad.data.data(), m.out_channels, m.in_channels).noalias() +=
            g.data * pooled_in.transpose();
        if (m.bias) p.at(param_name(m, "b")).grad.data += g.data;
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gp = detail::weight_matrix(ws.value).transpose() * g.data;
        T gx(xin.shape);
        gx.as_matrix().colwise() = gp / static_cast<Scalar>(xm.cols());
        t.accumulate_grad(input, gx);
      });
    }

    case ModuleKind::Conv2d:
    case ModuleKind::DownsampleConv:
    case ModuleKind::Projection: {
      const int k = m.kind == ModuleKind::Projection ? 1 : m.kernel;
      const auto geo = ConvGeometry::make(x.shape, m.out_channels, k, m.stride, k / 2);
      T y = detail::conv_forward(x, params.at(param_name(m, "w")).value, detail::bias_of(m, params, ""), geo);
      return tape.record(std::move(y), [m, input, geo](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>& p) {
        const T& xin = t.value(input);
        auto& ws = p.at(param_name(m, "w"));
        T gx(xin.shape);
        detail::conv_backward(xin, ws.value, g, geo, &gx, ws.grad, detail::bias_grad_of(m, p, ""));
        t.accumulate_grad(input, gx);
      });
    }

    case ModuleKind::UpsampleConv: {
      const auto geo = ConvGeometry::make(x.shape, m.out_channels, m.kernel, 1, m.kernel / 2);
      T z = detail::conv_forward(x, params.at(param_name(m, "w")).value, detail::bias_of(m, params, ""), geo);
      return tape.record(detail::upsample_nearest(z, m.factor),
                         [m, input, geo](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>& p) {
                           const T& xin = t.value(input);
                           auto& ws = p.at(param_name(m, "w"));
                           const T gz = detail::upsample_nearest_grad(g, m.factor);
                           T gx(xin.shape);
                           detail::conv_backward(xin, ws.value, gz, geo, &gx, ws.grad, detail::bias_grad_of(m, p, ""));
                           t.accumulate_grad(input, gx);
                         });
    }

    case ModuleKind::BasicBlock: {
      const auto geo1 = ConvGeometry::make(x.shape, m.out_channels, m.kernel, m.stride, m.kernel / 2);
      const auto geo2 = ConvGeometry::make({m.out_channels, geo1.ho, geo1.wo}, m.out_channels, m.kernel, 1, m.kernel / 2);
      const auto geo_proj = ConvGeometry::make(x.shape, m.out_channels, 1, m.stride, 0);
      const bool project = basic_block_has_projection(m);

      T a1 = detail::conv_forward(x, params.at(param_name(m, "conv1.w")).value, detail::bias_of(m, params, "conv1."), geo1);
      T r1 = detail::relu(a1);
      T pre = detail::conv_forward(r1, params.at(param_name(m, "conv2.w")).value, detail::bias_of(m, params, "conv2."), geo2);
      if (project) {
        pre.data += detail::conv_forward(x, params.at(param_name(m, "proj.w")).value, detail::bias_of(m, params, "proj."), geo_proj).data;
      } else {
        pre.data += x.data;
      }
      T y = detail::relu(pre);
      return tape.record(std::move(y), [m, input, geo1, geo2, geo_proj, project, a1 = std::move(a1), r1 = std::move(r1),
                                        pre = std::move(pre)](const T& g, Tape<Scalar>& t, ParameterStore<Scalar>& p) {
        const T& xin = t.value(input);
        const T g_pre = detail::relu_grad(pre, g);
        auto& w2 = p.at(param_name(m, "conv2.w"));
        T g_r1(r1.shape);
        detail::conv_backward(r1, w2.value, g_pre, geo2, &g_r1, w2.grad, detail::bias_grad_of(m, p, "conv2."));
        const T g_a1 = detail::relu_grad(a1, g_r1);
        auto& w1 = p.at(param_name(m, "conv1.w"));
        T gx(xin.shape);
        detail::conv_backward(xin, w1.value, g_a1, geo1, &gx, w1.grad, detail::bias_grad_of(m, p, "conv1."));
        if (project) {
          auto& wp = p.at(param_name(m, "proj.w"));
          detail::conv_backward(xin, wp.value, g_pre, geo_proj, &gx, wp.grad, detail::bias_grad_of(m, p, "proj."));
        } else {
          gx.data += g_pre.data;
        }
        t.accumulate_grad(input, gx);
      });
    }
  }
  throw Error(Errc::InvalidGraph, "unknown module kind");
}

/// Convenience overload: records x as a leaf first.
template <typename Scalar>
Tensor<Scalar> apply_module(const ModuleSpec& m, const Tensor<Scalar>& x, ParameterStore<Scalar>& params, Tape<Scalar>& tape) {
  return tape.value(apply_module(m, tape.leaf(x), params, tape));
}

}  // namespace bsn
