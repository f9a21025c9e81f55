#include "rrt/layers.hpp"

#include <cmath>

namespace rrt {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Eigen::Index> per_sample_shape(const Tensor& batch) {
  if (batch.rank() < 2) throw shape_error("batched input must have a leading batch dim");
  return {batch.shape().begin() + 1, batch.shape().end()};
}

Eigen::Index per_sample_numel(const Tensor& batch) {
  return batch.numel() / batch.dim(0);
}

void require_param_count(const LayerSpec& spec, TensorPtrs params, std::size_t n) {
  if (params.size() != n)
    throw shape_error(to_string(spec.kind) + ": expected " + std::to_string(n) +
                      " parameter tensors, got " + std::to_string(params.size()));
}

struct ConvDims {
  Eigen::Index batch, in_c, in_h, in_w, out_c, out_h, out_w, patch;
};

ConvDims conv_dims(const LayerSpec& spec, const Tensor& input) {
  const auto in_shape = per_sample_shape(input);
  const auto out_shape = spec.output_shape(in_shape);
  return {input.dim(0), in_shape[0], in_shape[1], in_shape[2],
          out_shape[0], out_shape[1], out_shape[2],
          static_cast<Eigen::Index>(spec.in_channels) * spec.kernel_h * spec.kernel_w};
}

// Patch matrix of shape (B*OH*OW, C*KH*KW); padded positions stay zero.
RowMatrix im2col(const LayerSpec& spec, const Tensor& input, const ConvDims& d) {
  RowMatrix col = RowMatrix::Zero(d.batch * d.out_h * d.out_w, d.patch);
  const double* x = input.data();
  for (Eigen::Index b = 0; b < d.batch; ++b) {
    for (Eigen::Index oh = 0; oh < d.out_h; ++oh) {
      for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
        const Eigen::Index row = (b * d.out_h + oh) * d.out_w + ow;
        double* dst = col.data() + row * d.patch;
        for (Eigen::Index c = 0; c < d.in_c; ++c) {
          for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh) {
            const Eigen::Index ih = oh * spec.stride + kh - spec.pad;
            if (ih < 0 || ih >= d.in_h) {
              dst += spec.kernel_w;
              continue;
            }
            const double* src = x + ((b * d.in_c + c) * d.in_h + ih) * d.in_w;
            for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw) {
              const Eigen::Index iw = ow * spec.stride + kw - spec.pad;
              *dst++ = (iw < 0 || iw >= d.in_w) ? 0.0 : src[iw];
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im_accumulate(const LayerSpec& spec, const RowMatrix& col, const ConvDims& d,
                       Tensor& grad_input) {
  double* gx = grad_input.data();
  for (Eigen::Index b = 0; b < d.batch; ++b) {
    for (Eigen::Index oh = 0; oh < d.out_h; ++oh) {
      for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
        const Eigen::Index row = (b * d.out_h + oh) * d.out_w + ow;
        const double* src = col.data() + row * d.patch;
        for (Eigen::Index c = 0; c < d.in_c; ++c) {
          for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh) {
            const Eigen::Index ih = oh * spec.stride + kh - spec.pad;
            if (ih < 0 || ih >= d.in_h) {
              src += spec.kernel_w;
              continue;
            }
            double* dst = gx + ((b * d.in_c + c) * d.in_h + ih) * d.in_w;
            for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw) {
              const Eigen::Index iw = ow * spec.stride + kw - spec.pad;
              if (iw >= 0 && iw < d.in_w) dst[iw] += *src;
              ++src;
            }
          }
        }
      }
    }
  }
}

struct PoolDims {
  Eigen::Index batch, channels, in_h, in_w, out_h, out_w;
};

PoolDims pool_dims(const LayerSpec& spec, const Tensor& input) {
  const auto in_shape = per_sample_shape(input);
  const auto out_shape = spec.output_shape(in_shape);
  return {input.dim(0), in_shape[0], in_shape[1], in_shape[2], out_shape[1], out_shape[2]};
}

// Threshold view for an activation layer: scalar broadcast or one value per
// per-sample element. Positivity is deliberately not enforced here: fault
// injection corrupts threshold words, and the corrupted model must still
// evaluate (a non-positive lambda simply clips everything).
struct LambdaView {
  const double* values = nullptr;
  bool scalar = true;
  double at(Eigen::Index i) const { return scalar ? values[0] : values[i]; }
};

LambdaView lambda_view(const LayerSpec& spec, TensorPtrs params, Eigen::Index width) {
  if (params.empty() || params[0] == nullptr || params[0]->numel() == 0)
    throw value_error(to_string(spec.act) + " activation requires bound thresholds");
  const Tensor& lam = *params[0];
  if (lam.numel() != 1 && lam.numel() != width)
    throw shape_error("threshold tensor must hold 1 or " + std::to_string(width) +
                      " values, got " + std::to_string(lam.numel()));
  return {lam.data(), lam.numel() == 1};
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::activation: return "activation";
  }
  throw value_error("unknown layer kind");
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "maxpool2d") return LayerKind::maxpool2d;
  if (name == "avgpool2d") return LayerKind::avgpool2d;
  if (name == "flatten") return LayerKind::flatten;
  if (name == "activation") return LayerKind::activation;
  throw io_error("unsupported layer kind: " + name);
}

LayerSpec LayerSpec::Dense(int in, int out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::Conv2d(int in_c, int out_c, int kh, int kw, int stride, int pad) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::MaxPool2d(int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::AvgPool2d(int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::avgpool2d;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::Flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::Activation(ActivationKind kind) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.act = kind;
  return s;
}

std::vector<Eigen::Index> LayerSpec::output_shape(const std::vector<Eigen::Index>& in) const {
  auto fail = [&](const std::string& why) {
    throw shape_error(to_string(kind) + ": " + why + " for input " +
                      Tensor::shape_string(in));
  };
  switch (kind) {
    case LayerKind::dense: {
      if (in.size() != 1 || in[0] != in_features) fail("expected " + std::to_string(in_features) + " features");
      return {out_features};
    }
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != in_channels) fail("expected " + std::to_string(in_channels) + " channels");
      const Eigen::Index oh = (in[1] + 2 * pad - kernel_h) / stride + 1;
      const Eigen::Index ow = (in[2] + 2 * pad - kernel_w) / stride + 1;
      if (in[1] + 2 * pad < kernel_h || in[2] + 2 * pad < kernel_w) fail("kernel larger than input");
      return {out_channels, oh, ow};
    }
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: {
      if (in.size() != 3) fail("expected (C,H,W) input");
      if (in[1] < kernel_h || in[2] < kernel_w) fail("window larger than input");
      return {in[0], (in[1] - kernel_h) / stride + 1, (in[2] - kernel_w) / stride + 1};
    }
    case LayerKind::flatten: {
      Eigen::Index n = 1;
      for (Eigen::Index d : in) n *= d;
      return {n};
    }
    case LayerKind::activation:
      return in;
  }
  throw value_error("unknown layer kind");
}

int LayerSpec::param_tensor_count() const {
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::conv2d: return 2;
    default: return 0;
  }
}

Tensor layer_forward(const LayerSpec& spec, TensorPtrs params, const Tensor& input) {
  const Eigen::Index batch = input.rank() >= 1 ? input.dim(0) : 0;
  const auto out_sample = spec.output_shape(per_sample_shape(input));
  std::vector<Eigen::Index> out_shape{batch};
  out_shape.insert(out_shape.end(), out_sample.begin(), out_sample.end());

  switch (spec.kind) {
    case LayerKind::dense: {
      require_param_count(spec, params, 2);
      const Tensor& weight = *params[0];
      const Tensor& bias = *params[1];
      if (weight.numel() != Eigen::Index(spec.out_features) * spec.in_features ||
          bias.numel() != spec.out_features)
        throw shape_error("dense: parameter tensors do not match layer spec");
      Tensor out(out_shape);
      out.matrix(batch, spec.out_features).noalias() =
          input.matrix(batch, spec.in_features) *
          weight.matrix(spec.out_features, spec.in_features).transpose();
      out.matrix(batch, spec.out_features).rowwise() +=
          Eigen::Map<const Eigen::RowVectorXd>(bias.data(), spec.out_features);
      return out;
    }
    case LayerKind::conv2d: {
      require_param_count(spec, params, 2);
      const ConvDims d = conv_dims(spec, input);
      const Tensor& weight = *params[0];
      const Tensor& bias = *params[1];
      if (weight.numel() != d.out_c * d.patch || bias.numel() != d.out_c)
        throw shape_error("conv2d: parameter tensors do not match layer spec");
      const RowMatrix col = im2col(spec, input, d);
      RowMatrix y2d(col.rows(), d.out_c);  // rows ordered (b, oh, ow)
      y2d.noalias() = col * weight.matrix(d.out_c, d.patch).transpose();
      y2d.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), d.out_c);
      Tensor out(out_shape);
      const Eigen::Index hw = d.out_h * d.out_w;
      for (Eigen::Index b = 0; b < d.batch; ++b) {
        Eigen::Map<RowMatrix>(out.data() + b * d.out_c * hw, d.out_c, hw) =
            y2d.middleRows(b * hw, hw).transpose();
      }
      return out;
    }
    case LayerKind::maxpool2d: {
      require_param_count(spec, params, 0);
      const PoolDims d = pool_dims(spec, input);
      Tensor out(out_shape);
      const double* x = input.data();
      double* y = out.data();
      for (Eigen::Index bc = 0; bc < d.batch * d.channels; ++bc) {
        const double* plane = x + bc * d.in_h * d.in_w;
        for (Eigen::Index oh = 0; oh < d.out_h; ++oh) {
          for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
            double best = plane[(oh * spec.stride) * d.in_w + ow * spec.stride];
            for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh)
              for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw) {
                const double v = plane[(oh * spec.stride + kh) * d.in_w + ow * spec.stride + kw];
                if (v > best) best = v;
              }
            y[(bc * d.out_h + oh) * d.out_w + ow] = best;
          }
        }
      }
      return out;
    }
    case LayerKind::avgpool2d: {
      require_param_count(spec, params, 0);
      const PoolDims d = pool_dims(spec, input);
      Tensor out(out_shape);
      const double window = static_cast<double>(spec.kernel_h) * spec.kernel_w;
      const double* x = input.data();
      double* y = out.data();
      for (Eigen::Index bc = 0; bc < d.batch * d.channels; ++bc) {
        const double* plane = x + bc * d.in_h * d.in_w;
        for (Eigen::Index oh = 0; oh < d.out_h; ++oh) {
          for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
            double sum = 0.0;
            for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh)
              for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw)
                sum += plane[(oh * spec.stride + kh) * d.in_w + ow * spec.stride + kw];
            y[(bc * d.out_h + oh) * d.out_w + ow] = sum / window;
          }
        }
      }
      return out;
    }
    case LayerKind::flatten: {
      require_param_count(spec, params, 0);
      return input.reshaped(out_shape);
    }
    case LayerKind::activation: {
      Tensor out(out_shape);
      const Eigen::Index width = per_sample_numel(input);
      if (spec.act == ActivationKind::relu) {
        out.array() = input.array().max(0.0);
        return out;
      }
      const LambdaView lam = lambda_view(spec, params, width);
      const double* x = input.data();
      double* y = out.data();
      if (spec.act == ActivationKind::clipped_relu) {
        for (Eigen::Index b = 0; b < batch; ++b)
          for (Eigen::Index i = 0; i < width; ++i) {
            const double v = x[b * width + i];
            y[b * width + i] = (v >= 0.0 && v <= lam.at(i)) ? v : 0.0;
          }
        return out;
      }
      // hyrelu / fitact_neuronwise: same smooth form, different granularity.
      if (!(spec.slope_k > 0.0)) throw value_error("activation: slope must be positive");
      const double k = spec.slope_k;
      for (Eigen::Index b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < width; ++i) {
          const double v = x[b * width + i];
          y[b * width + i] = v <= 0.0 ? 0.0 : v * stable_sigmoid(k * (lam.at(i) - v));
        }
      return out;
    }
  }
  throw value_error("unknown layer kind");
}

LayerGrads layer_backward(const LayerSpec& spec, TensorPtrs params, const Tensor& input,
                          const Tensor& grad_out) {
  const Eigen::Index batch = input.dim(0);
  {
    const auto expected = spec.output_shape(per_sample_shape(input));
    std::vector<Eigen::Index> full{batch};
    full.insert(full.end(), expected.begin(), expected.end());
    if (grad_out.shape() != full)
      throw shape_error("layer_backward: grad_out shape " +
                        Tensor::shape_string(grad_out.shape()) + " does not match output " +
                        Tensor::shape_string(full));
  }

  switch (spec.kind) {
    case LayerKind::dense: {
      require_param_count(spec, params, 2);
      const Tensor& weight = *params[0];
      LayerGrads g;
      g.input = Tensor(input.shape());
      g.params.emplace_back(std::vector<Eigen::Index>{spec.out_features, spec.in_features});
      g.params.emplace_back(std::vector<Eigen::Index>{spec.out_features});
      auto G = grad_out.matrix(batch, spec.out_features);
      g.input.matrix(batch, spec.in_features).noalias() =
          G * weight.matrix(spec.out_features, spec.in_features);
      g.params[0].matrix(spec.out_features, spec.in_features).noalias() =
          G.transpose() * input.matrix(batch, spec.in_features);
      Eigen::Map<Eigen::RowVectorXd>(g.params[1].data(), spec.out_features) =
          G.colwise().sum();
      return g;
    }
    case LayerKind::conv2d: {
      require_param_count(spec, params, 2);
      const ConvDims d = conv_dims(spec, input);
      const Tensor& weight = *params[0];
      const Eigen::Index hw = d.out_h * d.out_w;
      RowMatrix g2d(d.batch * hw, d.out_c);  // rows ordered (b, oh, ow)
      for (Eigen::Index b = 0; b < d.batch; ++b) {
        g2d.middleRows(b * hw, hw) =
            Eigen::Map<const RowMatrix>(grad_out.data() + b * d.out_c * hw, d.out_c, hw)
                .transpose();
      }
      const RowMatrix col = im2col(spec, input, d);
      LayerGrads g;
      g.params.emplace_back(weight.shape());
      g.params.emplace_back(std::vector<Eigen::Index>{d.out_c});
      g.params[0].matrix(d.out_c, d.patch).noalias() = g2d.transpose() * col;
      Eigen::Map<Eigen::RowVectorXd>(g.params[1].data(), d.out_c) = g2d.colwise().sum();
      RowMatrix dcol(col.rows(), col.cols());
      dcol.noalias() = g2d * weight.matrix(d.out_c, d.patch);
      g.input = Tensor(input.shape());
      col2im_accumulate(spec, dcol, d, g.input);
      return g;
    }
    case LayerKind::maxpool2d: {
      const PoolDims d = pool_dims(spec, input);
      LayerGrads g;
      g.input = Tensor(input.shape());
      const double* x = input.data();
      const double* go = grad_out.data();
      double* gi = g.input.data();
      for (Eigen::Index bc = 0; bc < d.batch * d.channels; ++bc) {
        const double* plane = x + bc * d.in_h * d.in_w;
        double* gplane = gi + bc * d.in_h * d.in_w;
        for (Eigen::Index oh = 0; oh < d.out_h; ++oh) {
          for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
            // First maximum wins, matching the forward scan order.
            Eigen::Index best_idx = (oh * spec.stride) * d.in_w + ow * spec.stride;
            double best = plane[best_idx];
            for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh)
              for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw) {
                const Eigen::Index idx =
                    (oh * spec.stride + kh) * d.in_w + ow * spec.stride + kw;
                if (plane[idx] > best) {
                  best = plane[idx];
                  best_idx = idx;
                }
              }
            gplane[best_idx] += go[(bc * d.out_h + oh) * d.out_w + ow];
          }
        }
      }
      return g;
    }
    case LayerKind::avgpool2d: {
      const PoolDims d = pool_dims(spec, input);
      LayerGrads g;
      g.input = Tensor(input.shape());
      const double window = static_cast<double>(spec.kernel_h) * spec.kernel_w;
      const double* go = grad_out.data();
      double* gi = g.input.data();
      for (Eigen::Index bc = 0; bc < d.batch * d.channels; ++bc) {
        double* gplane = gi + bc * d.in_h * d.in_w;
        for (Eigen::Index oh = 0; oh < d.out_h; ++oh)
          for (Eigen::Index ow = 0; ow < d.out_w; ++ow) {
            const double share = go[(bc * d.out_h + oh) * d.out_w + ow] / window;
            for (Eigen::Index kh = 0; kh < spec.kernel_h; ++kh)
              for (Eigen::Index kw = 0; kw < spec.kernel_w; ++kw)
                gplane[(oh * spec.stride + kh) * d.in_w + ow * spec.stride + kw] += share;
          }
      }
      return g;
    }
    case LayerKind::flatten: {
      LayerGrads g;
      g.input = grad_out.reshaped(input.shape());
      return g;
    }
    case LayerKind::activation: {
      LayerGrads g;
      g.input = Tensor(input.shape());
      const Eigen::Index width = per_sample_numel(input);
      const double* x = input.data();
      const double* go = grad_out.data();
      double* gi = g.input.data();
      if (spec.act == ActivationKind::relu) {
        for (Eigen::Index i = 0; i < input.numel(); ++i) gi[i] = x[i] > 0.0 ? go[i] : 0.0;
        return g;
      }
      const LambdaView lam = lambda_view(spec, params, width);
      Tensor dlam(params[0]->shape());
      if (spec.act == ActivationKind::clipped_relu) {
        // Hard clip: the pass-band derivative is 1; lambda gets no gradient.
        for (Eigen::Index b = 0; b < batch; ++b)
          for (Eigen::Index i = 0; i < width; ++i) {
            const Eigen::Index at = b * width + i;
            gi[at] = (x[at] > 0.0 && x[at] <= lam.at(i)) ? go[at] : 0.0;
          }
        g.params.push_back(std::move(dlam));
        return g;
      }
      if (!(spec.slope_k > 0.0)) throw value_error("activation: slope must be positive");
      const double k = spec.slope_k;
      double* dl = dlam.data();
      for (Eigen::Index b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < width; ++i) {
          const Eigen::Index at = b * width + i;
          const double v = x[at];
          if (v <= 0.0) {
            gi[at] = 0.0;
            continue;
          }
          const double s = stable_sigmoid(k * (lam.at(i) - v));
          const double bell = s * (1.0 - s);
          gi[at] = go[at] * (s - v * k * bell);
          dl[lam.scalar ? 0 : i] += go[at] * v * k * bell;
        }
      g.params.push_back(std::move(dlam));
      return g;
    }
  }
  throw value_error("unknown layer kind");
}

Tensor softmax_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw value_error("softmax_temperature: T must be positive");
  const bool flat = logits.rank() == 1;
  const Eigen::Index rows = flat ? 1 : logits.dim(0);
  const Eigen::Index cols = logits.numel() / rows;
  Tensor out(logits.shape());
  auto Z = logits.matrix(rows, cols);
  auto P = out.matrix(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double m = Z.row(r).maxCoeff();
    P.row(r) = ((Z.row(r).array() - m) / temperature).exp();
    P.row(r) /= P.row(r).sum();
  }
  return out;
}

}  // namespace rrt
