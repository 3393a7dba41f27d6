#include "eqinv/model.hpp"

#include <algorithm>
#include <cmath>

#include "eqinv/error.hpp"
#include "eqinv/random.hpp"

namespace eqinv {

void ModelConfig::validate() const {
  if (std::find(kBackboneNames.begin(), kBackboneNames.end(), backbone) ==
      kBackboneNames.end()) {
    throw ConfigError("unknown backbone '" + backbone + "'");
  }
  if (embed_dim == 0 || num_classes == 0 || num_transforms == 0 || invariant_dim == 0 ||
      in_channels == 0) {
    throw ConfigError("model dimensions must be positive");
  }
}

std::vector<std::size_t> stage_widths(const ModelConfig& config) {
  const std::size_t d = config.embed_dim;
  const std::size_t half = std::max<std::size_t>(1, d / 2);
  const std::size_t quarter = std::max<std::size_t>(1, d / 4);
  if (config.backbone == "conv4") return {d, d, d, d};
  if (config.backbone == "resnet12-lite") return {quarter, half, d, d};
  return {half, half, d, d};
}

namespace {

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& x : t.values()) x = x > T{0} ? x : T{0};
}

// grad *= (activation > 0)
template <typename T>
void relu_mask(Tensor<T>& grad, const Tensor<T>& activation) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > T{0})) grad[i] = T{0};
  }
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
T row_norm(std::span<const T> row) {
  T sq = 0;
  for (T x : row) sq += x * x;
  return std::max(std::sqrt(sq), static_cast<T>(1e-12));
}

}  // namespace

template <typename T>
std::size_t Model<T>::add_param(const std::string& name, std::vector<std::size_t> shape) {
  params_.push_back({name, Tensor<T>(std::move(shape))});
  return params_.size() - 1;
}

template <typename T>
std::size_t Model<T>::add_buffer(const std::string& name, std::vector<std::size_t> shape,
                                 T fill) {
  buffers_.push_back({name, Tensor<T>(std::move(shape), fill)});
  return buffers_.size() - 1;
}

template <typename T>
typename Model<T>::ConvBnRef Model<T>::add_conv_bn(const std::string& prefix,
                                                   std::size_t in_c, std::size_t out_c,
                                                   std::size_t kernel, bool relu) {
  ConvBnRef u{};
  u.weight = add_param(prefix + ".conv.weight", {out_c, in_c, kernel, kernel});
  u.gamma = add_param(prefix + ".bn.gamma", {out_c});
  u.beta = add_param(prefix + ".bn.beta", {out_c});
  u.mean = add_buffer(prefix + ".bn.running_mean", {out_c}, T{0});
  u.var = add_buffer(prefix + ".bn.running_var", {out_c}, T{1});
  u.in_c = in_c;
  u.out_c = out_c;
  u.kernel = kernel;
  u.relu = relu;
  return u;
}

template <typename T>
typename Model<T>::LinearRef Model<T>::add_linear(const std::string& prefix, std::size_t in,
                                                  std::size_t out, bool bias) {
  LinearRef l{};
  l.weight = add_param(prefix + ".weight", {out, in});
  l.bias = bias ? add_param(prefix + ".bias", {out}) : kNoBias;
  l.in = in;
  l.out = out;
  return l;
}

template <typename T>
typename Model<T>::BnRef Model<T>::add_bn(const std::string& prefix, std::size_t channels) {
  BnRef bn{};
  bn.gamma = add_param(prefix + ".gamma", {channels});
  bn.beta = add_param(prefix + ".beta", {channels});
  bn.mean = add_buffer(prefix + ".running_mean", {channels}, T{0});
  bn.var = add_buffer(prefix + ".running_var", {channels}, T{1});
  bn.channels = channels;
  return bn;
}

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto widths = stage_widths(config_);
  const bool residual = config_.backbone == "resnet12-lite";
  std::size_t in_c = config_.in_channels;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const std::string prefix = "backbone.block" + std::to_string(b);
    const std::size_t w = widths[b];
    BlockRef block{{}, residual};
    if (residual) {
      block.units.push_back(add_conv_bn(prefix + ".unit1", in_c, w, 3, true));
      block.units.push_back(add_conv_bn(prefix + ".unit2", w, w, 3, true));
      block.units.push_back(add_conv_bn(prefix + ".unit3", w, w, 3, false));
      block.units.push_back(add_conv_bn(prefix + ".shortcut", in_c, w, 1, false));
    } else {
      block.units.push_back(add_conv_bn(prefix, in_c, w, 3, true));
    }
    blocks_.push_back(std::move(block));
    in_c = w;
  }
  const std::size_t d = config_.embed_dim;
  const std::size_t hidden = config_.hidden();
  classifier_ = add_linear("classifier", d, config_.num_classes);
  eq_fc1_ = add_linear("equivariant.fc1", d, hidden);
  eq_fc2_ = add_linear("equivariant.fc2", hidden, config_.num_transforms);
  // Batch norm on the hidden layer: the backbone output is nonnegative, and
  // without centering every projection starts out in nearly the same direction.
  in_fc1_ = add_linear("invariant.fc1", d, hidden, false);
  in_bn_ = add_bn("invariant.bn", hidden);
  in_fc2_ = add_linear("invariant.fc2", hidden, config_.invariant_dim);
  initialize();
}

template <typename T>
void Model<T>::initialize() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    Rng rng = make_rng(config_.seed, i);
    const auto& shape = p.value.shape();
    const bool is_bias = p.name.ends_with(".bias");
    if (p.name.ends_with(".bn.gamma")) {
      p.value.fill(T{1});
    } else if (p.name.ends_with(".bn.beta")) {
      p.value.fill(T{0});
    } else if (p.name.ends_with(".conv.weight")) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& x : p.value.values()) x = static_cast<T>(sd * normal(rng));
    } else {
      // Linear layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
      const std::size_t fan_in = is_bias ? params_[i - 1].value.dim(1) : shape[1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : p.value.values()) x = static_cast<T>(uniform(rng, -bound, bound));
    }
  }
}

template <typename T>
Tensor<T>& Model<T>::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ArgumentError("no parameter named '" + name + "'");
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& images) const {
  if (images.rank() != 4) throw ArgumentError("model input must be N x C x H x W");
  if (images.dim(1) != config_.in_channels) {
    throw ArgumentError("model input has " + std::to_string(images.dim(1)) +
                        " channels, expected " + std::to_string(config_.in_channels));
  }
  if (images.dim(0) > 0 && (images.dim(2) == 0 || images.dim(3) == 0)) {
    throw ArgumentError("model input has an empty spatial extent");
  }
}

template <typename T>
Tensor<T> Model<T>::conv_bn_forward(const ConvBnRef& u, const Tensor<T>& x, Mode mode,
                                    detail::ConvBnTrace<T>* trace) const {
  kernels::ConvShape s;
  s.batch = x.dim(0);
  s.in_channels = u.in_c;
  s.height = x.dim(2);
  s.width = x.dim(3);
  s.out_channels = u.out_c;
  s.kernel = u.kernel;
  Tensor<T> y({s.batch, s.out_channels, s.height, s.width});
  kernels::conv2d_forward(x.data(), params_[u.weight].value.data(), s, y.data());

  Tensor<T> out(y.shape());
  const T* gamma = params_[u.gamma].value.data();
  const T* beta = params_[u.beta].value.data();
  if (mode == Mode::train) {
    Tensor<T> xhat(y.shape());
    std::vector<T> mean(u.out_c), var(u.out_c), inv_std(u.out_c);
    kernels::batchnorm_forward_train(y.data(), gamma, beta, s.batch, u.out_c, s.plane(),
                                     kBnEps, out.data(), xhat.data(), mean.data(),
                                     var.data(), inv_std.data());
    if (trace != nullptr) {
      trace->input = x;
      trace->xhat = std::move(xhat);
      trace->inv_std = std::move(inv_std);
      trace->batch_mean = std::move(mean);
      trace->batch_var = std::move(var);
    }
  } else {
    kernels::batchnorm_forward_eval(y.data(), gamma, beta, buffers_[u.mean].value.data(),
                                    buffers_[u.var].value.data(), s.batch, u.out_c,
                                    s.plane(), kBnEps, out.data());
  }
  if (u.relu) relu_inplace(out);
  if (trace != nullptr) trace->output = out;
  return out;
}

template <typename T>
Tensor<T> Model<T>::conv_bn_backward(const ConvBnRef& u, const detail::ConvBnTrace<T>& t,
                                     Tensor<T> grad, std::vector<Tensor<T>>& grads,
                                     bool need_input_grad) const {
  if (u.relu) relu_mask(grad, t.output);
  kernels::ConvShape s;
  s.batch = t.input.dim(0);
  s.in_channels = u.in_c;
  s.height = t.input.dim(2);
  s.width = t.input.dim(3);
  s.out_channels = u.out_c;
  s.kernel = u.kernel;
  Tensor<T> dconv(grad.shape());
  kernels::batchnorm_backward(grad.data(), t.xhat.data(), params_[u.gamma].value.data(),
                              t.inv_std.data(), s.batch, u.out_c, s.plane(), dconv.data(),
                              grads[u.gamma].data(), grads[u.beta].data());
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(t.input.shape());
  kernels::conv2d_backward(t.input.data(), params_[u.weight].value.data(), dconv.data(), s,
                           need_input_grad ? dx.data() : nullptr, grads[u.weight].data());
  return dx;
}

template <typename T>
Tensor<T> Model<T>::backbone_forward(const Tensor<T>& images, Mode mode,
                                     ForwardTrace<T>* trace) const {
  const std::size_t n = images.dim(0);
  backbone_images_.add(n);
  if (trace != nullptr) {
    trace->mode = mode;
    trace->blocks.assign(blocks_.size(), {});
  }
  Tensor<T> x = images;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const BlockRef& block = blocks_[b];
    detail::BlockTrace<T>* bt = trace != nullptr ? &trace->blocks[b] : nullptr;
    if (bt != nullptr) bt->units.resize(block.units.size());
    auto unit_trace = [&](std::size_t i) { return bt != nullptr ? &bt->units[i] : nullptr; };

    Tensor<T> act;
    if (!block.residual) {
      act = conv_bn_forward(block.units[0], x, mode, unit_trace(0));
    } else {
      Tensor<T> a1 = conv_bn_forward(block.units[0], x, mode, unit_trace(0));
      Tensor<T> a2 = conv_bn_forward(block.units[1], a1, mode, unit_trace(1));
      act = conv_bn_forward(block.units[2], a2, mode, unit_trace(2));
      add_inplace(act, conv_bn_forward(block.units[3], x, mode, unit_trace(3)));
      relu_inplace(act);
    }
    kernels::PoolShape ps{act.dim(0) * act.dim(1), act.dim(2), act.dim(3)};
    Tensor<T> pooled({act.dim(0), act.dim(1), ps.out_height(), ps.out_width()});
    std::vector<std::uint32_t> argmax(pooled.size());
    kernels::maxpool2_forward(act.data(), ps, pooled.data(), argmax.data());
    if (bt != nullptr) {
      bt->activated = std::move(act);
      bt->argmax = std::move(argmax);
    }
    x = std::move(pooled);
  }

  const std::size_t c = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> z({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (i * c + ch) * plane;
      T sum = 0;
      for (std::size_t p = 0; p < plane; ++p) sum += src[p];
      z.at(i, ch) = sum / static_cast<T>(plane);
    }
  }
  if (trace != nullptr) {
    trace->features = std::move(x);
    trace->z = z;
  }
  return z;
}

template <typename T>
Tensor<T> Model<T>::linear_forward(const LinearRef& l, const Tensor<T>& x) const {
  const std::size_t n = x.dim(0);
  Tensor<T> y({n, l.out});
  kernels::gemm(false, true, n, l.out, l.in, T{1}, x.data(), l.in,
                params_[l.weight].value.data(), l.in, T{0}, y.data(), l.out);
  if (l.bias == kNoBias) return y;
  const T* bias = params_[l.bias].value.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < l.out; ++j) y.at(i, j) += bias[j];
  }
  return y;
}

template <typename T>
Tensor<T> Model<T>::linear_backward(const LinearRef& l, const Tensor<T>& x,
                                    const Tensor<T>& dy,
                                    std::vector<Tensor<T>>& grads) const {
  const std::size_t n = x.dim(0);
  kernels::gemm(true, false, l.out, l.in, n, T{1}, dy.data(), l.out, x.data(), l.in, T{0},
                grads[l.weight].data(), l.in);
  if (l.bias != kNoBias) {
    T* db = grads[l.bias].data();
    std::fill(db, db + l.out, T{0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < l.out; ++j) db[j] += dy.at(i, j);
    }
  }
  Tensor<T> dx({n, l.in});
  kernels::gemm(false, false, n, l.in, l.out, T{1}, dy.data(), l.out,
                params_[l.weight].value.data(), l.in, T{0}, dx.data(), l.in);
  return dx;
}

template <typename T>
Tensor<T> Model<T>::bn_forward(const BnRef& bn, const Tensor<T>& x, Mode mode,
                               detail::ConvBnTrace<T>* trace) const {
  const std::size_t n = x.dim(0);
  const std::size_t c = bn.channels;
  Tensor<T> y(x.shape());
  const T* gamma = params_[bn.gamma].value.data();
  const T* beta = params_[bn.beta].value.data();
  if (mode == Mode::eval) {
    kernels::batchnorm_forward_eval(x.data(), gamma, beta, buffers_[bn.mean].value.data(),
                                    buffers_[bn.var].value.data(), n, c, 1, kBnEps, y.data());
    return y;
  }
  Tensor<T> xhat(x.shape());
  std::vector<T> mean(c), var(c), inv_std(c);
  kernels::batchnorm_forward_train(x.data(), gamma, beta, n, c, 1, kBnEps, y.data(),
                                   xhat.data(), mean.data(), var.data(), inv_std.data());
  if (trace != nullptr) {
    trace->xhat = std::move(xhat);
    trace->inv_std = std::move(inv_std);
    trace->batch_mean = std::move(mean);
    trace->batch_var = std::move(var);
  }
  return y;
}

template <typename T>
ModelOutputs<T> Model<T>::forward(const Tensor<T>& images, Mode mode,
                                  ForwardTrace<T>* trace) const {
  check_input(images);
  if (mode == Mode::train && images.dim(0) == 0) {
    throw ArgumentError("training-mode forward needs a non-empty batch");
  }
  ModelOutputs<T> out;
  out.z = backbone_forward(images, mode, trace);
  out.class_logits = linear_forward(classifier_, out.z);

  Tensor<T> eq_hidden = linear_forward(eq_fc1_, out.z);
  relu_inplace(eq_hidden);
  out.transform_logits = linear_forward(eq_fc2_, eq_hidden);

  Tensor<T> in_hidden = bn_forward(in_bn_, linear_forward(in_fc1_, out.z), mode,
                                   trace != nullptr ? &trace->invariant.bn : nullptr);
  relu_inplace(in_hidden);
  Tensor<T> v_raw = linear_forward(in_fc2_, in_hidden);
  out.v = v_raw;
  for (std::size_t i = 0; i < out.v.dim(0); ++i) {
    auto row = out.v.row(i);
    const T norm = row_norm<T>(row);
    for (auto& x : row) x /= norm;
  }

  if (trace != nullptr) {
    trace->equivariant.hidden = std::move(eq_hidden);
    trace->equivariant.output = out.transform_logits;
    trace->invariant.hidden = std::move(in_hidden);
    trace->invariant.output = std::move(v_raw);
    trace->v = out.v;
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::embed(const Tensor<T>& images) const {
  check_input(images);
  if (images.dim(0) == 0) return Tensor<T>({0, config_.embed_dim});
  return backbone_forward(images, Mode::eval, nullptr);
}

template <typename T>
std::vector<Tensor<T>> Model<T>::backward(const ForwardTrace<T>& trace,
                                          const OutputGradients<T>& g) const {
  if (trace.mode != Mode::train || trace.blocks.size() != blocks_.size()) {
    throw ArgumentError("backward needs the trace of a training-mode forward pass");
  }
  std::vector<Tensor<T>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());

  const Tensor<T>& z = trace.z;
  Tensor<T> dz = g.z.empty() ? Tensor<T>(z.shape()) : g.z;
  if (!g.class_logits.empty()) {
    add_inplace(dz, linear_backward(classifier_, z, g.class_logits, grads));
  }
  if (!g.transform_logits.empty()) {
    Tensor<T> dh = linear_backward(eq_fc2_, trace.equivariant.hidden, g.transform_logits, grads);
    relu_mask(dh, trace.equivariant.hidden);
    add_inplace(dz, linear_backward(eq_fc1_, z, dh, grads));
  }
  if (!g.v.empty()) {
    // v = r / |r|  =>  dr = (dv - v (v . dv)) / |r|
    Tensor<T> dr(g.v.shape());
    for (std::size_t i = 0; i < dr.dim(0); ++i) {
      const auto v = trace.v.row(i);
      const auto dv = g.v.row(i);
      const T norm = row_norm<T>(trace.invariant.output.row(i));
      T dot = 0;
      for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * dv[j];
      auto out = dr.row(i);
      for (std::size_t j = 0; j < v.size(); ++j) out[j] = (dv[j] - v[j] * dot) / norm;
    }
    Tensor<T> dh = linear_backward(in_fc2_, trace.invariant.hidden, dr, grads);
    relu_mask(dh, trace.invariant.hidden);
    const auto& bt = trace.invariant.bn;
    Tensor<T> dpre(dh.shape());
    kernels::batchnorm_backward(dh.data(), bt.xhat.data(), params_[in_bn_.gamma].value.data(),
                                bt.inv_std.data(), dh.dim(0), in_bn_.channels, 1, dpre.data(),
                                grads[in_bn_.gamma].data(), grads[in_bn_.beta].data());
    add_inplace(dz, linear_backward(in_fc1_, z, dpre, grads));
  }

  const Tensor<T>& feat = trace.features;
  const std::size_t plane = feat.dim(2) * feat.dim(3);
  Tensor<T> grad(feat.shape());
  for (std::size_t i = 0; i < feat.dim(0); ++i) {
    for (std::size_t ch = 0; ch < feat.dim(1); ++ch) {
      const T share = dz.at(i, ch) / static_cast<T>(plane);
      std::fill_n(grad.data() + (i * feat.dim(1) + ch) * plane, plane, share);
    }
  }

  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    const BlockRef& block = blocks_[bi];
    const auto& bt = trace.blocks[bi];
    const Tensor<T>& act = bt.activated;
    kernels::PoolShape ps{act.dim(0) * act.dim(1), act.dim(2), act.dim(3)};
    Tensor<T> dact(act.shape());
    kernels::maxpool2_backward(grad.data(), bt.argmax.data(), ps, dact.data());
    const bool need_input = bi > 0;
    if (!block.residual) {
      grad = conv_bn_backward(block.units[0], bt.units[0], std::move(dact), grads, need_input);
    } else {
      relu_mask(dact, act);
      Tensor<T> d2 = conv_bn_backward(block.units[2], bt.units[2], dact, grads, true);
      Tensor<T> d1 = conv_bn_backward(block.units[1], bt.units[1], std::move(d2), grads, true);
      Tensor<T> dmain =
          conv_bn_backward(block.units[0], bt.units[0], std::move(d1), grads, need_input);
      Tensor<T> dshort =
          conv_bn_backward(block.units[3], bt.units[3], std::move(dact), grads, need_input);
      if (need_input) add_inplace(dmain, dshort);
      grad = std::move(dmain);
    }
  }
  return grads;
}

template <typename T>
void Model<T>::update_running_stats(const ForwardTrace<T>& trace, double momentum) {
  if (trace.mode != Mode::train || trace.blocks.size() != blocks_.size()) {
    throw ArgumentError("running statistics need a training-mode trace");
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t u = 0; u < blocks_[b].units.size(); ++u) {
      const ConvBnRef& ref = blocks_[b].units[u];
      const auto& t = trace.blocks[b].units[u];
      const double count = static_cast<double>(t.xhat.size() / ref.out_c);
      const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
      T* mean = buffers_[ref.mean].value.data();
      T* var = buffers_[ref.var].value.data();
      for (std::size_t c = 0; c < ref.out_c; ++c) {
        mean[c] = static_cast<T>((1.0 - momentum) * mean[c] + momentum * t.batch_mean[c]);
        var[c] = static_cast<T>((1.0 - momentum) * var[c] +
                                momentum * unbias * t.batch_var[c]);
      }
    }
  }
  const auto& t = trace.invariant.bn;
  if (t.batch_mean.size() != in_bn_.channels) {
    throw ArgumentError("running statistics need the invariant head's batch norm trace");
  }
  const double count = static_cast<double>(t.xhat.dim(0));
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  T* mean = buffers_[in_bn_.mean].value.data();
  T* var = buffers_[in_bn_.var].value.data();
  for (std::size_t c = 0; c < in_bn_.channels; ++c) {
    mean[c] = static_cast<T>((1.0 - momentum) * mean[c] + momentum * t.batch_mean[c]);
    var[c] = static_cast<T>((1.0 - momentum) * var[c] + momentum * unbias * t.batch_var[c]);
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace eqinv
