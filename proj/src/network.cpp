#include "rrt/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "rrt/optim.hpp"
#include "rrt/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "model blobs are little-endian float32; big-endian hosts are unsupported");

namespace rrt {

namespace {

/// Resolved view of one layer for a given threshold binding: the effective
/// spec (activation kind/slope), parameter pointers, and a materialized
/// lambda tensor when the layer is thresholded.
struct EffectiveLayer {
  LayerSpec spec;
  std::vector<const Tensor*> params;
  Tensor lambda;
  bool has_lambda = false;
};

EffectiveLayer effective_layer(const Network& net, int index, const ThresholdSet* th) {
  EffectiveLayer e;
  e.spec = net.layers[static_cast<std::size_t>(index)];
  if (e.spec.kind != LayerKind::activation) {
    for (const Tensor& p : net.params[static_cast<std::size_t>(index)]) e.params.push_back(&p);
    return e;
  }
  if (th != nullptr && th->has(index)) {
    e.spec.act = th->kind;
    e.spec.slope_k = th->slope_k;
    if (auto it = th->per_neuron.find(index); it != th->per_neuron.end()) {
      e.lambda = Tensor({it->second.size()});
      e.lambda.array() = it->second.array();
    } else {
      e.lambda = Tensor({1}, {th->per_layer.at(index)});
    }
    e.has_lambda = true;
    e.params.push_back(&e.lambda);
    return e;
  }
  if (e.spec.act != ActivationKind::relu && th == nullptr)
    throw value_error("activation layer " + std::to_string(index) +
                      " uses " + to_string(e.spec.act) + " but no thresholds are bound");
  e.spec.act = ActivationKind::relu;  // uncovered layers run unclipped
  return e;
}

double snap_to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

void snap_params_to_float32(Network& net) {
  for (auto& tensors : net.params)
    for (auto& t : tensors)
      for (Eigen::Index i = 0; i < t.numel(); ++i) t[i] = snap_to_float32(t[i]);
}

nlohmann::json layer_to_json(const LayerSpec& spec) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  switch (spec.kind) {
    case LayerKind::dense:
      j["in_features"] = spec.in_features;
      j["out_features"] = spec.out_features;
      break;
    case LayerKind::conv2d:
      j["in_channels"] = spec.in_channels;
      j["out_channels"] = spec.out_channels;
      j["kernel"] = {spec.kernel_h, spec.kernel_w};
      j["stride"] = spec.stride;
      j["pad"] = spec.pad;
      break;
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d:
      j["kernel"] = {spec.kernel_h, spec.kernel_w};
      j["stride"] = spec.stride;
      break;
    case LayerKind::flatten:
      break;
    case LayerKind::activation:
      j["act"] = to_string(spec.act);
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::dense:
      return LayerSpec::Dense(j.at("in_features").get<int>(), j.at("out_features").get<int>());
    case LayerKind::conv2d:
      return LayerSpec::Conv2d(j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                               j.at("kernel").at(0).get<int>(), j.at("kernel").at(1).get<int>(),
                               j.value("stride", 1), j.value("pad", 0));
    case LayerKind::maxpool2d:
      return LayerSpec::MaxPool2d(j.at("kernel").at(0).get<int>(), j.at("stride").get<int>());
    case LayerKind::avgpool2d:
      return LayerSpec::AvgPool2d(j.at("kernel").at(0).get<int>(), j.at("stride").get<int>());
    case LayerKind::flatten:
      return LayerSpec::Flatten();
    case LayerKind::activation:
      return LayerSpec::Activation(activation_kind_from_string(j.value("act", "relu")));
  }
  throw io_error("unsupported layer kind in manifest");
}

constexpr char kModelMagic[8] = {'R', 'R', 'T', 'M', 'O', 'D', 'L', '1'};

struct ManifestBlob {
  nlohmann::json manifest;
  std::vector<float> blob;
};

ManifestBlob serialize(const Network& net) {
  ManifestBlob out;
  out.manifest["format"] = "RRTMODL1";
  out.manifest["name"] = net.name;
  out.manifest["input_shape"] = net.input_shape;
  out.manifest["class_count"] = net.class_count;
  nlohmann::json layers = nlohmann::json::array();
  std::size_t offset = 0;
  static const char* tensor_names[] = {"weight", "bias"};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    nlohmann::json lj = layer_to_json(net.layers[i]);
    if (!net.params[i].empty()) {
      nlohmann::json tensors = nlohmann::json::array();
      for (std::size_t t = 0; t < net.params[i].size(); ++t) {
        const Tensor& tensor = net.params[i][t];
        nlohmann::json tj;
        tj["name"] = t < 2 ? tensor_names[t] : "param" + std::to_string(t);
        tj["shape"] = tensor.shape();
        tj["offset"] = offset;
        tj["length"] = sizeof(float) * static_cast<std::size_t>(tensor.numel());
        tensors.push_back(tj);
        for (Eigen::Index e = 0; e < tensor.numel(); ++e)
          out.blob.push_back(static_cast<float>(tensor[e]));
        offset += sizeof(float) * static_cast<std::size_t>(tensor.numel());
      }
      lj["tensors"] = tensors;
    }
    layers.push_back(lj);
  }
  out.manifest["layers"] = layers;
  out.manifest["blob_bytes"] = offset;
  return out;
}

Network deserialize(const nlohmann::json& manifest, const std::vector<unsigned char>& blob) {
  if (manifest.value("format", "") != "RRTMODL1")
    throw io_error("model manifest is not RRTMODL1 format");
  const std::size_t declared = manifest.at("blob_bytes").get<std::size_t>();
  if (declared != blob.size())
    throw io_error("model blob length mismatch: manifest declares " + std::to_string(declared) +
                   " bytes, blob holds " + std::to_string(blob.size()));
  Network net;
  net.name = manifest.value("name", "");
  net.input_shape = manifest.at("input_shape").get<std::vector<Eigen::Index>>();
  net.class_count = manifest.at("class_count").get<int>();
  for (const auto& lj : manifest.at("layers")) {
    net.layers.push_back(layer_from_json(lj));
    std::vector<Tensor> tensors;
    if (lj.contains("tensors")) {
      for (const auto& tj : lj["tensors"]) {
        const auto shape = tj.at("shape").get<std::vector<Eigen::Index>>();
        const std::size_t offset = tj.at("offset").get<std::size_t>();
        const std::size_t length = tj.at("length").get<std::size_t>();
        Tensor t(shape);
        if (length != sizeof(float) * static_cast<std::size_t>(t.numel()) ||
            offset + length > blob.size())
          throw io_error("model tensor entry outside blob bounds");
        const float* src = reinterpret_cast<const float*>(blob.data() + offset);
        for (Eigen::Index e = 0; e < t.numel(); ++e) t[e] = static_cast<double>(src[e]);
        tensors.push_back(std::move(t));
      }
    }
    net.params.push_back(std::move(tensors));
  }
  net.check_consistent();
  return net;
}

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw io_error("write failure: " + path.string());
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<int> Network::activation_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::activation) out.push_back(static_cast<int>(i));
  return out;
}

int Network::last_hidden_activation() const {
  const auto acts = activation_layers();
  if (acts.empty()) throw value_error("network has no activation layers");
  return acts.back();
}

std::vector<Eigen::Index> Network::layer_output_shape(int index) const {
  std::vector<Eigen::Index> shape = input_shape;
  for (int i = 0; i <= index; ++i)
    shape = layers[static_cast<std::size_t>(i)].output_shape(shape);
  return shape;
}

Eigen::Index Network::activation_width(int index) const {
  Eigen::Index n = 1;
  for (Eigen::Index d : layer_output_shape(index)) n *= d;
  return n;
}

Eigen::Index Network::param_count() const {
  Eigen::Index n = 0;
  for (const auto& tensors : params)
    for (const auto& t : tensors) n += t.numel();
  return n;
}

void Network::check_consistent() const {
  if (layers.size() != params.size())
    throw shape_error("network: layer/param list size mismatch");
  std::vector<Eigen::Index> shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    shape = layers[i].output_shape(shape);  // throws on incompatibility
    const int expected = layers[i].param_tensor_count();
    if (static_cast<int>(params[i].size()) != expected)
      throw shape_error("network: layer " + std::to_string(i) + " expects " +
                        std::to_string(expected) + " parameter tensors");
  }
  if (shape.size() != 1 || shape[0] != class_count)
    throw shape_error("network: final layer does not produce class_count logits");
}

Tensor forward(const Network& net, const ThresholdSet* thresholds, const Tensor& batch) {
  Tensor x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const EffectiveLayer e = effective_layer(net, static_cast<int>(i), thresholds);
    x = layer_forward(e.spec, e.params, x);
  }
  return x;
}

ForwardTape forward_tape(const Network& net, const ThresholdSet* thresholds,
                         const Tensor& batch) {
  ForwardTape tape;
  tape.inputs.reserve(net.layers.size());
  Tensor x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const EffectiveLayer e = effective_layer(net, static_cast<int>(i), thresholds);
    tape.inputs.push_back(x);
    x = layer_forward(e.spec, e.params, x);
  }
  tape.logits = std::move(x);
  return tape;
}

ForwardTrace forward_trace(const Network& net, const ThresholdSet* thresholds,
                           const Tensor& batch) {
  ForwardTrace trace;
  Tensor x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const EffectiveLayer e = effective_layer(net, static_cast<int>(i), thresholds);
    x = layer_forward(e.spec, e.params, x);
    if (e.spec.kind == LayerKind::activation) trace.activations[static_cast<int>(i)] = x;
  }
  trace.logits = std::move(x);
  return trace;
}

BackwardResult backward(const Network& net, const ThresholdSet* thresholds,
                        const ForwardTape& tape, const Tensor& grad_logits,
                        const BackwardOptions& options) {
  if (tape.inputs.size() != net.layers.size())
    throw shape_error("backward: tape does not match network");
  BackwardResult result;
  result.param_grads.resize(net.layers.size());
  Tensor g = grad_logits;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= options.stop_layer; --i) {
    const EffectiveLayer e = effective_layer(net, i, thresholds);
    LayerGrads lg = layer_backward(e.spec, e.params, tape.inputs[static_cast<std::size_t>(i)], g);
    if (e.has_lambda) {
      const bool wanted =
          options.lambda_layers == nullptr || options.lambda_layers->count(i) > 0;
      if (wanted && !lg.params.empty())
        result.lambda_grads[i] = std::move(lg.params[0]);
    } else if (options.want_param_grads) {
      result.param_grads[static_cast<std::size_t>(i)] = std::move(lg.params);
    }
    g = std::move(lg.input);
  }
  return result;
}

void save_model(const Network& net, const std::filesystem::path& path) {
  net.check_consistent();
  ManifestBlob mb = serialize(net);
  if (path.extension() == ".rrtm") {
    std::filesystem::path blob_path = path;
    blob_path.replace_extension(".rrtb");
    mb.manifest["blob"] = blob_path.filename().string();
    const std::string text = mb.manifest.dump(2) + "\n";
    write_bytes(path, text.data(), text.size());
    write_bytes(blob_path, mb.blob.data(), sizeof(float) * mb.blob.size());
    return;
  }
  // Concatenated container: magic, u64 manifest size, manifest, blob.
  const std::string text = mb.manifest.dump();
  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), kModelMagic, kModelMagic + sizeof(kModelMagic));
  std::uint64_t manifest_size = text.size();
  const auto* ms = reinterpret_cast<const unsigned char*>(&manifest_size);
  bytes.insert(bytes.end(), ms, ms + sizeof(manifest_size));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const auto* blob_bytes = reinterpret_cast<const unsigned char*>(mb.blob.data());
  bytes.insert(bytes.end(), blob_bytes, blob_bytes + sizeof(float) * mb.blob.size());
  write_bytes(path, bytes.data(), bytes.size());
}

Network load_model(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() >= sizeof(kModelMagic) &&
      std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) == 0) {
    if (bytes.size() < sizeof(kModelMagic) + sizeof(std::uint64_t))
      throw io_error("model container truncated: " + path.string());
    std::uint64_t manifest_size = 0;
    std::memcpy(&manifest_size, bytes.data() + sizeof(kModelMagic), sizeof(manifest_size));
    const std::size_t header = sizeof(kModelMagic) + sizeof(std::uint64_t);
    if (header + manifest_size > bytes.size())
      throw io_error("model container manifest overruns file: " + path.string());
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_size));
    } catch (const nlohmann::json::exception& e) {
      throw io_error(std::string("model manifest parse failure: ") + e.what());
    }
    std::vector<unsigned char> blob(bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_size),
                                    bytes.end());
    return deserialize(manifest, blob);
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("model manifest parse failure: ") + e.what());
  }
  const std::string blob_name = manifest.value("blob", "");
  if (blob_name.empty()) throw io_error("model manifest lacks a blob reference");
  const auto blob = read_bytes(path.parent_path() / blob_name);
  return deserialize(manifest, blob);
}

Network build_lenet5() {
  Network net;
  net.name = "lenet5";
  net.input_shape = {1, 28, 28};
  net.class_count = 10;
  net.layers = {
      LayerSpec::Conv2d(1, 6, 5, 5),
      LayerSpec::Activation(),
      LayerSpec::MaxPool2d(2, 2),
      LayerSpec::Conv2d(6, 16, 5, 5),
      LayerSpec::Activation(),
      LayerSpec::MaxPool2d(2, 2),
      LayerSpec::Flatten(),
      LayerSpec::Dense(256, 120),
      LayerSpec::Activation(),
      LayerSpec::Dense(120, 84),
      LayerSpec::Activation(),
      LayerSpec::Dense(84, 10),
  };
  net.params.resize(net.layers.size());
  init_params(net, 0);
  return net;
}

Network build_minialex() {
  Network net;
  net.name = "minialex";
  net.input_shape = {3, 32, 32};
  net.class_count = 10;
  net.layers = {
      LayerSpec::Conv2d(3, 32, 3, 3, 1, 1),
      LayerSpec::Activation(),
      LayerSpec::MaxPool2d(2, 2),
      LayerSpec::Conv2d(32, 64, 3, 3, 1, 1),
      LayerSpec::Activation(),
      LayerSpec::MaxPool2d(2, 2),
      LayerSpec::Conv2d(64, 128, 3, 3, 1, 1),
      LayerSpec::Activation(),
      LayerSpec::MaxPool2d(2, 2),
      LayerSpec::Flatten(),
      LayerSpec::Dense(128 * 4 * 4, 256),
      LayerSpec::Activation(),
      LayerSpec::Dense(256, 10),
  };
  net.params.resize(net.layers.size());
  init_params(net, 0);
  return net;
}

Network build_by_name(const std::string& arch) {
  if (arch == "lenet5") return build_lenet5();
  if (arch == "minialex") return build_minialex();
  throw value_error("unknown architecture: " + arch);
}

void init_params(Network& net, std::uint64_t seed) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    if (spec.param_tensor_count() == 0) {
      net.params[i].clear();
      continue;
    }
    Xoshiro256ss rng(stable_hash64({seed, 0x1217ULL, static_cast<std::uint64_t>(i)}));
    Tensor weight, bias;
    Eigen::Index fan_in = 0;
    if (spec.kind == LayerKind::dense) {
      weight = Tensor({spec.out_features, spec.in_features});
      bias = Tensor({spec.out_features});
      fan_in = spec.in_features;
    } else {
      weight = Tensor({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
      bias = Tensor({spec.out_channels});
      fan_in = static_cast<Eigen::Index>(spec.in_channels) * spec.kernel_h * spec.kernel_w;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Eigen::Index e = 0; e < weight.numel(); ++e)
      weight[e] = snap_to_float32(rng.uniform(-bound, bound));
    net.params[i] = {std::move(weight), std::move(bias)};
  }
  net.check_consistent();
}

Network train_baseline(Network net, const Dataset& data, const TrainConfig& cfg,
                       BaselineLog* log) {
  cfg.validate();
  if (data.size() == 0) throw value_error("train_baseline: empty dataset");
  for (int i : net.activation_layers())
    if (net.layers[static_cast<std::size_t>(i)].act != ActivationKind::relu)
      throw value_error("train_baseline: network must use plain ReLU");
  net.check_consistent();
  if (cfg.epochs == 0) return net;

  // One optimizer slot per parameter tensor.
  std::vector<std::vector<AdamState>> adam(net.layers.size());
  std::vector<std::vector<MomentumState>> momentum(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    for (const Tensor& t : net.params[i]) {
      if (cfg.optimizer == "adam")
        adam[i].emplace_back(t.numel());
      else
        momentum[i].emplace_back(t.numel());
    }

  const Eigen::Index n = data.size();
  std::vector<std::uint64_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    Xoshiro256ss shuffle_rng(stable_hash64({cfg.seed, 0xBA5EULL, static_cast<std::uint64_t>(epoch)}));
    shuffle_in_place(order, shuffle_rng);

    double loss_sum = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index first = 0; first < n; first += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - first);
      std::vector<std::uint64_t> batch_idx(order.begin() + first, order.begin() + first + count);
      const Dataset batch_data = data.subset(batch_idx);
      const Tensor batch = batch_data.batch(0, count);

      ForwardTape tape = forward_tape(net, nullptr, batch);
      const Eigen::Index classes = net.class_count;
      auto Z = tape.logits.matrix(count, classes);

      // Cross entropy (temperature 1) and its logit gradient.
      Tensor grad(tape.logits.shape());
      auto G = grad.matrix(count, classes);
      double loss = 0.0;
      for (Eigen::Index r = 0; r < count; ++r) {
        const double m = Z.row(r).maxCoeff();
        const Eigen::ArrayXd shifted = Z.row(r).array() - m;
        const double lse = m + std::log(shifted.exp().sum());
        const int label = batch_data.labels[static_cast<std::size_t>(r)];
        loss += lse - Z(r, label);
        G.row(r) = (Z.row(r).array() - lse).exp() / static_cast<double>(count);
        G(r, label) -= 1.0 / static_cast<double>(count);
      }
      loss /= static_cast<double>(count);
      if (!std::isfinite(loss))
        throw divergence_error("train_baseline: non-finite loss at epoch " +
                               std::to_string(epoch));
      loss_sum += loss * static_cast<double>(count);
      seen += count;

      BackwardResult grads = backward(net, nullptr, tape, grad);
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        for (std::size_t t = 0; t < net.params[i].size(); ++t) {
          Tensor& param = net.params[i][t];
          const Tensor& g = grads.param_grads[i][t];
          Eigen::Map<Eigen::ArrayXd> x(param.data(), param.numel());
          Eigen::Map<const Eigen::ArrayXd> gx(g.data(), g.numel());
          if (cfg.optimizer == "adam")
            adam[i][t].step(x, gx, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
          else
            momentum[i][t].step(x, gx, lr, cfg.momentum);
        }
      }
    }
    if (log) log->epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  snap_params_to_float32(net);
  return net;
}

}  // namespace rrt
