#include "rrt/activation.hpp"

#include <fstream>

#include "json.hpp"

namespace rrt {

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::clipped_relu: return "clipped_relu";
    case ActivationKind::hyrelu: return "hyrelu";
    case ActivationKind::fitact_neuronwise: return "fitact_neuronwise";
  }
  throw value_error("unknown activation kind");
}

ActivationKind activation_kind_from_string(const std::string& name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "clipped_relu") return ActivationKind::clipped_relu;
  if (name == "hyrelu") return ActivationKind::hyrelu;
  if (name == "fitact_neuronwise") return ActivationKind::fitact_neuronwise;
  throw value_error("unknown activation kind: " + name);
}

std::size_t ThresholdSet::value_count() const {
  std::size_t n = per_layer.size();
  for (const auto& [layer, v] : per_neuron) n += static_cast<std::size_t>(v.size());
  return n;
}

Eigen::VectorXd ThresholdSet::flattened() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(value_count()));
  Eigen::Index i = 0;
  auto scalar_it = per_layer.begin();
  auto vector_it = per_neuron.begin();
  while (scalar_it != per_layer.end() || vector_it != per_neuron.end()) {
    const bool take_scalar =
        vector_it == per_neuron.end() ||
        (scalar_it != per_layer.end() && scalar_it->first < vector_it->first);
    if (take_scalar) {
      out[i++] = scalar_it->second;
      ++scalar_it;
    } else {
      out.segment(i, vector_it->second.size()) = vector_it->second;
      i += vector_it->second.size();
      ++vector_it;
    }
  }
  return out;
}

void ThresholdSet::validate() const {
  if (!(slope_k > 0.0)) throw value_error("ThresholdSet: slope k must be positive");
  for (const auto& [layer, lambda] : per_layer) {
    if (per_neuron.count(layer))
      throw value_error("ThresholdSet: layer " + std::to_string(layer) +
                        " has both scalar and neuron-wise thresholds");
    if (!(lambda > 0.0))
      throw value_error("ThresholdSet: non-positive threshold at layer " +
                        std::to_string(layer));
  }
  for (const auto& [layer, v] : per_neuron) {
    if (v.size() == 0 || (v.array() <= 0.0).any())
      throw value_error("ThresholdSet: non-positive threshold at layer " +
                        std::to_string(layer));
  }
}

std::string ThresholdSet::to_json_string() const {
  nlohmann::json doc;
  doc["k"] = slope_k;
  doc["kind"] = to_string(kind);
  doc["last_layer_index"] = last_layer;
  nlohmann::json scalars = nlohmann::json::object();
  for (const auto& [layer, lambda] : per_layer) scalars[std::to_string(layer)] = lambda;
  doc["per_layer"] = scalars;
  nlohmann::json vectors = nlohmann::json::object();
  for (const auto& [layer, v] : per_neuron) {
    if (layer == last_layer) continue;
    vectors[std::to_string(layer)] = std::vector<double>(v.data(), v.data() + v.size());
  }
  if (!vectors.empty()) doc["per_neuron"] = vectors;
  if (auto it = per_neuron.find(last_layer); it != per_neuron.end()) {
    doc["last_layer"] =
        std::vector<double>(it->second.data(), it->second.data() + it->second.size());
  }
  return doc.dump(2);
}

ThresholdSet ThresholdSet::from_json_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("thresholds JSON parse failure: ") + e.what());
  }
  ThresholdSet out;
  try {
    out.slope_k = doc.at("k").get<double>();
    out.kind = activation_kind_from_string(doc.value("kind", "hyrelu"));
    out.last_layer = doc.value("last_layer_index", -1);
    for (const auto& [key, value] : doc.at("per_layer").items())
      out.per_layer[std::stoi(key)] = value.get<double>();
    if (doc.contains("per_neuron")) {
      for (const auto& [key, value] : doc["per_neuron"].items()) {
        auto vec = value.get<std::vector<double>>();
        out.per_neuron[std::stoi(key)] =
            Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size()));
      }
    }
    if (doc.contains("last_layer")) {
      if (out.last_layer < 0)
        throw io_error("thresholds JSON: last_layer values without last_layer_index");
      auto vec = doc["last_layer"].get<std::vector<double>>();
      out.per_neuron[out.last_layer] =
          Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("thresholds JSON missing field: ") + e.what());
  }
  out.validate();
  return out;
}

void ThresholdSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << to_json_string() << '\n';
  if (!out) throw io_error("write failure: " + path.string());
}

ThresholdSet ThresholdSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

}  // namespace rrt
