#include "mclstm/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace mclstm {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json checkpoint_to_json(const cells::CellParams& params, const json& metadata) {
  json tensors = json::object();
  for (const auto& [name, t] : params.tensors) tensors[name] = tensor_to_json(t);
  return json{
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"variant", cells::variant_name(params.variant)},
      {"dims", {{"K", params.dims.cells}, {"M", params.dims.mass}, {"L", params.dims.aux}}},
      {"readout", cells::readout_name(params.readout)},
      {"metadata", metadata},
      {"tensors", std::move(tensors)},
  };
}

cells::CellParams checkpoint_from_json(const json& doc) {
  if (doc.value("format", "") != kCheckpointFormat) {
    throw ContractError("not a checkpoint document (format tag missing)");
  }
  const int version = doc.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  }
  cells::CellParams params;
  params.variant = cells::parse_variant(doc.at("variant").get<std::string>());
  const json& dims = doc.at("dims");
  params.dims = {dims.at("K").get<std::size_t>(), dims.at("M").get<std::size_t>(),
                 dims.at("L").get<std::size_t>()};
  params.readout = cells::parse_readout(doc.at("readout").get<std::string>());
  for (const auto& [name, t] : doc.at("tensors").items()) {
    params.tensors.emplace(name, tensor_from_json(t));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const cells::CellParams& params,
                     const json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(params, metadata).dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

namespace {
json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}
}  // namespace

cells::CellParams load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json(path));
}

json load_checkpoint_metadata(const std::filesystem::path& path) {
  return read_json(path).value("metadata", json::object());
}

}  // namespace mclstm
