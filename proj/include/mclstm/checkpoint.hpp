#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mclstm/cells.hpp"

namespace mclstm {

inline constexpr const char* kCheckpointFormat = "mclstm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Versioned JSON document: variant, dims, readout and every named tensor as
/// {"shape": [...], "data": [...]} with row-major float64 data. Doubles are
/// written in shortest round-trip form, so load(save(p)) is bit-exact.
nlohmann::json checkpoint_to_json(const cells::CellParams& params,
                                  const nlohmann::json& metadata = nlohmann::json::object());
cells::CellParams checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const cells::CellParams& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
cells::CellParams load_checkpoint(const std::filesystem::path& path);
nlohmann::json load_checkpoint_metadata(const std::filesystem::path& path);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace mclstm
