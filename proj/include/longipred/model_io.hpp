#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "longipred/deformation.hpp"
#include "longipred/kernels.hpp"
#include "longipred/mixedmodel.hpp"

namespace longipred {

/// Fitted model plus, when the phenotype came from imaging, the basis that
/// maps coefficients back to displacement fields.
struct ModelBundle {
  FittedModel model;
  std::optional<DeformationModel> deformation;
};

nlohmann::json kernel_params_to_json(const KernelParams& params);
KernelParams kernel_params_from_json(const nlohmann::json& node);

nlohmann::json deformation_to_json(const DeformationModel& model);
DeformationModel deformation_from_json(const nlohmann::json& node);

/// Single versioned JSON document; doubles survive a save/load round trip
/// bit for bit.
void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace longipred
