#ifndef GAZESEG_CONTAINER_HPP
#define GAZESEG_CONTAINER_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/model.hpp"

#include <json.hpp>

#include <iosfwd>
#include <vector>

namespace gazeseg {

/// Binary tensor container shared by all checkpoints:
///   "GZSEGCK1" | uint64 LE header length | JSON header | float32 payload.
/// The header's "tensors" array lists [rows, cols] of each payload tensor.
struct TensorContainer {
    nlohmann::json header;
    std::vector<Matrix<float>> tensors;
};

void write_container(std::ostream& out, nlohmann::json header, const std::vector<const Matrix<float>*>& tensors);
TensorContainer read_container(std::istream& in);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace gazeseg

#endif
