#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "wise/model.hpp"
#include "wise/side_memory.hpp"

namespace wise {

// Container layout:
//   line 1   "WISECKPT 1"
//   line 2   byte length of the JSON header
//   header   JSON: config, array table (name, rows, cols, offset), side-memory
//            bookkeeping and free-form metadata
//   payload  little-endian IEEE-754 doubles, arrays back to back in table order
struct Checkpoint {
    TinyTransformer model;
    std::vector<SideMemory> memories;
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace wise
