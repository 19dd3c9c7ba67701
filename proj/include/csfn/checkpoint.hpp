#pragma once

#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "csfn/parameter.hpp"

namespace csfn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Byte layout:
//   0   8 bytes   magic "CSFNCKPT"
//   8   u32 LE    format version
//   12  u64 LE    header length in bytes (n)
//   20  n bytes   UTF-8 JSON header:
//                 {"format_version":1,"config":{...},
//                  "parameters":[{"name":..,"shape":[rows,cols]},...]}
//   20+n          for each parameter in header order: rows*cols IEEE-754
//                 binary32 values, little-endian, row-major

/// Writes every parameter of `store` (registration order) with `config`.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParameterStore& store);

struct CheckpointHeader {
  std::uint32_t version = 0;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> parameters;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads values into an already-constructed store. Names and shapes must match
/// exactly, in order.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

/// Rounds every parameter value to binary32 in place (what a save/load cycle does).
void round_to_float(ParameterStore& store);

}  // namespace csfn
