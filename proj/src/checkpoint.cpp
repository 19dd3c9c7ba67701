#include "csfn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace csfn {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'S', 'F', 'N', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw CheckpointError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

CheckpointHeader read_header(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  CheckpointHeader h;
  h.version = get_le<std::uint32_t>(in);
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(h.version));
  }
  const auto len = get_le<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("checkpoint header truncated");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  h.config = j.value("config", nlohmann::json::object());
  for (const auto& p : j.at("parameters")) {
    h.parameters.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<std::vector<std::size_t>>());
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParameterStore& store) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = config;
  header["parameters"] = nlohmann::json::array();
  for (const Parameter* p : store.all()) {
    header["parameters"].push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : store.all()) {
    for (Real v : p->value.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  return read_header(in);
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  CheckpointHeader h = read_header(in);
  auto params = store.all();
  if (params.size() != h.parameters.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(h.parameters.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, shape] = h.parameters[k];
    Parameter& p = *params[k];
    if (name != p.name) throw CheckpointError("parameter order mismatch: " + name + " vs " + p.name);
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw CheckpointError("shape mismatch for " + name);
    }
  }
  for (Parameter* p : params) {
    for (Real& v : p->value.values()) v = static_cast<Real>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
  }
  return h;
}

void round_to_float(ParameterStore& store) {
  for (Parameter* p : store.all())
    for (Real& v : p->value.values()) v = static_cast<Real>(static_cast<float>(v));
}

}  // namespace csfn
