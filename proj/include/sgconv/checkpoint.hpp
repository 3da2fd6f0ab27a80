#pragma once

// Checkpoint layout (little-endian):
//   "SGCV" | u32 version | u32 byte length | UTF-8 JSON header | tensors as f64
// The JSON header carries the model config and the tensor list; tensors follow
// in declaration order, parameters first, then frozen buffers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "sgconv/model.hpp"

namespace sgconv
{

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail
{
inline void put_u32(std::ostream& os, std::uint32_t v)
{
  char b[4];
  for (int i = 0; i < 4; ++i)
    b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_f64(std::ostream& os, double v)
{
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is)
{
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is)
{
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline nlohmann::json tensor_list(const std::vector<TensorInfo>& infos, const char* kind)
{
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : infos)
    out.push_back({{"name", t.name}, {"shape", t.shape}, {"kind", kind}});
  return out;
}
} // namespace detail

template <typename T>
void save_checkpoint(std::ostream& os, const ModelState<T>& state)
{
  nlohmann::json header;
  header["model"] = to_json(state.config);
  auto tensors = detail::tensor_list(state.layout.params, "param");
  for (auto& b : detail::tensor_list(state.layout.buffers, "buffer"))
    tensors.push_back(std::move(b));
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  os.write("SGCV", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (T v : state.params)
    detail::put_f64(os, static_cast<double>(v));
  for (T v : state.buffers)
    detail::put_f64(os, static_cast<double>(v));
}

template <typename T>
ModelState<T> load_checkpoint(std::istream& is)
{
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SGCV", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t len = detail::get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len))
    throw std::runtime_error("checkpoint: truncated config");
  const auto header = nlohmann::json::parse(text);
  ModelState<T> state(model_config_from_json(header.at("model")));
  state.config.validate();

  const auto& tensors = header.at("tensors");
  if (tensors.size() != state.layout.params.size() + state.layout.buffers.size())
    throw std::runtime_error("checkpoint: tensor list does not match model config");
  for (std::size_t i = 0; i < tensors.size(); ++i)
  {
    const auto& expected = i < state.layout.params.size() ? state.layout.params[i]
                                                           : state.layout.buffers[i - state.layout.params.size()];
    if (tensors[i].at("name").get<std::string>() != expected.name
        || tensors[i].at("shape").get<std::vector<std::size_t>>() != expected.shape)
      throw std::runtime_error("checkpoint: unexpected tensor " + tensors[i].at("name").get<std::string>());
  }
  for (T& v : state.params)
    v = static_cast<T>(detail::get_f64(is));
  for (T& v : state.buffers)
    v = static_cast<T>(detail::get_f64(is));
  return state;
}

} // namespace sgconv
