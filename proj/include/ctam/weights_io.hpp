#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/model.hpp"
#include "ctam/tensor.hpp"
#include "ctam/volume_io.hpp"
#include "ctam/voting.hpp"

namespace ctam {

// Weights container layout: the magic "EAM1", then per named tensor:
//   u16 LE name length | name bytes | u8 axis count | u32 LE axes... |
//   f64 LE values (row-major).
// Entries repeat until end of file.

inline void save_tensors(const std::vector<std::pair<std::string, Tensor>>& entries,
                         const std::filesystem::path& path) {
  std::string bytes = "EAM1";
  for (const auto& [name, tensor] : entries) {
    detail::require(!name.empty() && name.size() <= 0xFFFF,
                    "save_tensors: bad tensor name length");
    detail::put_u16(bytes, static_cast<std::uint16_t>(name.size()));
    bytes += name;
    bytes.push_back(static_cast<char>(tensor.rank()));
    for (int axis : tensor.shape()) detail::put_u32(bytes, static_cast<std::uint32_t>(axis));
    for (std::size_t i = 0; i < tensor.size(); ++i) detail::put_f64(bytes, tensor.data()[i]);
  }
  detail::write_file_bytes(path, bytes);
}

inline std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "EAM1")
    throw IoError(IoError::Kind::bad_magic,
                  "weights '" + path.string() + "': bad magic, expected EAM1");
  detail::ByteReader reader{bytes, 4, "weights '" + path.string() + "'"};

  std::map<std::string, Tensor> out;
  while (!reader.exhausted()) {
    const std::uint16_t name_len = reader.u16();
    if (name_len == 0)
      throw IoError(IoError::Kind::corrupt,
                    "weights '" + path.string() + "': empty tensor name");
    const std::string name = reader.str(name_len);
    const std::uint8_t axis_count = reader.u8();
    if (axis_count < 1 || axis_count > 4)
      throw IoError(IoError::Kind::corrupt, "weights '" + path.string() + "': tensor '" + name +
                                                "' has " + std::to_string(axis_count) +
                                                " axes, expected 1..4");
    std::vector<int> shape;
    std::uint64_t count = 1;
    for (int a = 0; a < axis_count; ++a) {
      const std::uint32_t axis = reader.u32();
      if (axis == 0 || axis > (1u << 24))
        throw IoError(IoError::Kind::dim_overflow,
                      "weights '" + path.string() + "': tensor '" + name +
                          "' axis out of bounds");
      count *= axis;
      if (count > (1ull << 28))
        throw IoError(IoError::Kind::dim_overflow,
                      "weights '" + path.string() + "': tensor '" + name + "' too large");
      shape.push_back(static_cast<int>(axis));
    }
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) values[i] = reader.f64();
    if (out.count(name))
      throw IoError(IoError::Kind::corrupt,
                    "weights '" + path.string() + "': duplicate tensor '" + name + "'");
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(values)));
  }
  return out;
}

namespace detail {

inline const Tensor& fetch_tensor(const std::map<std::string, Tensor>& tensors,
                                  const std::string& name, const std::string& where) {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw IoError(IoError::Kind::corrupt, where + ": missing tensor '" + name + "'");
  return it->second;
}

inline void expect_shape(const Tensor& t, const std::vector<int>& shape,
                         const std::string& name, const std::string& where) {
  if (t.shape() != shape)
    throw IoError(IoError::Kind::corrupt,
                  where + ": tensor '" + name + "' has shape " + shape_str(t.shape()) +
                      ", expected " + shape_str(shape));
}

}  // namespace detail

inline void save_model(const ModelParams& model, const ShaParams* sha,
                       const std::filesystem::path& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  ModelParams& m = const_cast<ModelParams&>(model);
  for (auto& [name, tensor] : m.named_tensors()) entries.emplace_back(name, *tensor);
  entries.emplace_back("merge.alpha", Tensor::scalar(model.merge_weights.alpha));
  entries.emplace_back("input.size", Tensor::scalar(static_cast<double>(model.input_size)));
  if (sha) {
    ShaParams& s = const_cast<ShaParams&>(*sha);
    for (auto& [name, tensor] : s.named_tensors()) entries.emplace_back(name, *tensor);
  }
  save_tensors(entries, path);
}

struct LoadedWeights {
  ModelParams model;
  std::optional<ShaParams> sha;
};

// Rebuilds the model (and the aggregator, when present) from a container,
// rejecting shape-inconsistent files.
inline LoadedWeights load_model(const std::filesystem::path& path) {
  const std::map<std::string, Tensor> tensors = load_tensors(path);
  const std::string where = "weights '" + path.string() + "'";

  LoadedWeights out;
  ModelParams& m = out.model;
  m.backbone[0].kernel = detail::fetch_tensor(tensors, "backbone.conv1.kernel", where).clone(true);
  m.backbone[0].bias = detail::fetch_tensor(tensors, "backbone.conv1.bias", where).clone(true);
  m.backbone[1].kernel = detail::fetch_tensor(tensors, "backbone.conv2.kernel", where).clone(true);
  m.backbone[1].bias = detail::fetch_tensor(tensors, "backbone.conv2.bias", where).clone(true);
  m.backbone[2].kernel = detail::fetch_tensor(tensors, "backbone.conv3.kernel", where).clone(true);
  m.backbone[2].bias = detail::fetch_tensor(tensors, "backbone.conv3.bias", where).clone(true);
  m.attention_kernel = detail::fetch_tensor(tensors, "attention.kernel", where).clone(true);
  m.attention_bias = detail::fetch_tensor(tensors, "attention.bias", where).clone(true);
  m.head_weight = detail::fetch_tensor(tensors, "head.weight", where).clone(true);
  m.head_bias = detail::fetch_tensor(tensors, "head.bias", where).clone(true);

  const Tensor& k1 = m.backbone[0].kernel;
  if (k1.rank() != 4 || k1.dim(0) != 3 || k1.dim(1) != 3 || k1.dim(2) != 1)
    throw IoError(IoError::Kind::corrupt,
                  where + ": tensor 'backbone.conv1.kernel' has shape " +
                      detail::shape_str(k1.shape()) + ", expected [3,3,1,*]");
  const int c1 = k1.dim(3);
  detail::expect_shape(m.backbone[0].bias, {c1}, "backbone.conv1.bias", where);
  if (m.backbone[1].kernel.rank() != 4 || m.backbone[1].kernel.dim(2) != c1)
    throw IoError(IoError::Kind::corrupt, where + ": conv2 kernel inconsistent with conv1");
  const int c2 = m.backbone[1].kernel.dim(3);
  detail::expect_shape(m.backbone[1].bias, {c2}, "backbone.conv2.bias", where);
  if (m.backbone[2].kernel.rank() != 4 || m.backbone[2].kernel.dim(2) != c2)
    throw IoError(IoError::Kind::corrupt, where + ": conv3 kernel inconsistent with conv2");
  const int c = m.backbone[2].kernel.dim(3);
  detail::expect_shape(m.backbone[2].bias, {c}, "backbone.conv3.bias", where);
  detail::expect_shape(m.attention_kernel, {1, 1, c, 1}, "attention.kernel", where);
  detail::expect_shape(m.attention_bias, {1}, "attention.bias", where);
  detail::expect_shape(m.head_weight, {c, 1}, "head.weight", where);
  detail::expect_shape(m.head_bias, {1}, "head.bias", where);

  const Tensor& alpha = detail::fetch_tensor(tensors, "merge.alpha", where);
  detail::expect_shape(alpha, {1}, "merge.alpha", where);
  if (alpha.data()[0] < 0.0 || alpha.data()[0] > 1.0)
    throw IoError(IoError::Kind::corrupt, where + ": merge.alpha outside [0,1]");
  m.merge_weights.alpha = alpha.data()[0];

  const Tensor& input_size = detail::fetch_tensor(tensors, "input.size", where);
  detail::expect_shape(input_size, {1}, "input.size", where);
  const int size = static_cast<int>(input_size.data()[0]);
  if (size < 8 || size % 8 != 0 ||
      static_cast<double>(size) != input_size.data()[0])
    throw IoError(IoError::Kind::corrupt, where + ": input.size must be a multiple of 8");
  m.input_size = size;

  if (tensors.count("sha.query")) {
    ShaParams sha;
    sha.query = detail::fetch_tensor(tensors, "sha.query", where).clone(true);
    sha.key = detail::fetch_tensor(tensors, "sha.key", where).clone(true);
    sha.value = detail::fetch_tensor(tensors, "sha.value", where).clone(true);
    sha.cls_token = detail::fetch_tensor(tensors, "sha.cls", where).clone(true);
    sha.head_weight = detail::fetch_tensor(tensors, "sha.head.weight", where).clone(true);
    sha.head_bias = detail::fetch_tensor(tensors, "sha.head.bias", where).clone(true);
    detail::expect_shape(sha.query, {c, c}, "sha.query", where);
    detail::expect_shape(sha.key, {c, c}, "sha.key", where);
    detail::expect_shape(sha.value, {c, c}, "sha.value", where);
    detail::expect_shape(sha.cls_token, {c}, "sha.cls", where);
    detail::expect_shape(sha.head_weight, {c, 1}, "sha.head.weight", where);
    detail::expect_shape(sha.head_bias, {1}, "sha.head.bias", where);
    out.sha = std::move(sha);
  }
  return out;
}

}  // namespace ctam
