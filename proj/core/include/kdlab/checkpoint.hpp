#pragma once

#include <map>
#include <string>

#include "kdlab/lora.hpp"
#include "kdlab/model.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

// Container format (little-endian):
//   magic "KDCPv001"
//   u32 meta_len, meta JSON (kind, dtype, model/adapter config, tensor count)
//   per tensor: u32 name_len, name bytes, u32 ndim, u32 dims..., raw values
// Loaders validate magic, kind, and dtype and fail loudly on mismatch.

template <typename T>
void save_model(const std::string& path, const TransformerLM<T>& model);

template <typename T>
TransformerLM<T> load_model(const std::string& path);

template <typename T>
void save_adapter(const std::string& path, const LoraAdapter<T>& adapter);

template <typename T>
LoraAdapter<T> load_adapter(const std::string& path);

}  // namespace kdlab
