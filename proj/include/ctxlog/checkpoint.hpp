#pragma once

#include <filesystem>
#include <vector>

#include "ctxlog/matrix.hpp"
#include "ctxlog/model.hpp"

namespace ctxlog {

// Little-endian layout:
//   "CLCK" u32 version=1 u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data (row-major)
void save_checkpoint(const ParameterStore<float>& params, const std::filesystem::path& path);

// Reads every tensor as stored. Throws CorruptCheckpoint on a bad magic,
// version, or a short read.
ParameterStore<float> load_checkpoint(const std::filesystem::path& path);

// Reads and checks that names and shapes match what `cfg` expects.
ParameterStore<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

// "CLEM" u32 version=1 u32 count u32 dim, f32 data row-major.
void save_embeddings(const Matrix<float>& embeddings, const std::filesystem::path& path);
Matrix<float> load_embeddings(const std::filesystem::path& path);

} // namespace ctxlog
