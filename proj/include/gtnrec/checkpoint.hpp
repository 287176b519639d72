#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gtnrec/model.hpp"
#include "gtnrec/tensor.hpp"

namespace gtnrec {

/// Flat named-tensor container, binary format:
///   "GTNRCKP1" | u32 count | per tensor: u32 name_len, name bytes,
///   u64 rows, u64 cols, rows*cols doubles (host byte order).
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::map<std::string, Tensor> load_tensors(const std::string& path);

/// Writes ckpt file plus a model.json manifest describing kind and dims
/// into `dir` (which must exist).
void save_model(const std::string& dir, const Model& model, std::uint64_t seed);

/// Reconstructs the model from model.json + ckpt_best.bin in `dir`.
/// A tensor whose stored shape disagrees with the manifest dims is a
/// format error.
Model load_model(const std::string& dir);

}  // namespace gtnrec
