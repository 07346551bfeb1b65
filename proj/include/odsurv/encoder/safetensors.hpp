#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace odsurv::encoder {

enum class DType { F64, F32, F16, BF16 };

struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;  // row-major, widened to double

    std::int64_t numel() const;
};

struct TensorFile {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

// Reads F64/F32/F16/BF16 tensors; other dtypes are a parse error.
TensorFile read_safetensors(const std::string& path);

// Writes tensors in name order, little-endian, with the given storage type.
void write_safetensors(const std::string& path, const TensorFile& file, DType dtype = DType::F64);

}  // namespace odsurv::encoder
