#pragma once

// NTB tensor files: 8-byte magic "CVQTNSR1", u32 rank, rank x u64 dims,
// then the float64 payload, all little-endian. Integer tensors (labels,
// token indices) are stored as exactly representable float64 values.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvq/tensor.hpp"

namespace cvq::ntb {

inline constexpr char kMagic[8] = {'C', 'V', 'Q', 'T', 'N', 'S', 'R', '1'};

std::string encode(const Shape& shape, std::span<const double> data);
void decode(const std::string& bytes, Shape& shape, std::vector<double>& data);

void write(const std::filesystem::path& path, const Tensor& tensor);
Tensor read(const std::filesystem::path& path);

void write_indices(const std::filesystem::path& path, const Shape& shape, std::span<const std::size_t> values);
std::vector<std::size_t> read_indices(const std::filesystem::path& path, Shape* shape = nullptr);

}  // namespace cvq::ntb
