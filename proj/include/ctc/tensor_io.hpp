#pragma once

// DTEN v1: "DTEN" | u8 version=1 | u8 element code=1 (float64) | u32le K |
// K × u32le dims | prod(dims) × f64le values, first index fastest. NaN = missing.

#include <filesystem>
#include <iosfwd>

#include "ctc/tensor.hpp"

namespace ctc {

void write_dten(std::ostream& out, const DenseTensor& x);
DenseTensor read_dten(std::istream& in);

void write_dten(const std::filesystem::path& path, const DenseTensor& x);
DenseTensor read_dten(const std::filesystem::path& path);

}  // namespace ctc
