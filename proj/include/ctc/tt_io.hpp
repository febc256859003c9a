#pragma once

// A TT model on disk is two files: <stem>.dten holding the K cores as
// back-to-back DTEN records, and <stem>.json with dims, rank and left_orthogonal.

#include <filesystem>

#include "ctc/tt.hpp"

namespace ctc {

void write_tt(const std::filesystem::path& stem, const TT& t);
TT read_tt(const std::filesystem::path& stem);

}  // namespace ctc
