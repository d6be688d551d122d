#pragma once

#include <filesystem>
#include <iosfwd>

#include "dcpl/nn.hpp"

// Parameter checkpoint file, all integers little-endian:
//   magic "DCPW" | version u32 | count u32 |
//   count × { name_len u16 | name bytes | rank u8 | dims u32 × rank | float64 × numel }
namespace dcpl::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParamList& params);
ParamList read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
ParamList load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into the same-named tensors of `target`.
// Every target name must be present with an identical shape.
void assign(const ParamList& target, const ParamList& source);

}  // namespace dcpl::nn
