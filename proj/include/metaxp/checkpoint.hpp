// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint container (format version 1), all integers and floats
// little-endian:
//
//   8 bytes   magic "MXPCKPT1"
//   u32       format version
//   u32       header length N
//   N bytes   UTF-8 JSON header: model_config, parameters [{name, shape}]
//             in declaration order, frozen [names], has_snapshot
//   f64[]     parameter values, declaration order, row-major
//   f64[]     snapshot values in the same layout (only if has_snapshot)
//   u64       FNV-1a 64 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "metaxp/model.hpp"

namespace metaxp::asr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const AsrModel& model);
// Throws IntegrityError on checksum mismatch and ParseError (line 0) on
// structural damage.
AsrModel decode_checkpoint(std::string_view bytes);

void save_checkpoint(const AsrModel& model, const std::filesystem::path& path);
AsrModel load_checkpoint(const std::filesystem::path& path);

}  // namespace metaxp::asr
