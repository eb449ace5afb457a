// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-oriented dataset file, version 1:
//
//   METAXP-DATASET 1
//   recipe <name>
//   generation <one-line JSON, or {}>
//   section train <count>
//   utt <id> <domain> <T> <F> <L> <label_1> ... <label_L>
//   <F feature values>                      (T lines)
//   ...
//   section test_source <count>
//   ...
//   section test_accent <domain> <count>    (once per accent domain)
//   ...
//   end
//   checksum <16 hex digits>
//
// Feature values use the shortest decimal form that round-trips, so reading
// back is bit-exact. The checksum is FNV-1a 64 over every byte before the
// checksum line.

#include <filesystem>
#include <string>

#include "metaxp/synth.hpp"

namespace metaxp::synth {

std::string format_dataset(const DatasetPartition& partition, const std::string& generation_json = "{}");
// Throws ParseError (with line number) on malformed or truncated input and
// IntegrityError on checksum mismatch.
DatasetPartition parse_dataset(const std::string& text);

void write_dataset(const DatasetPartition& partition, const std::filesystem::path& path,
                   const std::string& generation_json = "{}");
DatasetPartition read_dataset(const std::filesystem::path& path);

}  // namespace metaxp::synth
