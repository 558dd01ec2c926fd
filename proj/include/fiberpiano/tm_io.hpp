#pragma once

#include <filesystem>
#include <iosfwd>

#include <nlohmann/json.hpp>

#include "fiberpiano/fiber.hpp"

namespace fiberpiano {

/// JSON dump: {"format", "rows", "cols", "bank_seed", "segment_seed", "displacements",
/// "data": [re00, im00, re01, im01, ...]} in row-major order.
nlohmann::json tm_to_json(const TransmissionMatrix& tm);
TransmissionMatrix tm_from_json(const nlohmann::json& j);

/// Binary dump, little-endian:
///   "FPTM" | u32 version=1 | u32 rows | u32 cols | u64 bank_seed | u64 segment_seed |
///   u32 n_displacements | f64 displacements[n] | f64 data[2 * rows * cols] (row-major, re/im)
void write_tm_binary(std::ostream& out, const TransmissionMatrix& tm);
TransmissionMatrix read_tm_binary(std::istream& in);

void save_tm(const std::filesystem::path& path, const TransmissionMatrix& tm);
/// Dispatches on extension: ".json" is JSON, anything else binary.
TransmissionMatrix load_tm(const std::filesystem::path& path);

}  // namespace fiberpiano
