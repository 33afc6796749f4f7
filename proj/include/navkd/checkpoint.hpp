#pragma once

// Binary parameter snapshots.
//
// Layout (little-endian):
//   "MVLN" | u32 version | u64 config digest | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 dims[rank] | f64 values
//   u64 FNV-1a checksum of every preceding byte

#include <cstdint>
#include <filesystem>
#include <string>

#include "navkd/model.hpp"

namespace navkd {

constexpr std::uint32_t kCheckpointVersion = 1;

void save_parameters(const ParameterSet& params, std::uint64_t digest, const std::filesystem::path& path);
// Overwrites every parameter of `params` from the file. Throws ChecksumError,
// ConfigDigestMismatch, FormatError or ShapeError.
void load_parameters(ParameterSet& params, std::uint64_t digest, const std::filesystem::path& path);

void save_checkpoint(const DuetModel& model, const std::filesystem::path& path);
// Throws ConfigDigestMismatch when the file was written for another config.
DuetModel load_checkpoint(const ModelConfig& cfg, const std::filesystem::path& path);
void load_checkpoint_into(DuetModel& model, const std::filesystem::path& path);

// Digest stored in a checkpoint header.
std::uint64_t checkpoint_digest(const std::filesystem::path& path);
// FNV-1a 64 of a file's bytes, for provenance in summaries.
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace navkd
