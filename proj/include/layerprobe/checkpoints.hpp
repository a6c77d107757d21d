// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/arch.hpp"
#include "layerprobe/params.hpp"
#include "layerprobe/trainer.hpp"

namespace lp {

inline constexpr char kCheckpointMagic[4] = {'L', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 2;
inline constexpr const char* kLibraryVersion = "0.3.0";

/// .lpck layout, little-endian throughout:
///   "LPCK" | u32 version | u64 arch hash | u32 epoch | u32 record count
///   per record: u32 name length | name "layer/tensor" | u8 dtype (0 = f32)
///               | u8 trainable | u32 rank | u32 dims[rank]
///               | u64 payload bytes | payload
///   trailer: u64 FNV-1a of every preceding byte
std::vector<std::uint8_t> encode_checkpoint(const ArchSpec& arch, int epoch,
                                            const ParamSet& params);

struct DecodedCheckpoint {
  int epoch = 0;
  ParamSet params;
};

/// Rejects a bad magic, unknown version, arch hash mismatch, a payload that
/// disagrees with its dims, trailing bytes, or a parameter set that does not
/// match `arch`.
DecodedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    const ArchSpec& arch,
                                    const std::string& what = "checkpoint");

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ArchSpec& arch,
                     int epoch, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path, const ArchSpec& arch,
                         int* epoch = nullptr);

/// Everything needed to rebuild checkpoint-0 and to resample any layer's
/// init distribution.
struct Manifest {
  std::string run_id;
  ArchSpec arch;
  TrainConfig config;
  std::uint64_t seed = 0;
  std::string dataset_id;
  Normalization normalization;
  std::string library_version = kLibraryVersion;

  /// Per layer, per tensor: family, bound, constant (derived from arch).
  nlohmann::json init_table() const;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

Manifest manifest_of(const CheckpointSeries& series);

std::string checkpoint_filename(int epoch);

/// run/<id>/manifest, run/<id>/ckpt-<tau>.lpck, run/<id>/log.csv.
void save_run(const CheckpointSeries& series, const std::filesystem::path& dir);
void write_manifest(const Manifest& manifest, const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);
void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);
std::vector<EpochLog> read_log_csv(const std::filesystem::path& path);

/// Loads every checkpoint 0..T listed in the log of `dir`.
CheckpointSeries load_run(const std::filesystem::path& dir);

/// Streams checkpoints into `dir` as train() produces them.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, Manifest manifest);
  void operator()(int tau, const ParamSet& params, const EpochLog& log);

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::vector<EpochLog> log_;
};

}  // namespace lp
