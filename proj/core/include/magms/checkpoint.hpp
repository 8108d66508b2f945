// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint archive layout (all integers and floats little-endian):
//   "MAGMSCKP" | u32 version | u64 len + config JSON | u64 iteration
//   | u64 init seed | i64 optimizer steps
//   | u32 n | n x (name, u32 rank, i64 dims[rank], f32 values, f32 m, f32 v)
//   | u32 k | k x (name, u32 rank, i64 dims[rank], f32 values)   buffers
//   | u64 FNV-1a of all preceding bytes
// Strings are u32 length + bytes.

#pragma once

#include <cstdint>
#include <string>

#include "magms/training.hpp"

namespace magms {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::string& path);

/// When `expected` is given, the stored configuration must hash identically.
TrainState load_checkpoint(const std::string& path, const ExperimentConfig* expected = nullptr);

/// Configuration stored in a checkpoint, without building the model.
ExperimentConfig peek_checkpoint_config(const std::string& path);

/// FNV-1a over the file bytes.
std::uint64_t file_digest(const std::string& path);

/// Number of successful load_checkpoint calls in this process.
std::uint64_t checkpoint_load_count();

}  // namespace magms
