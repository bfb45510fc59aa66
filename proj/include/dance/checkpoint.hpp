#pragma once

#include "dance/trainer.hpp"

#include <cstdint>
#include <string>

namespace dance {

// Versioned binary container: magic "DANC", format version, config hash,
// parameter blobs in declared order, FNV-1a checksum over the payload.
// Round-trips are bit-exact, including optimizer moments, importance
// trackers, activation buffers, and rng stream counters, so a resumed run
// replays identically.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const RunState& state, const std::string& path, std::uint64_t config_hash);

// Checksum failures throw FormatError. A config-hash mismatch throws
// ValidationError unless force is set (the CLI maps this to --force).
RunState load_checkpoint(const std::string& path, std::uint64_t expected_config_hash,
                         bool force = false);

std::uint64_t checkpoint_config_hash(const std::string& path);

// Architecture card: one line per layer, `layer <l> k=<k> mask=<hex>`.
void write_architecture_card(const std::string& path, const std::vector<LayerMask>& masks);
std::vector<LayerMask> read_architecture_card(const std::string& path,
                                              const std::vector<std::size_t>& widths);

} // namespace dance
