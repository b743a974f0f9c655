#pragma once

#include <cstdint>
#include <filesystem>

#include "ctrlgs/trainer.hpp"

namespace ctrlgs {

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'R', 'L', 'G', 'S', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file little-endian checkpoint: magic, version, then tagged sections,
/// each prefixed by its byte length. Optimizer state is optional.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, bool with_optimizer = true);

/// Throws kLoad naming the section that failed.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace ctrlgs
