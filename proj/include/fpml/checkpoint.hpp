#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "fpml/backbone.hpp"
#include "fpml/training.hpp"

namespace fpml {

// Binary layout: "FPMLCKPT", u32 version, kind string, payload. Every
// checkpoint gets a `<path>.meta` text sidecar with one `key=value` per line.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind { embedding, train_state };
std::string to_string(CheckpointKind k);

using CheckpointMeta = std::map<std::string, std::string>;

void save_embedding(const EmbeddingParams& params, const std::filesystem::path& path,
                    const CheckpointMeta& extra = {});
// With `expected`, an architecture mismatch raises FormatError.
EmbeddingParams load_embedding(const std::filesystem::path& path,
                               const ArchSpec* expected = nullptr);

void save_train_state(const TrainState& state, const std::filesystem::path& path,
                      const CheckpointMeta& extra = {});
TrainState load_train_state(const std::filesystem::path& path, const ArchSpec* expected = nullptr);

CheckpointKind peek_checkpoint_kind(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace fpml
