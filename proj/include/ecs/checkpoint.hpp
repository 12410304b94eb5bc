#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecs/genome.hpp"
#include "ecs/network.hpp"

namespace ecs {

inline constexpr int kCheckpointVersion = 1;

/// On-disk layout:
///   ECS-CHECKPOINT
///   version <v>
///   kind <kind>
///   <header lines>
///   payload <byte count>
///   <payload bytes><crc32 of everything before it, 4 bytes little-endian>
struct CheckpointContainer {
  std::string kind;
  std::vector<std::string> header;
  std::string payload;
};

std::string encode_container(const CheckpointContainer& c);
CheckpointContainer decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path,
                     const CheckpointContainer& c);
CheckpointContainer read_container(const std::filesystem::path& path);

/// Peeks at the kind without validating the payload.
std::string checkpoint_kind(const std::filesystem::path& path);

/// Network: spec lines and a tensor manifest in the header, raw f32 payload.
void save_checkpoint(const TrainedNetwork& net,
                     const std::filesystem::path& path);
TrainedNetwork load_network(const std::filesystem::path& path);

/// Individual: layout and bit string in the header, empty payload.
void save_checkpoint(const Individual& ind, const std::filesystem::path& path);
Individual load_individual(const std::filesystem::path& path);

/// Evolution log: the JSONL text as payload.
void save_log_checkpoint(const std::string& jsonl,
                         const std::filesystem::path& path);
std::string load_log_checkpoint(const std::filesystem::path& path);

/// Text forms used inside headers.
std::vector<std::string> spec_lines(const NetworkSpec& spec);
NetworkSpec parse_spec_lines(const std::vector<std::string>& lines);
std::string layout_line(const MaskLayout& layout);
MaskLayout parse_layout_line(const std::string& line);

}  // namespace ecs
