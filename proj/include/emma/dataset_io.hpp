#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emma/world.hpp"

namespace emma {

// Seed streams for the two generated splits. Deriving both master seeds from
// one run seed keeps the splits disjoint by construction (the training
// pipeline rejects splits that share a master seed).
constexpr std::uint64_t kTrainSplitStream = 0xDA7A;
constexpr std::uint64_t kEvalSplitStream = 0xE7A1;

// A generated split plus the configuration and seed that produced it.
struct Dataset {
    WorldConfig world;
    std::uint64_t master_seed = 0;
    std::vector<Sample> samples;
};

Dataset generate_dataset(const WorldConfig& config, std::uint64_t master_seed, std::int64_t count);

// Binary container with an 8-byte magic, version, config echo, records, and
// a trailing FNV-1a 64 digest over everything before it.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

// Raw file helpers shared by the artifact writers.
std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);
std::uint64_t file_digest(const std::string& path);

}  // namespace emma
