#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fdbq/model.hpp"

namespace fdbq::ckpt {

inline constexpr char magic[8] = {'F', 'D', 'B', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t format_version = 1;

struct Checkpoint {
    model::TransformerLM model;
    std::uint64_t rng_seed = 0;
    // Free-form provenance (command, source checkpoint, ...); stored in the
    // header and returned unchanged on load.
    nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json config_to_json(const model::ModelConfig& c);
model::ModelConfig config_from_json(const nlohmann::json& j);

// Byte layout is documented in docs/FORMATS.md. serialize(deserialize(b))
// reproduces b exactly.
std::vector<std::uint8_t> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace fdbq::ckpt
