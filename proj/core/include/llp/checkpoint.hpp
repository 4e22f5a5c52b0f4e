#pragma once

#include "llp/netzoo.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace llp {

inline constexpr int kCheckpointVersion = 1;

/// FNV-1a over the bytes of `text`.
std::uint64_t fnv1a64(const std::string& text);

/// Self-describing container:
///   {"format": ..., "version": ..., "checksum": "<hex>", "payload": {...}}
/// The checksum covers the serialized payload.
void write_container(const std::filesystem::path& path, const std::string& format, const nlohmann::json& payload);

/// Throws Integrity on unreadable/corrupt files or a checksum mismatch and
/// IncompatibleVersion when the version differs from kCheckpointVersion.
nlohmann::json read_container(const std::filesystem::path& path, const std::string& format);

/// Spec plus flat parameter and buffer arrays.
nlohmann::json network_state(Network& net);
/// Loads parameters into a network built from the same spec.
void load_network_state(Network& net, const nlohmann::json& state);

/// Standalone model checkpoint: network state plus the RNG state.
void save_model(const std::filesystem::path& path, Network& net, const Rng& rng);
/// Rebuilds the network from the stored spec and restores `rng`.
Network load_model(const std::filesystem::path& path, Rng& rng);

}  // namespace llp
