#pragma once

#include <string>
#include <string_view>

#include "jsa/jsa.hpp"

namespace jsa {

// Versioned binary container: magic "JSACKPT1", u32 version, then the
// architecture string, an opaque metadata string (the CLI stores its config
// JSON there), counters, lambda, Adam moments, the best-validation snapshot,
// the latent cache (bit-packed) and the rng state. Integers and doubles are
// little-endian.
inline constexpr std::string_view kCheckpointMagic = "JSACKPT1";
inline constexpr unsigned kCheckpointVersion = 1;

/// Written to a temporary file first and renamed, so a crash never leaves a
/// half-written checkpoint behind.
void save_checkpoint(const std::string& path, const TrainState& state, std::string_view meta);

/// Rebuilds the model from the stored architecture. Throws config_error when
/// the file cannot be opened and format_error on malformed content.
TrainState load_checkpoint(const std::string& path, std::string* meta = nullptr);

}  // namespace jsa
