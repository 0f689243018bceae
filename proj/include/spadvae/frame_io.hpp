#pragma once

// Binary frame-file format ("SPF1"): a fixed 20-byte little-endian header
// (magic, version, flags, width, height, frame count) followed by each
// frame's continuous MSB-first bit packing and, when flagged, one label
// byte per frame. Reading masks any nonzero trailing pad bits so the
// in-memory invariant (unused bits are zero) always holds.

#include "spadvae/datagen.hpp"

#include <string>

namespace spadvae {

inline constexpr std::size_t kFrameFileHeaderSize = 20;

LabeledSet read_frames(const std::string& path);
void write_frames(const std::string& path, const LabeledSet& set);

// In-memory codec used by the file functions (and handy for tests).
std::vector<std::uint8_t> encode_frames(const LabeledSet& set);
LabeledSet decode_frames(const std::uint8_t* data, std::size_t size);

} // namespace spadvae
