#include "spadvae/frame_io.hpp"

#include "spadvae/errors.hpp"
#include "spadvae/wire.hpp"

#include <fstream>

namespace spadvae {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'F', '1'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kMaxExtent = 16384;

} // namespace

std::vector<std::uint8_t> encode_frames(const LabeledSet& set) {
  if (set.has_labels && set.labels.size() != set.frames.size())
    throw UsageError("labeled set has " + std::to_string(set.labels.size()) +
                     " labels for " + std::to_string(set.frames.size()) +
                     " frames");
  std::size_t w = 0, h = 0;
  if (!set.frames.empty()) {
    w = set.frames.front().width();
    h = set.frames.front().height();
  }
  if (w > kMaxExtent || h > kMaxExtent)
    throw UsageError("frame dimensions exceed the format limit");

  std::vector<std::uint8_t> out;
  const std::size_t psz = Frame::packed_size(w, h);
  out.reserve(kFrameFileHeaderSize + set.frames.size() * psz +
              (set.has_labels ? set.frames.size() : 0));
  out.insert(out.end(), kMagic, kMagic + 4);
  wire::put_u16(out, kVersion);
  wire::put_u16(out, set.has_labels ? kFlagLabels : 0);
  wire::put_u32(out, static_cast<std::uint32_t>(w));
  wire::put_u32(out, static_cast<std::uint32_t>(h));
  wire::put_u32(out, static_cast<std::uint32_t>(set.frames.size()));

  for (const Frame& f : set.frames) {
    if (f.width() != w || f.height() != h)
      throw UsageError("all frames in a file must share one geometry");
    out.insert(out.end(), f.bytes().begin(), f.bytes().end());
  }
  if (set.has_labels)
    for (FrameLabel l : set.labels)
      out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

LabeledSet decode_frames(const std::uint8_t* data, std::size_t size) {
  wire::Reader rd(data, size);
  std::uint8_t magic[4];
  rd.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError::at("bad magic (not a frame file)", 0);
  const std::uint16_t version = rd.u16("version");
  if (version != kVersion)
    throw IoError::at("unsupported version " + std::to_string(version), 4);
  const std::uint16_t flags = rd.u16("flags");
  if (flags & ~kFlagLabels)
    throw IoError::at("unknown flag bits", 6);
  const std::uint32_t w = rd.u32("width");
  const std::uint32_t h = rd.u32("height");
  const std::uint32_t n = rd.u32("frame count");
  if (w > kMaxExtent || h > kMaxExtent)
    throw IoError::at("frame dimensions exceed the format limit", 8);
  if (n > 0 && (w == 0 || h == 0))
    throw IoError::at("frames with zero extent", 8);

  const bool labeled = (flags & kFlagLabels) != 0;
  const std::size_t psz = Frame::packed_size(w, h);
  const std::size_t expected = kFrameFileHeaderSize +
                               static_cast<std::size_t>(n) * psz +
                               (labeled ? n : 0);
  if (size < expected)
    throw IoError::at("truncated payload: need " + std::to_string(expected) +
                          " bytes, have " + std::to_string(size),
                      size);
  if (size > expected)
    throw IoError::at("trailing bytes after payload", expected);

  LabeledSet set;
  set.has_labels = labeled;
  set.frames.reserve(n);
  // Mask any nonzero pad bits in the last byte of each frame.
  const unsigned tail_bits = static_cast<unsigned>(
      static_cast<std::size_t>(w) * h % 8);
  const std::uint8_t tail_mask =
      tail_bits == 0 ? 0xFF
                     : static_cast<std::uint8_t>(0xFF00u >> tail_bits);
  for (std::uint32_t i = 0; i < n; ++i) {
    Frame f(w, h);
    rd.bytes(f.bytes().data(), psz, "frame pixels");
    if (psz > 0) f.bytes().back() &= tail_mask;
    set.frames.push_back(std::move(f));
  }
  if (labeled) {
    set.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t off = rd.pos();
      std::uint8_t b = 0;
      rd.bytes(&b, 1, "label");
      if (b > 1) throw IoError::at("invalid label value", off);
      set.labels.push_back(static_cast<FrameLabel>(b));
    }
  }
  return set;
}

LabeledSet read_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open frame file '" + path + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on frame file '" + path + "'");
  try {
    return decode_frames(data.data(), data.size());
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " in '" + path + "'");
  }
}

void write_frames(const std::string& path, const LabeledSet& set) {
  const std::vector<std::uint8_t> data = encode_frames(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw IoError("write failure on '" + path + "'");
}

} // namespace spadvae
