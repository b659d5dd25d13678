#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>

#include "protoseg/episodes_io.hpp"

namespace protoseg {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

constexpr char kMagic[4] = {'F', 'S', 'S', 'D'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
    auto u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::byte>(u & 0xFFu));
      u = static_cast<U>(u >> 8);
    }
  }
  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (float v : values) le(v);
    }
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  bool has(std::size_t n) const { return in_.size() - pos_ >= n; }
  std::size_t remaining() const { return in_.size() - pos_; }

  template <typename U>
  U le() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v = static_cast<U>(v | (static_cast<U>(std::to_integer<unsigned>(in_[pos_ + i])) << (8 * i)));
    }
    pos_ += sizeof(U);
    return v;
  }
  void floats(std::vector<float>& out, std::size_t n) {
    out.resize(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), in_.data() + pos_, n * sizeof(float));
      pos_ += n * sizeof(float);
    } else {
      for (auto& v : out) v = std::bit_cast<float>(le<std::uint32_t>());
    }
  }
  const std::byte* here() const { return in_.data() + pos_; }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

[[noreturn]] void truncated(int layer) {
  throw FormatError(FormatErrorKind::kTruncated, "unexpected end of file at layer " + std::to_string(layer));
}

void check_finite(const std::vector<float>& v, int layer, const char* block) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw FormatError(FormatErrorKind::kNonFinite, std::string("non-finite ") + block + " value at layer " +
                                                         std::to_string(layer) + " offset " + std::to_string(i));
    }
  }
}

}  // namespace

std::vector<std::byte> encode_feature_file(const LayerStack& stack) {
  if (stack.num_layers() > 0xFFFF) throw Error("feature file: too many layers");
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint16_t>(kFeatureFileVersion);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(stack.num_layers()));
  for (const auto& layer : stack.layers()) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(layer.patches.height()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(layer.patches.width()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(layer.patches.channels()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(layer.registers.count()));
    w.floats(layer.patches.data());
    w.floats(layer.registers.data());
  }
  return w.take();
}

LayerStack decode_feature_file(std::span<const std::byte> bytes, std::optional<ImageSize> image_size) {
  Reader r(bytes);
  if (!r.has(4)) throw FormatError(FormatErrorKind::kTruncated, "unexpected end of file in header");
  if (std::memcmp(r.here(), kMagic, 4) != 0) throw FormatError(FormatErrorKind::kBadMagic, "bad magic");
  r.le<std::uint32_t>();
  if (!r.has(4)) throw FormatError(FormatErrorKind::kTruncated, "unexpected end of file in header");
  const auto version = r.le<std::uint16_t>();
  if (version != kFeatureFileVersion) {
    throw FormatError(FormatErrorKind::kBadVersion, "unsupported version " + std::to_string(version));
  }
  const auto count = r.le<std::uint16_t>();
  if (count == 0) throw FormatError(FormatErrorKind::kSizeMismatch, "file declares zero layers");

  std::vector<LayerFeatures> layers;
  layers.reserve(count);
  std::uint32_t h0 = 0, w0 = 0, d0 = 0, r0 = 0;
  for (int l = 1; l <= count; ++l) {
    if (!r.has(16)) truncated(l);
    const auto h = r.le<std::uint32_t>();
    const auto w = r.le<std::uint32_t>();
    const auto d = r.le<std::uint32_t>();
    const auto regs = r.le<std::uint32_t>();
    if (l == 1) {
      h0 = h, w0 = w, d0 = d, r0 = regs;
      if (h == 0 || w == 0 || d == 0) {
        throw FormatError(FormatErrorKind::kSizeMismatch, "layer 1 declares an empty feature map");
      }
    } else if (h != h0 || w != w0 || d != d0 || regs != r0) {
      throw FormatError(FormatErrorKind::kSizeMismatch,
                        "size mismatch: layer " + std::to_string(l) + " shape differs from layer 1");
    }
    const std::uint64_t patch_values = std::uint64_t{h} * w * d;
    const std::uint64_t reg_values = std::uint64_t{regs} * d;
    if (patch_values > r.remaining() / 4 || reg_values > (r.remaining() / 4) - patch_values) truncated(l);
    std::vector<float> patches;
    std::vector<float> registers;
    r.floats(patches, static_cast<std::size_t>(patch_values));
    r.floats(registers, static_cast<std::size_t>(reg_values));
    check_finite(patches, l, "patch");
    check_finite(registers, l, "register");
    layers.push_back({FeatureMap(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d), std::move(patches)),
                      RegisterTokens(static_cast<int>(regs), static_cast<int>(d), std::move(registers))});
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorKind::kSizeMismatch,
                      "size mismatch: " + std::to_string(r.remaining()) + " trailing bytes after last layer");
  }
  const ImageSize size = image_size.value_or(ImageSize{static_cast<int>(h0), static_cast<int>(w0)});
  return LayerStack(std::move(layers), size);
}

void write_feature_file(const LayerStack& stack, const std::filesystem::path& path) {
  const auto bytes = encode_feature_file(stack);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::kIo, "write failed for " + path.string());
}

LayerStack read_feature_file(const std::filesystem::path& path, std::optional<ImageSize> image_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_feature_file(std::as_bytes(std::span(buf)), image_size);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace protoseg
