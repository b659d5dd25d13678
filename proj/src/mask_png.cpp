#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "protoseg/episodes_io.hpp"

namespace protoseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open " + path.string());
  return f;
}

void on_png_error(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  std::longjmp(png_jmpbuf(png), 1);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

ClassMask read_mask(const std::filesystem::path& path, std::optional<ImageSize> expected_size) {
  File file = open(path, "rb");
  unsigned char signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw Error(path.string() + ": not a PNG file");
  }

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
  if (!png) throw Error("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: cannot create info struct");
  }

  // Nothing with a destructor may live between setjmp and longjmp.
  std::vector<std::uint8_t>* labels = new std::vector<std::uint8_t>();
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  enum class Failure { kNone, kChannels, kDepth, kLibpng };
  volatile Failure failure = Failure::kNone;
  volatile png_uint_32 width = 0;
  volatile png_uint_32 height = 0;

  if (setjmp(png_jmpbuf(png))) {
    failure = Failure::kLibpng;
  } else {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
      failure = Failure::kChannels;
    } else if (depth > 8) {
      failure = Failure::kDepth;
    } else {
      if (depth < 8) png_set_packing(png);
      png_read_update_info(png, info);
      const png_uint_32 w = width;
      const png_uint_32 h = height;
      labels->resize(static_cast<std::size_t>(w) * h);
      rows->resize(h);
      for (png_uint_32 y = 0; y < h; ++y) (*rows)[y] = labels->data() + static_cast<std::size_t>(y) * w;
      png_read_image(png, rows->data());
      png_read_end(png, nullptr);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::unique_ptr<std::vector<std::uint8_t>> owned_labels(labels);
  std::unique_ptr<std::vector<png_bytep>> owned_rows(rows);

  switch (static_cast<Failure>(failure)) {
    case Failure::kChannels:
      throw Error(path.string() + ": mask must be single-channel");
    case Failure::kDepth:
      throw Error(path.string() + ": mask must be 8-bit");
    case Failure::kLibpng:
      throw Error(path.string() + ": " + message);
    case Failure::kNone:
      break;
  }
  ClassMask mask(static_cast<int>(height), static_cast<int>(width), std::move(*owned_labels));
  if (expected_size && mask.size() != *expected_size) {
    throw Error(path.string() + ": mask size " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                " does not match expected " + std::to_string(expected_size->height) + "x" +
                std::to_string(expected_size->width));
  }
  return mask;
}

void write_mask(const ClassMask& mask, const std::filesystem::path& path) {
  File file = open(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
  if (!png) throw Error("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: cannot create info struct");
  }
  auto* rows = new std::vector<png_bytep>(static_cast<std::size_t>(mask.height()));
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width()), static_cast<png_uint_32>(mask.height()), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    auto* base = const_cast<std::uint8_t*>(mask.labels().data());
    for (int y = 0; y < mask.height(); ++y) {
      (*rows)[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * mask.width();
    }
    png_write_image(png, rows->data());
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  delete rows;
  if (failed) throw Error(path.string() + ": " + message);
}

}  // namespace protoseg
