#include "blastlime/imgcore/io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "blastlime/error.hpp"

namespace blastlime::img {
namespace {

enum class Format { Png, Jpeg, Unknown };

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

Format sniff(const std::vector<unsigned char>& bytes) {
  static constexpr std::array<unsigned char, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin())) return Format::Png;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return Format::Jpeg;
  return Format::Unknown;
}

Image from_rgb8(int width, int height, const std::vector<unsigned char>& rgb) {
  std::vector<float> data(rgb.size());
  std::transform(rgb.begin(), rgb.end(), data.begin(),
                 [](unsigned char v) { return static_cast<float>(v) / 255.0F; });
  return Image(width, height, 3, std::move(data));
}

Image decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()) == 0) {
    throw FormatError("invalid PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr) == 0) {
    std::string message = png.message;
    png_image_free(&png);
    throw FormatError("cannot decode PNG " + path.string() + ": " + message);
  }
  return from_rgb8(static_cast<int>(png.width), static_cast<int>(png.height), rgb);
}

struct JpegErrorManager {
  jpeg_error_mgr base{};
  std::jmp_buf jump{};
  std::array<char, JMSG_LENGTH_MAX> message{};
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message.data());
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  jpeg_decompress_struct info{};
  JpegErrorManager err;
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  // Everything touched after setjmp lives in storage that outlives the jump.
  std::vector<unsigned char> rgb;
  int width = 0;
  int height = 0;
  if (setjmp(err.jump) != 0) {
    jpeg_destroy_decompress(&info);
    throw FormatError("cannot decode JPEG " + path.string() + ": " + err.message.data());
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  width = static_cast<int>(info.output_width);
  height = static_cast<int>(info.output_height);
  rgb.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(info.output_scanline) * width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return from_rgb8(width, height, rgb);
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  switch (sniff(bytes)) {
    case Format::Png:
      return decode_png(bytes, path);
    case Format::Jpeg:
      return decode_jpeg(bytes, path);
    case Format::Unknown:
      break;
  }
  throw FormatError("unsupported image format (expected PNG or JPEG): " + path.string());
}

Image load_image(const std::filesystem::path& path, Size target) {
  return resize_bilinear(load_image(path), target);
}

Image load_mask(const std::filesystem::path& path) {
  const Image rgb = load_image(path);
  Image mask(rgb.width(), rgb.height(), 1);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const bool on = rgb.at(x, y, 0) > 0.0F || rgb.at(x, y, 1) > 0.0F || rgb.at(x, y, 2) > 0.0F;
      mask.at(x, y, 0) = on ? 1.0F : 0.0F;
    }
  }
  return mask;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ShapeError("PNG output supports 1 or 3 channels");
  }
  std::vector<unsigned char> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
  });
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = image.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

}  // namespace blastlime::img
