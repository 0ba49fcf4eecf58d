#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

// jpeglib.h needs size_t and FILE declared first.
#include <jpeglib.h>

#include "carve/error.hpp"
#include "carve/imaging.hpp"

namespace carve::imaging {
namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

std::uint8_t composite_over_black(std::uint8_t c, std::uint8_t a) {
  return static_cast<std::uint8_t>((static_cast<unsigned>(c) * a + 127u) / 255u);
}

ImageRGB decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ParseError(ParseErrorKind::BadImage, std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  if (img.width == 0 || img.height == 0 || img.width > (1u << 15) || img.height > (1u << 15)) {
    png_image_free(&img);
    throw ParseError(ParseErrorKind::BadImage, "png: unsupported dimensions");
  }
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError(ParseErrorKind::BadImage, "png: " + msg);
  }
  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  std::vector<Rgb> px(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::uint8_t a = rgba[4 * i + 3];
    px[i] = {composite_over_black(rgba[4 * i], a), composite_over_black(rgba[4 * i + 1], a),
             composite_over_black(rgba[4 * i + 2], a)};
  }
  return ImageRGB(h, w, std::move(px));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr) {}

// Only trivially destructible locals live in this frame, so longjmp is safe.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>* rgb,
                     int* h, int* w, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.output_message = jpeg_silent;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::memcpy(message, err.message, JMSG_LENGTH_MAX);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *h = static_cast<int>(cinfo.output_height);
  *w = static_cast<int>(cinfo.output_width);
  rgb->resize(static_cast<std::size_t>(*h) * static_cast<std::size_t>(*w) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb->data() + static_cast<std::size_t>(cinfo.output_scanline) * (*w) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

ImageRGB decode_jpeg(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> rgb;
  int h = 0;
  int w = 0;
  char message[JMSG_LENGTH_MAX] = {};
  if (!decode_jpeg_raw(bytes, &rgb, &h, &w, message)) {
    throw ParseError(ParseErrorKind::BadImage, std::string("jpeg: ") + message);
  }
  std::vector<Rgb> px(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]};
  return ImageRGB(h, w, std::move(px));
}

std::vector<std::uint8_t> encode(int h, int w, std::uint32_t format, const void* data) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

ImageRGB decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw ParseError(ParseErrorKind::BadImage, "not a PNG or JPEG stream");
}

ImageRGB read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

std::vector<std::uint8_t> encode_png(const ImageRGB& image) {
  static_assert(sizeof(Rgb) == 3);
  return encode(image.height(), image.width(), PNG_FORMAT_RGB, image.pixels().data());
}

void write_png(const ImageRGB& image, const std::filesystem::path& path) {
  write_file(path, encode_png(image));
}

std::vector<std::uint8_t> encode_gray_png(int height, int width, std::span<const std::uint8_t> gray) {
  if (gray.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ValidationError("gray buffer does not match dimensions");
  }
  return encode(height, width, PNG_FORMAT_GRAY, gray.data());
}

}  // namespace carve::imaging
