#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <png.h>

#include "sgz/errors.hpp"
#include "sgz/image.hpp"

namespace sgz {
namespace {

enum class FileKind { Png, Jpeg, Unknown };

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

FileKind sniff(const std::vector<unsigned char>& bytes) {
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return FileKind::Png;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return FileKind::Jpeg;
  }
  return FileKind::Unknown;
}

Tensor from_interleaved(const unsigned char* rgb, int height, int width) {
  Tensor t(3, height, width);
  const std::size_t plane = t.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    t[i] = rgb[3 * i] / 255.0;
    t[plane + i] = rgb[3 * i + 1] / 255.0;
    t[2 * plane + i] = rgb[3 * i + 2] / 255.0;
  }
  return t;
}

std::vector<unsigned char> to_interleaved(const Tensor& t) {
  const std::size_t plane = t.plane_size();
  std::vector<unsigned char> rgb(3 * plane);
  auto quantize = [](double v) {
    const double q = std::round(v * 255.0);
    return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
  };
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) rgb[3 * i + c] = quantize(t[c * plane + i]);
  }
  return rgb;
}

Tensor decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  std::string problem;
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    problem = "16-bit sample depth";
  } else if (!(image.format & PNG_FORMAT_FLAG_COLOR)) {
    problem = "grayscale color type";
  } else if (image.format & PNG_FORMAT_FLAG_ALPHA) {
    problem = "alpha channel";
  }
  if (!problem.empty()) {
    png_image_free(&image);
    throw UnsupportedFormatError(path.string() + ": unsupported PNG (" + problem +
                                 "); expected 8-bit RGB");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return from_interleaved(rgb.data(), static_cast<int>(image.height),
                          static_cast<int>(image.width));
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr) {}

enum class JpegStatus { Ok, Corrupt, Cmyk, Grayscale, Precision };

// Plain C-style body so that the longjmp never crosses a live C++ object
// constructed after setjmp.
JpegStatus jpeg_decode(const unsigned char* src, std::size_t size, std::vector<unsigned char>* rgb,
                       int* height, int* width, JpegErrorManager* jerr) {
  jpeg_decompress_struct cinfo;
  cinfo.err = jpeg_std_error(&jerr->pub);
  jerr->pub.error_exit = jpeg_error_exit;
  jerr->pub.output_message = jpeg_silent;
  if (setjmp(jerr->jump)) {
    jpeg_destroy_decompress(&cinfo);
    return JpegStatus::Corrupt;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, src, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  JpegStatus status = JpegStatus::Ok;
  if (cinfo.jpeg_color_space == JCS_CMYK || cinfo.jpeg_color_space == JCS_YCCK) {
    status = JpegStatus::Cmyk;
  } else if (cinfo.jpeg_color_space == JCS_GRAYSCALE) {
    status = JpegStatus::Grayscale;
  } else if (cinfo.data_precision != 8) {
    status = JpegStatus::Precision;
  }
  if (status != JpegStatus::Ok) {
    jpeg_destroy_decompress(&cinfo);
    return status;
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *height = static_cast<int>(cinfo.output_height);
  *width = static_cast<int>(cinfo.output_width);
  rgb->resize(static_cast<std::size_t>(*height) * *width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb->data() + static_cast<std::size_t>(cinfo.output_scanline) * *width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return JpegStatus::Ok;
}

Tensor decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::vector<unsigned char> rgb;
  int height = 0;
  int width = 0;
  JpegErrorManager jerr{};
  switch (jpeg_decode(bytes.data(), bytes.size(), &rgb, &height, &width, &jerr)) {
    case JpegStatus::Ok:
      return from_interleaved(rgb.data(), height, width);
    case JpegStatus::Corrupt:
      throw IoError("cannot decode JPEG " + path.string() + ": " + jerr.message);
    case JpegStatus::Cmyk:
      throw UnsupportedFormatError(path.string() + ": unsupported JPEG (CMYK color space)");
    case JpegStatus::Grayscale:
      throw UnsupportedFormatError(path.string() + ": unsupported JPEG (grayscale color space)");
    case JpegStatus::Precision:
      throw UnsupportedFormatError(path.string() + ": unsupported JPEG (sample precision != 8)");
  }
  throw InternalError("unreachable jpeg status");
}

JpegStatus jpeg_encode(const unsigned char* rgb, int height, int width, int quality, FILE* file,
                       JpegErrorManager* jerr) {
  jpeg_compress_struct cinfo;
  cinfo.err = jpeg_std_error(&jerr->pub);
  jerr->pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr->jump)) {
    jpeg_destroy_compress(&cinfo);
    return JpegStatus::Corrupt;
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto row = const_cast<JSAMPROW>(rgb + static_cast<std::size_t>(cinfo.next_scanline) * width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return JpegStatus::Ok;
}

bool is_jpeg_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  switch (sniff(bytes)) {
    case FileKind::Png:
      return ImageTensor::from_tensor(decode_png(bytes, path));
    case FileKind::Jpeg:
      return ImageTensor::from_tensor(decode_jpeg(bytes, path));
    case FileKind::Unknown:
      break;
  }
  throw IoError("not a PNG or JPEG file: " + path.string());
}

void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  const Tensor& t = img.tensor();
  const std::vector<unsigned char> rgb = to_interleaved(t);
  if (is_jpeg_extension(path)) {
    FILE* file = std::fopen(path.string().c_str(), "wb");
    if (!file) throw IoError("cannot open for writing: " + path.string());
    JpegErrorManager jerr{};
    const JpegStatus status = jpeg_encode(rgb.data(), t.height(), t.width(), 95, file, &jerr);
    const bool closed = std::fclose(file) == 0;
    if (status != JpegStatus::Ok || !closed) {
      throw IoError("cannot write JPEG " + path.string() + ": " + jerr.message);
    }
    return;
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(t.width());
  image.height = static_cast<png_uint_32>(t.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace sgz
