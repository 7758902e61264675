#include "dfd/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

namespace dfd {

namespace {

enum class Format { png, jpeg, unknown };

Format sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path.string());
  unsigned char head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof(head));
  if (in.gcount() >= 8 && png_sig_cmp(head, 0, 8) == 0) return Format::png;
  if (in.gcount() >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Format::jpeg;
  return Format::unknown;
}

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError("cannot decode PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
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

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageError("cannot open image " + path.string());

  Image out;
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

void check_image(const Image& image, const std::filesystem::path& path) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * 3)
    throw ImageError("invalid image buffer for " + path.string());
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  switch (sniff(path)) {
    case Format::png: return read_png(path);
    case Format::jpeg: return read_jpeg(path);
    case Format::unknown: break;
  }
  throw ImageError("unrecognized image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) {
  check_image(image, path);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw ImageError("cannot write PNG " + path.string() + ": " + img.message);
}

void write_jpeg(const std::filesystem::path& path, const Image& image, int quality) {
  check_image(image, path);
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageError("cannot open " + path.string() + " for writing");

  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw ImageError("cannot write JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file.get());
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(image.pixels.data()) +
                static_cast<std::size_t>(cinfo.next_scanline) * image.width * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

Planar to_planar(const Image& image, float scale) {
  Planar p{3, image.height, image.width, std::vector<float>(3 * image.height * image.width)};
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) p.at(c, y, x) = static_cast<float>(image.at(x, y, c)) * scale;
  return p;
}

Image to_image(const Planar& planar) {
  if (planar.channels != 3) throw ImageError("to_image: expected 3 channels");
  Image img{planar.width, planar.height, std::vector<std::uint8_t>(planar.width * planar.height * 3)};
  for (std::size_t y = 0; y < planar.height; ++y)
    for (std::size_t x = 0; x < planar.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(planar.at(c, y, x), 0.0f, 1.0f);
        img.pixels[(y * planar.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

Planar resize_bilinear(const Planar& in, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || in.height == 0 || in.width == 0)
    throw ShapeError("resize_bilinear: empty extent");
  if (height == in.height && width == in.width) return in;

  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [](std::size_t out, std::size_t src) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(src) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src - 1));
      const auto lo = static_cast<std::size_t>(s);
      t[i] = {lo, std::min(lo + 1, src - 1), static_cast<float>(s - static_cast<double>(lo))};
    }
    return t;
  };
  const auto ty = taps(height, in.height);
  const auto tx = taps(width, in.width);

  Planar out{in.channels, height, width, std::vector<float>(in.channels * height * width)};
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < width; ++x) {
        const auto& b = tx[x];
        const float top = in.at(c, a.lo, b.lo) * (1 - b.frac) + in.at(c, a.lo, b.hi) * b.frac;
        const float bottom = in.at(c, a.hi, b.lo) * (1 - b.frac) + in.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1 - a.frac) + bottom * a.frac;
      }
    }
  return out;
}

}  // namespace dfd
