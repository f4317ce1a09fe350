#include "dan/image.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <filesystem>

#include "dan/error.hpp"
#include "dan/io.hpp"

namespace dan {
namespace {

bool HasPngExtension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png";
}

Image DecodePng(const std::string& bytes, const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  Require(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()) != 0, ErrorKind::kIo,
          "cannot decode PNG '" + path + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr) == 0) {
    const std::string message = img.message;
    png_image_free(&img);
    Fail(ErrorKind::kIo, "cannot decode PNG '" + path + "': " + message);
  }
  return out;
}

// Reads the next header token of a PNM file, skipping comments.
std::string NextToken(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) token += bytes[pos++];
  return token;
}

Image DecodePnm(const std::string& bytes, const std::string& path) {
  std::size_t pos = 0;
  const std::string magic = NextToken(bytes, pos);
  Require(magic == "P6" || magic == "P5", ErrorKind::kIo, "'" + path + "' is not a binary PPM/PGM or PNG");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(NextToken(bytes, pos));
    height = std::stoi(NextToken(bytes, pos));
    maxval = std::stoi(NextToken(bytes, pos));
  } catch (const std::exception&) {
    Fail(ErrorKind::kIo, "malformed PNM header in '" + path + "'");
  }
  Require(width > 0 && height > 0 && maxval == 255, ErrorKind::kIo,
          "unsupported PNM geometry/maxval in '" + path + "'");
  ++pos;  // single whitespace after maxval
  const int channels = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels;
  Require(bytes.size() >= pos + need, ErrorKind::kIo, "truncated PNM data in '" + path + "'");
  Image out(width, height);
  if (channels == 3) {
    std::memcpy(out.pixels.data(), bytes.data() + pos, need);
  } else {
    for (std::size_t i = 0; i < need; ++i) {
      const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
      out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = v;
    }
  }
  return out;
}

std::string EncodePng(int width, int height, const std::uint8_t* data, bool gray) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  Require(png_image_write_to_memory(&img, nullptr, &size, 0, data, 0, nullptr) != 0, ErrorKind::kIo,
          std::string("PNG encode failed: ") + img.message);
  std::string out(size, '\0');
  Require(png_image_write_to_memory(&img, out.data(), &size, 0, data, 0, nullptr) != 0, ErrorKind::kIo,
          std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}

}  // namespace

Image ReadImage(const std::string& path) {
  const std::string bytes = ReadFileBytes(path);
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return DecodePng(bytes, path);
  return DecodePnm(bytes, path);
}

void WriteImage(const std::string& path, const Image& image) {
  Require(image.width > 0 && image.height > 0, ErrorKind::kParameter, "cannot write an empty image");
  if (HasPngExtension(path)) {
    WriteFileAtomic(path, EncodePng(image.width, image.height, image.pixels.data(), false));
    return;
  }
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  WriteFileAtomic(path, out);
}

void WriteGrayImage(const std::string& path, int width, int height, const std::vector<std::uint8_t>& values) {
  Require(width > 0 && height > 0 && values.size() == static_cast<std::size_t>(width) * height,
          ErrorKind::kParameter, "gray image size mismatch");
  if (HasPngExtension(path)) {
    WriteFileAtomic(path, EncodePng(width, height, values.data(), true));
    return;
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(values.data()), values.size());
  WriteFileAtomic(path, out);
}

}  // namespace dan
