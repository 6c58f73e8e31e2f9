#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "topofit/core.hpp"

namespace topofit {

// Row-major raster, values linear in [0,1]. channels is 1 or 3.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c) {
    check(w > 0 && h > 0, "image must be non-empty");
    check(c == 1 || c == 3, "images have 1 or 3 channels, got ", c);
    data.assign(static_cast<size_t>(w) * h * c, 0.0f);
  }

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  Vec3 rgb(int x, int y) const {
    if (channels == 1) {
      const double v = at(x, y);
      return {v, v, v};
    }
    return {at(x, y, 0), at(x, y, 1), at(x, y, 2)};
  }
  void set_rgb(int x, int y, const Vec3& v) {
    check(channels == 3, "set_rgb on a single-channel image");
    at(x, y, 0) = static_cast<float>(v.x);
    at(x, y, 1) = static_cast<float>(v.y);
    at(x, y, 2) = static_cast<float>(v.z);
  }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

namespace detail {

inline int pnm_next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return 1;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok.empty() ? 0 : 1;
}

}  // namespace detail

// Binary PPM (P6, 3 channels) or PGM (P5, 1 channel); 8- or 16-bit samples
// are mapped to [0,1] by dividing by the declared maximum.
inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open image: ", path);
  std::string tok;
  check(detail::pnm_next_token(in, tok) && (tok == "P5" || tok == "P6"),
        path, ": not a binary PGM/PPM file");
  const int channels = tok == "P6" ? 3 : 1;
  int dims[3];
  for (int i = 0; i < 3; ++i) {
    check(detail::pnm_next_token(in, tok), path, ": truncated header");
    try {
      dims[i] = std::stoi(tok);
    } catch (...) {
      fail(path, ": malformed header token '", tok, "'");
    }
  }
  const int w = dims[0], h = dims[1], maxval = dims[2];
  check(w > 0 && h > 0, path, ": bad dimensions");
  check(maxval == 255 || maxval == 65535, path, ": only 8- and 16-bit samples supported");
  Image img(w, h, channels);
  const size_t n = static_cast<size_t>(w) * h * channels;
  const int bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(static_cast<size_t>(in.gcount()) == raw.size(), path, ": truncated pixel data");
  const float inv = 1.0f / maxval;
  for (size_t i = 0; i < n; ++i) {
    const unsigned v = bytes_per == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
    img.data[i] = v * inv;
  }
  return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
  check(img.width > 0 && img.height > 0, "cannot write empty image");
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: ", path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(out.good(), "write failed: ", path);
}

// ---------------------------------------------------------------------------
// Minimal 8-bit PNG writer (zlib handles the IDAT stream).

namespace detail {

inline uint32_t png_crc(const unsigned char* data, size_t len, uint32_t seed = 0) {
  return static_cast<uint32_t>(crc32(seed, data, static_cast<uInt>(len)));
}

inline void png_chunk(std::ofstream& out, const char type[4], const std::vector<unsigned char>& payload) {
  auto be32 = [](uint32_t v) {
    return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                        static_cast<unsigned char>(v >> 16),
                                        static_cast<unsigned char>(v >> 8),
                                        static_cast<unsigned char>(v)};
  };
  auto len = be32(static_cast<uint32_t>(payload.size()));
  out.write(reinterpret_cast<const char*>(len.data()), 4);
  out.write(type, 4);
  if (!payload.empty())
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
  uint32_t crc = png_crc(reinterpret_cast<const unsigned char*>(type), 4);
  if (!payload.empty()) crc = png_crc(payload.data(), payload.size(), crc);
  auto crc_be = be32(crc);
  out.write(reinterpret_cast<const char*>(crc_be.data()), 4);
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  check(img.width > 0 && img.height > 0, "cannot write empty image");
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: ", path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr(13);
  auto put32 = [&ihdr](int off, uint32_t v) {
    ihdr[off] = static_cast<unsigned char>(v >> 24);
    ihdr[off + 1] = static_cast<unsigned char>(v >> 16);
    ihdr[off + 2] = static_cast<unsigned char>(v >> 8);
    ihdr[off + 3] = static_cast<unsigned char>(v);
  };
  put32(0, static_cast<uint32_t>(img.width));
  put32(4, static_cast<uint32_t>(img.height));
  ihdr[8] = 8;                                    // bit depth
  ihdr[9] = img.channels == 3 ? 2 : 0;            // color type
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(out, "IHDR", ihdr);

  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<unsigned char> scanlines((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    unsigned char* row = &scanlines[(stride + 1) * y];
    row[0] = 0;  // no filter
    for (size_t i = 0; i < stride; ++i) {
      const float v = std::clamp(img.data[stride * y + i], 0.0f, 1.0f);
      row[1 + i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(scanlines.size()));
  std::vector<unsigned char> idat(bound);
  check(compress2(idat.data(), &bound, scanlines.data(), static_cast<uLong>(scanlines.size()), 9) ==
            Z_OK,
        "png deflate failed");
  idat.resize(bound);
  detail::png_chunk(out, "IDAT", idat);
  detail::png_chunk(out, "IEND", {});
  check(out.good(), "write failed: ", path);
}

}  // namespace topofit
