#include "blursplat/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace blursplat {

namespace {


void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(char((v >> 24) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char(v & 0xff));
}

[[noreturn]] void io_fail(const std::filesystem::path& p, const char* what) {
  throw std::runtime_error(std::string(what) + ": " + p.string());
}

}  // namespace

void write_npy(const std::filesystem::path& path,
               const std::vector<std::size_t>& shape, const float* data) {
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) dict << ",";
    if (i + 1 < shape.size()) dict << " ";
  }
  dict << "), }";
  std::string header = dict.str();
  // Pad with spaces so magic+len+header is a multiple of 64, newline last.
  const std::size_t base = 10 + header.size() + 1;
  header.append((64 - base % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for write");
  f.write("\x93NUMPY\x01\x00", 8);
  const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  char lenb[2] = {char(hlen & 0xff), char(hlen >> 8)};
  f.write(lenb, 2);
  f.write(header.data(), header.size());

  std::size_t count = 1;
  for (auto s : shape) count *= s;
  f.write(reinterpret_cast<const char*>(data), count * sizeof(float));
  if (!f) io_fail(path, "short write");
}

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    io_fail(path, "not an npy file");
  const int major = magic[6];
  std::size_t hlen = 0;
  if (major == 1) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    hlen = b[0] | (std::size_t(b[1]) << 8);
  } else {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    hlen = b[0] | (std::size_t(b[1]) << 8) | (std::size_t(b[2]) << 16) |
           (std::size_t(b[3]) << 24);
  }
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (header.find("'<f4'") == std::string::npos)
    io_fail(path, "npy dtype is not little-endian float32");
  if (header.find("'fortran_order': False") == std::string::npos)
    io_fail(path, "npy must be C order");

  NpyArray out;
  const auto lp = header.find('(');
  const auto rp = header.find(')', lp);
  if (lp == std::string::npos || rp == std::string::npos)
    io_fail(path, "npy shape missing");
  std::string dims = header.substr(lp + 1, rp - lp - 1);
  std::size_t pos = 0;
  while (pos < dims.size()) {
    while (pos < dims.size() && !std::isdigit(static_cast<unsigned char>(dims[pos]))) ++pos;
    if (pos >= dims.size()) break;
    std::size_t end = pos;
    while (end < dims.size() && std::isdigit(static_cast<unsigned char>(dims[end]))) ++end;
    out.shape.push_back(std::stoull(dims.substr(pos, end - pos)));
    pos = end;
  }
  std::size_t count = 1;
  for (auto s : out.shape) count *= s;
  out.data.resize(count);
  f.read(reinterpret_cast<char*>(out.data.data()), count * sizeof(float));
  if (!f) io_fail(path, "npy truncated");
  return out;
}

void write_image_npy(const std::filesystem::path& path, const Image& img) {
  std::vector<float> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(),
                 [](double v) { return static_cast<float>(v); });
  write_npy(path,
            {static_cast<std::size_t>(img.height),
             static_cast<std::size_t>(img.width), 3},
            buf.data());
}

Image read_image_npy(const std::filesystem::path& path) {
  NpyArray a = read_npy(path);
  if (a.shape.size() != 3 || a.shape[2] != 3)
    io_fail(path, "expected HxWx3 image array");
  Image img(static_cast<int>(a.shape[1]), static_cast<int>(a.shape[0]));
  std::copy(a.data.begin(), a.data.end(), img.data.begin());
  return img;
}

void write_depth_npy(const std::filesystem::path& path, const DepthMap& d) {
  std::vector<float> buf(d.data.size());
  std::transform(d.data.begin(), d.data.end(), buf.begin(),
                 [](double v) { return static_cast<float>(v); });
  write_npy(path,
            {static_cast<std::size_t>(d.height),
             static_cast<std::size_t>(d.width)},
            buf.data());
}

DepthMap read_depth_npy(const std::filesystem::path& path) {
  NpyArray a = read_npy(path);
  if (a.shape.size() != 2) io_fail(path, "expected HxW depth array");
  DepthMap d(static_cast<int>(a.shape[1]), static_cast<int>(a.shape[0]));
  std::copy(a.data.begin(), a.data.end(), d.data.begin());
  return d;
}

void write_mask_npy(const std::filesystem::path& path, const Mask& m) {
  std::vector<float> buf(m.data.size());
  std::transform(m.data.begin(), m.data.end(), buf.begin(),
                 [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
  write_npy(path,
            {static_cast<std::size_t>(m.height),
             static_cast<std::size_t>(m.width)},
            buf.data());
}

Mask read_mask_npy(const std::filesystem::path& path) {
  NpyArray a = read_npy(path);
  if (a.shape.size() != 2) io_fail(path, "expected HxW mask array");
  Mask m(static_cast<int>(a.shape[1]), static_cast<int>(a.shape[0]));
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m.data[i] = a.data[i] > 0.5f ? 1 : 0;
  return m;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const int w = img.width, h = img.height;
  // Filter byte 0 per scanline, then one deflate stream.
  std::string raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int r = 0; r < h; ++r) {
    raw.push_back('\0');
    for (int c = 0; c < w; ++c) {
      const double* p = img.px(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(p[ch], 0.0, 1.0);
        raw.push_back(static_cast<char>(std::lround(v * 255.0)));
      }
    }
  }
  uLongf comp_cap = compressBound(raw.size());
  std::string compressed(comp_cap, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_cap,
                reinterpret_cast<const Bytef*>(raw.data()), raw.size(),
                6) != Z_OK)
    io_fail(path, "deflate failed");
  compressed.resize(comp_cap);

  auto chunk = [](const char* type, const std::string& payload) {
    std::string out;
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    out.append(type, 4);
    out += payload;
    const auto crc =
        crc32(crc32(0, reinterpret_cast<const Bytef*>(type), 4),
              reinterpret_cast<const Bytef*>(payload.data()), payload.size());
    put_u32be(out, static_cast<std::uint32_t>(crc));
    return out;
  };

  std::string ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(w));
  put_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace

  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for write");
  f.write("\x89PNG\r\n\x1a\n", 8);
  const std::string out =
      chunk("IHDR", ihdr) + chunk("IDAT", compressed) + chunk("IEND", "");
  f.write(out.data(), out.size());
  if (!f) io_fail(path, "short write");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for write");
  f.write(text.data(), text.size());
  if (!f) io_fail(path, "short write");
}

Mask dilate(const Mask& m, int radius) {
  if (radius <= 0) return m;
  Mask out(m.width, m.height, 0);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      const int r0 = std::max(0, r - radius), r1 = std::min(m.height - 1, r + radius);
      const int c0 = std::max(0, c - radius), c1 = std::min(m.width - 1, c + radius);
      for (int rr = r0; rr <= r1; ++rr)
        for (int cc = c0; cc <= c1; ++cc) out.set(rr, cc, 1);
    }
  }
  return out;
}

}  // namespace blursplat
