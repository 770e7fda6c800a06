#include "rxf/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rxf {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put_le(os, v); }
void put_u16(std::ostream& os, std::uint16_t v) { put_le(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void put_f32(std::ostream& os, float v) { put_le(os, v); }
void put_f64(std::ostream& os, double v) { put_le(os, v); }
std::uint8_t get_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint16_t get_u16(std::istream& is) { return get_le<std::uint16_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
float get_f32(std::istream& is) { return get_le<float>(is); }
double get_f64(std::istream& is) { return get_le<double>(is); }

void write_rxt(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("rxt: rank too large");
  os.write("RXT1", 4);
  put_u8(os, 0);
  put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : t.data()) put_f64(os, v);
}

Tensor read_rxt(std::istream& is) {
  expect_magic(is, "RXT1");
  const auto dtype = get_u8(is);
  if (dtype != 0) throw FormatError("rxt: unsupported dtype code " + std::to_string(dtype));
  const auto rank = get_u8(is);
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_rxt(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_rxt(os, t);
}

Tensor load_rxt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_rxt(is);
}

void save_archive(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::string blobs;
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    std::ostringstream os;
    write_rxt(os, t);
    const auto bytes = os.str();
    manifest["tensors"].push_back({{"name", name}, {"offset", blobs.size()}, {"length", bytes.size()}});
    blobs += bytes;
  }
  const auto text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("RXA1", 4);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
}

NamedTensors load_archive(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::istringstream is(bytes);
  expect_magic(is, "RXA1");
  const auto len = get_u32(is);
  if (8 + static_cast<std::size_t>(len) > bytes.size()) throw FormatError("archive: truncated manifest");
  const auto manifest = nlohmann::json::parse(bytes.substr(8, len));
  const std::size_t base = 8 + len;
  NamedTensors out;
  for (const auto& entry : manifest.at("tensors")) {
    const auto off = entry.at("offset").get<std::size_t>();
    const auto n = entry.at("length").get<std::size_t>();
    if (base + off + n > bytes.size()) throw FormatError("archive: entry past end of file");
    std::istringstream blob(bytes.substr(base + off, n));
    out.emplace_back(entry.at("name").get<std::string>(), read_rxt(blob));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace rxf
