#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rxf/tensor.hpp"

namespace rxf {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RXT1: "RXT1", u8 dtype (0 = f64), u8 rank, rank x u32 LE extents, f64 LE payload.
void write_rxt(std::ostream& os, const Tensor& t);
Tensor read_rxt(std::istream& is);
void save_rxt(const std::filesystem::path& path, const Tensor& t);
Tensor load_rxt(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Checkpoint archive: "RXA1", u32 LE manifest length, JSON manifest
// {"tensors":[{"name","offset","length"}...]}, then concatenated RXT1 blobs.
// Offsets are relative to the end of the manifest.
void save_archive(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_archive(const std::filesystem::path& path);

// little-endian primitives shared by the binary formats
void put_u8(std::ostream& os, std::uint8_t v);
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_f32(std::ostream& os, float v);
void put_f64(std::ostream& os, double v);
std::uint8_t get_u8(std::istream& is);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);
double get_f64(std::istream& is);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rxf
