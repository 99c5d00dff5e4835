#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "seedgrow/volume.hpp"

namespace seedgrow {

// SVF container: one JSON header line, then a little-endian payload.
//   {"magic":"SVF1","dims":[H,W,D],"channels":C,"spacing_mm":[sa,sb,sc],"dtype":"f32le"}\n
// Volumes carry C*H*W*D f32 values (channel-major, then a/b/c). Masks use
// dtype "u8" with a single channel.

std::string encode_volume(const Volume& v);
Volume decode_volume(std::string_view bytes);

std::string encode_mask(const Mask& m, const Spacing& spacing = {1.0, 1.0, 1.0});
Mask decode_mask(std::string_view bytes);

void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const Mask& m, const Spacing& spacing = {1.0, 1.0, 1.0});
Mask read_mask(const std::filesystem::path& path);

/// Whole-file helpers shared by every binary format in the project.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Splits "<json>\n<payload>" and returns the header text; `payload` receives the rest.
std::string_view split_header(std::string_view bytes, std::string_view& payload);

void append_f32le(std::string& out, float value);
float load_f32le(const char* p);

}  // namespace seedgrow
