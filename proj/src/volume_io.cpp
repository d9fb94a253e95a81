// Copyright 2026 The VoxelSAM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "voxelsam/volume_io.hpp"

#include <tiffio.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "voxelsam/error.hpp"

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "voxel I/O assumes a little-endian host");

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void unreadable(const fs::path& path, const std::string& why) {
  throw Error(ErrorCode::UnreadableFile, path.string() + ": " + why, {{"path", path.string()}});
}

Volume3D::Storage allocate(DType dtype, std::size_t count) {
  switch (dtype) {
    case DType::UInt8: return std::vector<std::uint8_t>(count);
    case DType::UInt16: return std::vector<std::uint16_t>(count);
    case DType::Float32: return std::vector<float>(count);
  }
  return {};
}

std::pair<char*, std::size_t> bytes_of(Volume3D::Storage& storage) {
  return std::visit(
      [](auto& v) { return std::pair{reinterpret_cast<char*>(v.data()), v.size() * sizeof(v[0])}; }, storage);
}

std::pair<const char*, std::size_t> bytes_of(const Volume3D::Storage& storage) {
  return std::visit(
      [](const auto& v) { return std::pair{reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0])}; },
      storage);
}

void byteswap_payload(Volume3D::Storage& storage) {
  std::visit(
      [](auto& values) {
        using T = std::decay_t<decltype(values[0])>;
        if constexpr (sizeof(T) > 1) {
          for (auto& v : values) {
            unsigned char b[sizeof(T)];
            std::memcpy(b, &v, sizeof(T));
            std::reverse(b, b + sizeof(T));
            std::memcpy(&v, b, sizeof(T));
          }
        }
      },
      storage);
}

// Reads exactly the payload bytes from `in`, reporting a size mismatch when
// the file holds fewer or more bytes than the header declares.
void read_payload(std::istream& in, const fs::path& path, Volume3D::Storage& storage, std::uintmax_t available) {
  auto [ptr, size] = bytes_of(storage);
  if (available != size) {
    throw Error(ErrorCode::DimensionMismatch,
                path.string() + ": payload has " + std::to_string(available) + " bytes, header implies " +
                    std::to_string(size),
                {{"path", path.string()}, {"expected_bytes", size}, {"actual_bytes", available}});
  }
  in.read(ptr, static_cast<std::streamsize>(size));
  if (!in) unreadable(path, "short read");
}

void write_bytes(const fs::path& path, std::ofstream& out, const char* data, std::size_t size) {
  out.write(data, static_cast<std::streamsize>(size));
  out.flush();
  if (!out) {
    throw Error(ErrorCode::DiskFull, path.string() + ": write failed", {{"path", path.string()}});
  }
}

std::ofstream open_for_write(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot open for writing", {{"path", path.string()}});
  return out;
}

// ---------------------------------------------------------------- raw + json

fs::path sidecar_for(const fs::path& raw) { return fs::path(raw.string() + ".json"); }

Volume3D load_raw(const fs::path& given) {
  fs::path raw = given;
  fs::path side = sidecar_for(given);
  if (lower(given.extension().string()) == ".json") {
    side = given;
    raw = given.parent_path() / given.stem();
  }
  std::ifstream sj(side);
  if (!sj) unreadable(side, "missing JSON sidecar");
  json meta;
  try {
    sj >> meta;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UnsupportedFormat, side.string() + ": " + e.what());
  }
  Dims dims;
  Spacing spacing;
  DType dtype;
  try {
    auto d = meta.at("dims");
    dims = {d.at(0).get<std::int64_t>(), d.at(1).get<std::int64_t>(), d.at(2).get<std::int64_t>()};
    auto dt = parse_dtype(meta.at("dtype").get<std::string>());
    if (!dt) throw Error(ErrorCode::UnsupportedFormat, side.string() + ": unsupported dtype");
    dtype = *dt;
    if (meta.contains("spacing")) {
      auto s = meta.at("spacing");
      spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UnsupportedFormat, side.string() + ": " + e.what());
  }
  const std::string order = meta.value("byte_order", "little");
  if (order != "little" && order != "big") {
    throw Error(ErrorCode::UnsupportedFormat, side.string() + ": byte_order must be little or big");
  }
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw Error(ErrorCode::DimensionMismatch, side.string() + ": dims must be positive");
  }
  std::ifstream in(raw, std::ios::binary);
  if (!in) unreadable(raw, "cannot open raw payload");
  auto storage = allocate(dtype, static_cast<std::size_t>(dims.voxel_count()));
  read_payload(in, raw, storage, fs::file_size(raw));
  if (order == "big") byteswap_payload(storage);
  return Volume3D(dims, spacing, std::move(storage));
}

void save_raw(const Volume3D& vol, const fs::path& path) {
  {
    auto out = open_for_write(path);
    auto [ptr, size] = bytes_of(vol.storage());
    write_bytes(path, out, ptr, size);
  }
  const auto& d = vol.dims();
  const auto& s = vol.spacing();
  json meta = {{"dims", {d.nx, d.ny, d.nz}},
               {"dtype", std::string(to_string(vol.dtype()))},
               {"spacing", {s.sx, s.sy, s.sz}},
               {"byte_order", "little"}};
  const auto side = sidecar_for(path);
  auto out = open_for_write(side);
  const std::string text = meta.dump(2) + "\n";
  write_bytes(side, out, text.data(), text.size());
}

// ---------------------------------------------------------------------- nrrd

std::optional<DType> nrrd_type(const std::string& t) {
  static const std::map<std::string, DType> kTypes = {
      {"uchar", DType::UInt8},          {"unsigned char", DType::UInt8},   {"uint8", DType::UInt8},
      {"uint8_t", DType::UInt8},        {"ushort", DType::UInt16},         {"unsigned short", DType::UInt16},
      {"unsigned short int", DType::UInt16}, {"uint16", DType::UInt16},    {"uint16_t", DType::UInt16},
      {"float", DType::Float32}};
  auto it = kTypes.find(lower(t));
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

std::string_view nrrd_type_name(DType dtype) {
  switch (dtype) {
    case DType::UInt8: return "uint8";
    case DType::UInt16: return "uint16";
    case DType::Float32: return "float";
  }
  return "";
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::istringstream ss(text);
  double v;
  while (ss >> v) out.push_back(v);
  return out;
}

// "(a,b,c) (d,e,f) (g,h,i)" -> column norms.
std::vector<double> direction_norms(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while ((pos = text.find('(', pos)) != std::string::npos) {
    const auto end = text.find(')', pos);
    if (end == std::string::npos) break;
    std::string inner = text.substr(pos + 1, end - pos - 1);
    std::replace(inner.begin(), inner.end(), ',', ' ');
    double sum = 0.0;
    for (double c : parse_doubles(inner)) sum += c * c;
    out.push_back(std::sqrt(sum));
    pos = end + 1;
  }
  return out;
}

Volume3D load_nrrd(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) unreadable(path, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line.rfind("NRRD000", 0) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": missing NRRD magic");
  }
  std::map<std::string, std::string> fields;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    if (line[0] == '#') continue;
    const auto sep = line.find(':');
    if (sep == std::string::npos) continue;
    std::string key = lower(trim(line.substr(0, sep)));
    std::string value = line.substr(sep + 1);
    if (!value.empty() && value[0] == '=') value.erase(0, 1);  // key:=value pairs
    fields[key] = trim(value);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": NRRD field '" + key + "' missing");
    return it->second;
  };
  auto dtype = nrrd_type(need("type"));
  if (!dtype) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": NRRD type '" + need("type") + "' unsupported");
  if (need("dimension") != "3") throw Error(ErrorCode::UnsupportedFormat, path.string() + ": only 3D NRRD is supported");
  const std::string encoding = lower(need("encoding"));
  if (encoding != "raw") {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": NRRD encoding '" + encoding + "' unsupported");
  }
  const auto sizes = parse_doubles(need("sizes"));
  if (sizes.size() != 3) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": sizes must list 3 values");
  Dims dims{static_cast<std::int64_t>(sizes[0]), static_cast<std::int64_t>(sizes[1]),
            static_cast<std::int64_t>(sizes[2])};
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": sizes must be positive");
  }
  Spacing spacing;
  std::vector<double> sp;
  if (auto it = fields.find("spacings"); it != fields.end()) sp = parse_doubles(it->second);
  else if (auto it2 = fields.find("space directions"); it2 != fields.end()) sp = direction_norms(it2->second);
  if (sp.size() == 3) spacing = {sp[0], sp[1], sp[2]};

  bool big_endian = false;
  if (auto it = fields.find("endian"); it != fields.end()) big_endian = lower(it->second) == "big";

  auto storage = allocate(*dtype, static_cast<std::size_t>(dims.voxel_count()));
  if (auto it = fields.find("data file"); it != fields.end() || fields.count("datafile")) {
    const std::string& name = it != fields.end() ? it->second : fields["datafile"];
    fs::path data = fs::path(name).is_absolute() ? fs::path(name) : path.parent_path() / name;
    std::ifstream din(data, std::ios::binary);
    if (!din) unreadable(data, "cannot open detached NRRD data");
    read_payload(din, data, storage, fs::file_size(data));
  } else {
    const auto header_end = static_cast<std::uintmax_t>(in.tellg());
    read_payload(in, path, storage, fs::file_size(path) - header_end);
  }
  if (big_endian) byteswap_payload(storage);
  return Volume3D(dims, spacing, std::move(storage));
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void save_nrrd(const Volume3D& vol, const fs::path& path) {
  const auto& d = vol.dims();
  const auto& s = vol.spacing();
  std::ostringstream header;
  header << "NRRD0004\n"
         << "# written by voxelsam\n"
         << "type: " << nrrd_type_name(vol.dtype()) << "\n"
         << "dimension: 3\n"
         << "sizes: " << d.nx << " " << d.ny << " " << d.nz << "\n"
         << "spacings: " << format_double(s.sx) << " " << format_double(s.sy) << " " << format_double(s.sz) << "\n"
         << "encoding: raw\n";
  if (vol.dtype() != DType::UInt8) header << "endian: little\n";
  header << "\n";
  auto out = open_for_write(path);
  const std::string text = header.str();
  write_bytes(path, out, text.data(), text.size());
  auto [ptr, size] = bytes_of(vol.storage());
  write_bytes(path, out, ptr, size);
}

// ---------------------------------------------------------------------- tiff

struct TiffCloser {
  void operator()(TIFF* t) const noexcept {
    if (t) TIFFClose(t);
  }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

void silence_libtiff() {
  static const bool once = [] {
    TIFFSetWarningHandler(nullptr);
    TIFFSetErrorHandler(nullptr);
    return true;
  }();
  (void)once;
}

Volume3D load_tiff(const fs::path& path) {
  silence_libtiff();
  TiffHandle tif(TIFFOpen(path.c_str(), "r"));
  if (!tif) {
    if (!fs::exists(path)) unreadable(path, "no such file");
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a readable TIFF");
  }
  std::uint32_t width = 0, height = 0;
  std::uint16_t bits = 0, spp = 1, format = SAMPLEFORMAT_UINT;
  std::optional<DType> dtype;
  std::vector<char> bytes;
  std::int64_t pages = 0;
  Spacing spacing;
  do {
    std::uint32_t w = 0, h = 0;
    std::uint16_t b = 0, s = 1, f = SAMPLEFORMAT_UINT;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &b);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &s);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &f);
    if (s != 1) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": only grayscale TIFF is supported");
    if (TIFFIsTiled(tif.get())) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": tiled TIFF is unsupported");
    if (pages == 0) {
      width = w;
      height = h;
      bits = b;
      spp = s;
      format = f;
      if (bits == 8 && format == SAMPLEFORMAT_UINT) dtype = DType::UInt8;
      else if (bits == 16 && format == SAMPLEFORMAT_UINT) dtype = DType::UInt16;
      else if (bits == 32 && format == SAMPLEFORMAT_IEEEFP) dtype = DType::Float32;
      else throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unsupported TIFF sample type");
      char* desc = nullptr;
      if (TIFFGetField(tif.get(), TIFFTAG_IMAGEDESCRIPTION, &desc) && desc) {
        auto meta = json::parse(desc, nullptr, false);
        if (meta.is_object() && meta.contains("spacing") && meta["spacing"].is_array() && meta["spacing"].size() == 3) {
          spacing = {meta["spacing"][0].get<double>(), meta["spacing"][1].get<double>(),
                     meta["spacing"][2].get<double>()};
        }
      }
    } else if (w != width || h != height || b != bits || f != format) {
      throw Error(ErrorCode::DimensionMismatch, path.string() + ": page " + std::to_string(pages) +
                                                    " differs in size or type from page 0");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(width) * (bits / 8);
    if (static_cast<std::size_t>(TIFFScanlineSize(tif.get())) != row_bytes) {
      throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unexpected scanline layout");
    }
    const std::size_t base = bytes.size();
    bytes.resize(base + row_bytes * height);
    for (std::uint32_t r = 0; r < height; ++r) {
      if (TIFFReadScanline(tif.get(), bytes.data() + base + r * row_bytes, r, 0) < 0) {
        unreadable(path, "failed to decode page " + std::to_string(pages) + " row " + std::to_string(r));
      }
    }
    ++pages;
  } while (TIFFReadDirectory(tif.get()));
  (void)spp;

  Dims dims{width, height, pages};
  auto storage = allocate(*dtype, static_cast<std::size_t>(dims.voxel_count()));
  auto [ptr, size] = bytes_of(storage);
  std::memcpy(ptr, bytes.data(), size);
  return Volume3D(dims, spacing, std::move(storage));
}

void save_tiff(const Volume3D& vol, const fs::path& path) {
  silence_libtiff();
  const auto& d = vol.dims();
  const bool big = static_cast<double>(vol.storage().index() == 2 ? 4 : 1) * d.voxel_count() > 3.9e9;
  TiffHandle tif(TIFFOpen(path.c_str(), big ? "w8" : "w"));
  if (!tif) throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot open for writing");
  const std::uint16_t bits = static_cast<std::uint16_t>(dtype_size(vol.dtype()) * 8);
  const std::uint16_t format = vol.dtype() == DType::Float32 ? SAMPLEFORMAT_IEEEFP : SAMPLEFORMAT_UINT;
  const auto& s = vol.spacing();
  const std::string desc = json{{"spacing", {s.sx, s.sy, s.sz}}}.dump();
  auto [ptr, size] = bytes_of(vol.storage());
  (void)size;
  const std::size_t row_bytes = static_cast<std::size_t>(d.nx) * (bits / 8);
  for (std::int64_t z = 0; z < d.nz; ++z) {
    TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(d.nx));
    TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(d.ny));
    TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, bits);
    TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, 1);
    TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT, format);
    TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(d.ny));
    TIFFSetField(tif.get(), TIFFTAG_SUBFILETYPE, FILETYPE_PAGE);
    TIFFSetField(tif.get(), TIFFTAG_PAGENUMBER, static_cast<std::uint16_t>(z), static_cast<std::uint16_t>(d.nz));
    if (z == 0) TIFFSetField(tif.get(), TIFFTAG_IMAGEDESCRIPTION, desc.c_str());
    const char* page = ptr + static_cast<std::size_t>(z) * row_bytes * static_cast<std::size_t>(d.ny);
    for (std::int64_t r = 0; r < d.ny; ++r) {
      if (TIFFWriteScanline(tif.get(), const_cast<char*>(page + static_cast<std::size_t>(r) * row_bytes),
                            static_cast<std::uint32_t>(r), 0) < 0) {
        throw Error(ErrorCode::DiskFull, path.string() + ": TIFF write failed");
      }
    }
    if (!TIFFWriteDirectory(tif.get())) throw Error(ErrorCode::DiskFull, path.string() + ": TIFF write failed");
  }
}

}  // namespace

std::string_view to_string(VolumeFormat format) noexcept {
  switch (format) {
    case VolumeFormat::TiffStack: return "tiff-stack";
    case VolumeFormat::Nrrd: return "nrrd";
    case VolumeFormat::RawJson: return "raw+json";
  }
  return "unknown";
}

std::optional<VolumeFormat> parse_volume_format(std::string_view text) noexcept {
  if (text == "tiff" || text == "tiff-stack" || text == "tif") return VolumeFormat::TiffStack;
  if (text == "nrrd") return VolumeFormat::Nrrd;
  if (text == "raw" || text == "raw+json") return VolumeFormat::RawJson;
  return std::nullopt;
}

VolumeFormat sniff_volume_format(const fs::path& path) {
  const std::string ext = lower(path.extension().string());
  if (ext == ".tif" || ext == ".tiff") return VolumeFormat::TiffStack;
  if (ext == ".nrrd" || ext == ".nhdr") return VolumeFormat::Nrrd;
  if (ext == ".raw" || ext == ".bin" || ext == ".json") return VolumeFormat::RawJson;
  if (fs::exists(sidecar_for(path))) return VolumeFormat::RawJson;
  // Fall back to magic bytes.
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4) {
    if (std::memcmp(magic, "NRRD", 4) == 0) return VolumeFormat::Nrrd;
    if (std::memcmp(magic, "II*\0", 4) == 0 || std::memcmp(magic, "MM\0*", 4) == 0 ||
        std::memcmp(magic, "II+\0", 4) == 0) {
      return VolumeFormat::TiffStack;
    }
  }
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": cannot determine volume format",
              {{"path", path.string()}});
}

Volume3D load_volume(const fs::path& path, std::optional<VolumeFormat> hint) {
  const bool raw_sidecar = lower(path.extension().string()) == ".json";
  if (!fs::exists(path) && !raw_sidecar) unreadable(path, "no such file");
  const VolumeFormat format = hint ? *hint : sniff_volume_format(path);
  switch (format) {
    case VolumeFormat::TiffStack: return load_tiff(path);
    case VolumeFormat::Nrrd: return load_nrrd(path);
    case VolumeFormat::RawJson: return load_raw(path);
  }
  throw Error(ErrorCode::UnsupportedFormat, "unknown format");
}

void save_volume(const Volume3D& volume, const fs::path& path, VolumeFormat format) {
  switch (format) {
    case VolumeFormat::TiffStack: return save_tiff(volume, path);
    case VolumeFormat::Nrrd: return save_nrrd(volume, path);
    case VolumeFormat::RawJson: return save_raw(volume, path);
  }
}

}  // namespace voxelsam
