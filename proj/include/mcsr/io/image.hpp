#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mcsr {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Modality { reference, target, synthesized, output };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::reference: return "reference";
    case Modality::target: return "target";
    case Modality::synthesized: return "synthesized";
    case Modality::output: return "output";
  }
  return "output";
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "reference") return Modality::reference;
  if (s == "target") return Modality::target;
  if (s == "synthesized") return Modality::synthesized;
  if (s == "output") return Modality::output;
  throw IoError("unknown modality '" + s + "'");
}

/// One 2D slice of one contrast, row-major.
struct ImageGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  Modality modality = Modality::output;
  std::string subject_id;

  ImageGrid() = default;
  ImageGrid(std::size_t h, std::size_t w, Modality m = Modality::output, std::string id = {})
      : height(h), width(w), pixels(h * w, 0.0f), modality(m), subject_id(std::move(id)) {}

  float at(std::size_t i, std::size_t j) const { return pixels[i * width + j]; }
  float& at(std::size_t i, std::size_t j) { return pixels[i * width + j]; }
  std::size_t size() const { return pixels.size(); }

  bool same_extent(const ImageGrid& o) const { return height == o.height && width == o.width; }
};

/// Writes to a sibling temp file then renames it over `path`.
template <class Writer>
void atomic_write(const std::filesystem::path& path, Writer&& write) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    write(os);
    os.flush();
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  atomic_write(path, [&](std::ostream& os) { os << text; });
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

namespace detail {

inline void put_f32_le(std::ostream& os, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

inline std::vector<float> read_f32_le(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  if (raw.size() % 4 != 0) throw IoError(path.string() + ": blob length is not a multiple of 4 bytes");
  std::vector<float> out(raw.size() / 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[4 * i + b]);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::vector<float> read_f32_load_checked(const std::filesystem::path& path, std::size_t expected) {
  auto values = read_f32_le(path);
  if (values.size() != expected) {
    throw IoError(path.string() + ": blob holds " + std::to_string(values.size()) + " floats, sidecar expects " +
                  std::to_string(expected));
  }
  return values;
}

inline void write_f32_blob(const std::filesystem::path& path, const std::vector<float>& values) {
  atomic_write(path, [&](std::ostream& os) {
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
      for (float v : values) put_f32_le(os, v);
    }
  });
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& blob) {
  auto p = blob;
  p += ".json";
  return p;
}

/// Raw little-endian f32 blob plus `<path>.json` sidecar.
inline void save_image(const ImageGrid& img, const std::filesystem::path& path) {
  if (img.pixels.size() != img.height * img.width) throw IoError("save_image: pixel count does not match extents");
  for (float v : img.pixels) {
    if (!std::isfinite(v)) throw IoError("save_image: non-finite pixel in " + path.string());
  }
  detail::write_f32_blob(path, img.pixels);
  nlohmann::json side = {{"height", img.height},
                         {"width", img.width},
                         {"dtype", "f32"},
                         {"modality", to_string(img.modality)},
                         {"subject_id", img.subject_id}};
  write_text_atomic(sidecar_path(path), side.dump(2) + "\n");
}

inline ImageGrid load_image(const std::filesystem::path& path) {
  const auto side_path = sidecar_path(path);
  if (!std::filesystem::exists(side_path)) throw IoError("load_image: missing sidecar " + side_path.string());
  if (!std::filesystem::exists(path)) throw IoError("load_image: missing blob " + path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_text(side_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_image: malformed sidecar " + side_path.string() + ": " + e.what());
  }
  if (side.value("dtype", "") != "f32") throw IoError("load_image: unsupported dtype in " + side_path.string());
  ImageGrid img;
  img.height = side.at("height").get<std::size_t>();
  img.width = side.at("width").get<std::size_t>();
  img.modality = modality_from_string(side.value("modality", "output"));
  img.subject_id = side.value("subject_id", "");
  img.pixels = detail::read_f32_load_checked(path, img.height * img.width);
  return img;
}

/// Min-max rescale to [0,1]; a constant image maps to all zeros.
inline ImageGrid normalize_01(const ImageGrid& img) {
  ImageGrid out = img;
  if (img.pixels.empty()) return out;
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double min = *lo, range = static_cast<double>(*hi) - min;
  for (auto& v : out.pixels) v = range > 0 ? static_cast<float>((v - min) / range) : 0.0f;
  return out;
}

/// 8-bit binary PGM for quick viewing; values are mapped from [lo, hi].
inline void save_pgm(const ImageGrid& img, const std::filesystem::path& path, double lo = 0.0, double hi = 1.0) {
  atomic_write(path, [&](std::ostream& os) {
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    for (float v : img.pixels) {
      const double t = std::clamp((static_cast<double>(v) - lo) / (hi - lo), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
  });
}

}  // namespace mcsr
