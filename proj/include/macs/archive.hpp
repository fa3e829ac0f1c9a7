#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macs/common.hpp"
#include "macs/data.hpp"

namespace macs {

// Fragment Archive: a directory holding
//   manifest.json  UTF-8 JSON: {version, d, T_s, f_s, alpha, fragments:[...]}
//   data.bin       8-byte magic "MACSFRG1"
//                  float32 little-endian payload, row-major
//                  [fragment][channel][time], fragment order as in manifest
//                  trailing 8-byte little-endian XXH64 of the float payload
constexpr char kArchiveMagic[8] = {'M', 'A', 'C', 'S', 'F', 'R', 'G', '1'};

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t b;
  std::memcpy(&b, &f, 4);
  return b;
}

inline float bits_float(std::uint32_t b) {
  float f;
  std::memcpy(&f, &b, 4);
  return f;
}

}  // namespace detail

inline void write_archive(const FragmentSet& fs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["d"] = fs.channels;
  manifest["T_s"] = fs.samples;
  manifest["f_s"] = fs.sample_rate;
  manifest["alpha"] = fs.noise_fraction;
  manifest["fragments"] = nlohmann::json::array();
  for (const Fragment& f : fs.fragments)
    manifest["fragments"].push_back({{"subject_id", f.subject_id},
                                     {"fragment_id", f.fragment_id},
                                     {"true_label", f.true_label},
                                     {"train_label", f.train_label}});
  {
    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw FormatError("write_archive: cannot open manifest.json", 0);
    mf << manifest.dump(2) << "\n";
  }

  std::vector<unsigned char> payload;
  payload.reserve(fs.fragments.size() * static_cast<std::size_t>(fs.channels) * fs.samples * 4);
  for (const Fragment& f : fs.fragments)
    for (float v : f.values) detail::put_u32_le(payload, detail::float_bits(v));

  std::vector<unsigned char> blob;
  blob.insert(blob.end(), kArchiveMagic, kArchiveMagic + 8);
  blob.insert(blob.end(), payload.begin(), payload.end());
  detail::put_u64_le(blob, xxh64(payload.data(), payload.size()));

  std::ofstream df(dir / "data.bin", std::ios::binary);
  if (!df) throw FormatError("write_archive: cannot open data.bin", 0);
  df.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
}

inline FragmentSet read_archive(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw FormatError("read_archive: missing manifest.json", 0);
    try {
      mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("read_archive: malformed manifest.json: ") + e.what(), 0);
    }
  }
  for (const char* key : {"version", "d", "T_s", "f_s", "alpha", "fragments"})
    if (!manifest.contains(key))
      throw FormatError(std::string("read_archive: manifest missing key '") + key + "'", 0);
  if (manifest["version"].get<int>() != 1)
    throw FormatError("read_archive: unsupported manifest version", 0);

  FragmentSet fs;
  fs.channels = manifest["d"].get<int>();
  fs.samples = manifest["T_s"].get<int>();
  fs.sample_rate = manifest["f_s"].get<double>();
  fs.noise_fraction = manifest["alpha"].get<double>();
  if (fs.channels <= 0 || fs.samples <= 0)
    throw FormatError("read_archive: non-positive d or T_s in manifest", 0);

  std::vector<unsigned char> blob;
  {
    std::ifstream df(dir / "data.bin", std::ios::binary);
    if (!df) throw FormatError("read_archive: missing data.bin", 0);
    df.seekg(0, std::ios::end);
    blob.resize(static_cast<std::size_t>(df.tellg()));
    df.seekg(0);
    df.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }
  if (blob.size() < 8 || std::memcmp(blob.data(), kArchiveMagic, 8) != 0)
    throw FormatError("read_archive: bad magic in data.bin", 0);

  const std::size_t n_frag = manifest["fragments"].size();
  const std::size_t frag_floats = static_cast<std::size_t>(fs.channels) * fs.samples;
  const std::size_t expected_payload = n_frag * frag_floats * 4;
  const std::size_t expected_total = 8 + expected_payload + 8;
  if (blob.size() < expected_total)
    throw FormatError("read_archive: data.bin truncated, expected " +
                          std::to_string(expected_total) + " bytes but found " +
                          std::to_string(blob.size()),
                      blob.size());
  if (blob.size() > expected_total)
    throw FormatError("read_archive: data.bin has " +
                          std::to_string(blob.size() - expected_total) + " trailing bytes",
                      expected_total);

  const unsigned char* payload = blob.data() + 8;
  const std::uint64_t stored = detail::get_u64_le(payload + expected_payload);
  const std::uint64_t actual = xxh64(payload, expected_payload);
  if (stored != actual)
    throw FormatError("read_archive: checksum mismatch", 8 + expected_payload);

  fs.fragments.reserve(n_frag);
  std::size_t off = 0;
  for (const auto& fj : manifest["fragments"]) {
    Fragment f;
    f.subject_id = fj.at("subject_id").get<int>();
    f.fragment_id = fj.at("fragment_id").get<int>();
    f.true_label = fj.at("true_label").get<int>();
    f.train_label = fj.at("train_label").get<int>();
    // Labels index two-class structures downstream; reject junk here.
    if (f.subject_id < 0 || (f.true_label != 0 && f.true_label != 1) ||
        (f.train_label != 0 && f.train_label != 1))
      throw FormatError("read_archive: fragment " + std::to_string(fs.fragments.size()) +
                            " has out-of-range subject or label fields",
                        0);
    f.channels = fs.channels;
    f.samples = fs.samples;
    f.values.resize(frag_floats);
    for (std::size_t i = 0; i < frag_floats; ++i) {
      f.values[i] = detail::bits_float(detail::get_u32_le(payload + off));
      off += 4;
    }
    fs.fragments.push_back(std::move(f));
  }
  return fs;
}

}  // namespace macs
