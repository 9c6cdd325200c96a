#pragma once

// Download helper for the public micro-CT volumes. Needs libcurl and OpenSSL.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <curl/curl.h>
#include <openssl/evp.h>

#include "porogan/error.hpp"
#include "porogan/voxel.hpp"

namespace porogan {

/// Known volume geometries. The pore byte value is not part of the preset.
struct DatasetPreset {
  const char* name;
  Dims dims;
  double voxel_size_um;
};

inline constexpr DatasetPreset dataset_presets[] = {
    {"berea", {400, 400, 400}, 3.0},
    {"beadpack", {500, 500, 500}, 3.0},
    {"ketton", {500, 500, 500}, 7.6},
};

inline std::optional<DatasetPreset> find_preset(const std::string& name) {
  for (const auto& p : dataset_presets)
    if (name == p.name) return p;
  return std::nullopt;
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::path, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, Errc::internal, "EVP_MD_CTX_new failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

namespace detail {
inline std::size_t curl_write(char* data, std::size_t size, std::size_t n, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * n));
  return out->good() ? size * n : 0;
}
}  // namespace detail

/// Downloads `url` to `dest` (via a temporary file) and checks the SHA-256
/// digest when one is given. Returns the digest of the downloaded bytes.
inline std::string fetch_file(const std::string& url, const std::filesystem::path& dest,
                              const std::string& expected_sha256 = {}) {
  require(!url.empty(), Errc::config, "no URL given");
  if (dest.has_parent_path()) std::filesystem::create_directories(dest.parent_path());
  auto tmp = dest;
  tmp += ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + tmp.string());
    CURL* curl = curl_easy_init();
    require(curl != nullptr, Errc::internal, "curl_easy_init failed");
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, detail::curl_write);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
    const CURLcode rc = curl_easy_perform(curl);
    curl_easy_cleanup(curl);
    if (rc != CURLE_OK) {
      out.close();
      std::filesystem::remove(tmp);
      fail(Errc::io, "download of " + url + " failed: " + curl_easy_strerror(rc));
    }
  }
  const std::string digest = sha256_file(tmp);
  if (!expected_sha256.empty() && digest != expected_sha256) {
    std::filesystem::remove(tmp);
    fail(Errc::io, "checksum mismatch for " + url + ": got " + digest + ", expected " + expected_sha256);
  }
  std::filesystem::rename(tmp, dest);
  return digest;
}

}  // namespace porogan
