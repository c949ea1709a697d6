/*
Copyright 2026 The bitlinear Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

// MNIST download with checksum verification. The manifest lists each archive
// with the SHA-256 of its decompressed IDX payload, so a mirror that
// recompresses the files still verifies.

#include <curl/curl.h>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitlinear/config.hpp"
#include "bitlinear/dataset.hpp"

namespace bitlinear::fetch {

struct FileEntry {
  std::string name;
  std::string idx_sha256;
};

struct Manifest {
  std::string base_url;
  std::vector<FileEntry> files;
};

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("fetch: cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fetch: invalid manifest: ") + e.what());
  }
  detail::only_keys(j, "manifest", {"base_url", "files"});
  Manifest m;
  m.base_url = detail::get_as<std::string>(j, "manifest", "base_url");
  if (!j.contains("files") || !j["files"].is_array())
    throw ConfigError("manifest.files: expected an array");
  for (const auto& f : j["files"]) {
    detail::only_keys(f, "manifest.files[]", {"name", "idx_sha256"});
    m.files.push_back({detail::get_as<std::string>(f, "manifest.files[]", "name"),
                       detail::get_as<std::string>(f, "manifest.files[]", "idx_sha256")});
  }
  return m;
}

inline std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline void download(const std::string& url, const std::filesystem::path& dest) {
  std::FILE* out = std::fopen(dest.string().c_str(), "wb");
  if (!out) throw std::runtime_error("cannot write " + dest.string());
  CURL* curl = curl_easy_init();
  if (!curl) {
    std::fclose(out);
    throw std::runtime_error("curl init failed");
  }
  char err[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, out);
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_ERRORBUFFER, err);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  std::fclose(out);
  if (rc != CURLE_OK) {
    std::filesystem::remove(dest);
    throw std::runtime_error("download failed for " + url + ": " +
                             (err[0] ? std::string(err) : curl_easy_strerror(rc)));
  }
}

inline std::string join_url(std::string base, const std::string& name) {
  if (!base.empty() && base.back() != '/') base += '/';
  return base + name;
}

/// Downloads every manifest file into `dest`, verifying each before it is
/// moved into place. Already-present files that verify are kept.
inline void fetch_all(const Manifest& manifest, const std::filesystem::path& dest,
                      const std::function<void(const std::string&)>& log = {}) {
  std::filesystem::create_directories(dest);
  for (const FileEntry& f : manifest.files) {
    const auto final_path = dest / f.name;
    if (std::filesystem::exists(final_path) &&
        sha256_hex(read_maybe_gzip(final_path)) == f.idx_sha256) {
      if (log) log(f.name + ": present, checksum ok");
      continue;
    }
    auto part = final_path;
    part += ".part";
    const std::string url = join_url(manifest.base_url, f.name);
    if (log) log(f.name + ": downloading " + url);
    download(url, part);
    std::string got;
    try {
      got = sha256_hex(read_maybe_gzip(part));
    } catch (...) {
      std::filesystem::remove(part);
      throw;
    }
    if (got != f.idx_sha256) {
      std::filesystem::remove(part);
      throw std::runtime_error(f.name + ": checksum mismatch, expected " + f.idx_sha256 +
                               ", got " + got);
    }
    std::filesystem::rename(part, final_path);
    if (log) log(f.name + ": checksum ok");
  }
}

}  // namespace bitlinear::fetch
