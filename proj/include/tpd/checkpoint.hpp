// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: 8-byte magic, u64 header length, JSON metadata
// header (schema version, model config, array manifest, payload checksum),
// then raw little-endian array payloads. Loads verify the checksum and the
// schema version before touching any model state.

#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "tpd/nn.hpp"
#include "tpd/tensor.hpp"

namespace tpd {

inline constexpr char kCheckpointMagic[8] = {'T', 'P', 'D', 'C', 'K', 'P', 'T', '\n'};
inline constexpr int kCheckpointSchemaVersion = 1;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

class CheckpointWriter {
 public:
  void set_meta(const std::string& key, const nlohmann::json& value) { meta_[key] = value; }

  template <typename T>
  void add_array(const std::string& name, const Tensor<T>& t) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    entry["shape"] = t.shape().dims();
    entry["offset"] = payload_.size();
    entry["nbytes"] = static_cast<uint64_t>(t.bytes());
    manifest_.push_back(entry);
    size_t at = payload_.size();
    payload_.resize(at + static_cast<size_t>(t.bytes()));
    std::memcpy(payload_.data() + at, t.data(), static_cast<size_t>(t.bytes()));
  }

  template <typename T>
  void add_store(const std::string& prefix, const nn::ParamStore<T>& store) {
    for (auto& [name, p] : store.items()) add_array(prefix + name, p->value);
  }

  void write(const std::string& path) {
    meta_["schema_version"] = kCheckpointSchemaVersion;
    meta_["arrays"] = manifest_;
    meta_["payload_bytes"] = payload_.size();
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(payload_.data(), payload_.size())));
    meta_["payload_checksum"] = std::string(hex);
    std::string header = meta_.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    TPD_CHECK_MSG(f.good(), "cannot open " << path << " for writing");
    f.write(kCheckpointMagic, 8);
    uint64_t hlen = header.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(payload_.data()),
            static_cast<std::streamsize>(payload_.size()));
    TPD_CHECK_MSG(f.good(), "write failed: " << path);
  }

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  nlohmann::json manifest_ = nlohmann::json::array();
  std::vector<unsigned char> payload_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    TPD_CHECK_MSG(f.good(), "cannot open checkpoint " << path);
    char magic[8];
    f.read(magic, 8);
    TPD_CHECK_MSG(f.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                  "not a checkpoint file: " << path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string header(hlen, '\0');
    f.read(header.data(), static_cast<std::streamsize>(hlen));
    TPD_CHECK_MSG(f.good(), "truncated checkpoint header: " << path);
    meta_ = nlohmann::json::parse(header, nullptr, /*allow_exceptions=*/false);
    TPD_CHECK_MSG(!meta_.is_discarded(), "corrupt checkpoint header: " << path);
    int version = meta_.value("schema_version", -1);
    TPD_CHECK_MSG(version == kCheckpointSchemaVersion,
                  "checkpoint schema version " << version << ", expected "
                                               << kCheckpointSchemaVersion);
    size_t nbytes = meta_.at("payload_bytes").get<size_t>();
    payload_.resize(nbytes);
    f.read(reinterpret_cast<char*>(payload_.data()), static_cast<std::streamsize>(nbytes));
    TPD_CHECK_MSG(f.good() && static_cast<size_t>(f.gcount()) == nbytes,
                  "truncated checkpoint payload: " << path);
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(payload_.data(), payload_.size())));
    TPD_CHECK_MSG(meta_.at("payload_checksum").get<std::string>() == hex,
                  "checkpoint checksum mismatch (corrupt file): " << path);
    for (const auto& e : meta_.at("arrays")) index_[e.at("name").get<std::string>()] = e;
  }

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto& [k, v] : index_) out.push_back(k);
    return out;
  }

  template <typename T>
  Tensor<T> array(const std::string& name) const {
    auto it = index_.find(name);
    TPD_CHECK_MSG(it != index_.end(), "checkpoint has no array " << name);
    const nlohmann::json& e = it->second;
    std::string dtype = e.at("dtype").get<std::string>();
    TPD_CHECK_MSG(dtype == (sizeof(T) == 4 ? "f32" : "f64"),
                  "array " << name << " dtype " << dtype << " mismatch");
    Shape shape(e.at("shape").get<std::vector<int64_t>>());
    size_t offset = e.at("offset").get<size_t>();
    size_t nbytes = e.at("nbytes").get<size_t>();
    TPD_CHECK(offset + nbytes <= payload_.size());
    TPD_CHECK(nbytes == static_cast<size_t>(shape.numel()) * sizeof(T));
    Tensor<T> t(shape);
    std::memcpy(t.data(), payload_.data() + offset, nbytes);
    return t;
  }

  // load every array of `store` by name; all must be present with matching
  // shapes or the model is left untouched
  template <typename T>
  void load_store(const std::string& prefix, nn::ParamStore<T>& store) const {
    std::vector<Tensor<T>> staged;
    for (auto& [name, p] : store.items()) {
      Tensor<T> t = array<T>(prefix + name);
      TPD_CHECK_MSG(t.shape() == p->shape(), "shape mismatch for " << name);
      staged.push_back(std::move(t));
    }
    size_t i = 0;
    for (auto& [name, p] : store.items()) p->value = std::move(staged[i++]);
  }

 private:
  nlohmann::json meta_;
  std::vector<unsigned char> payload_;
  std::map<std::string, nlohmann::json> index_;
};

}  // namespace tpd
