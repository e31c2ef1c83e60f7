#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmsrb/common.hpp"

namespace vmsrb {

/// Binary array container used for snapshots, interpolation models, and
/// reduced-model data.
///
/// File layout:
///   bytes 0..7    magic "VMSRBBIN"
///   bytes 8..15   little-endian uint64: JSON header length in bytes
///   header        UTF-8 JSON (see below)
///   payload       raw little-endian float64 array data, concatenated
///
/// Header schema:
///   {"format": "VMSRBBIN", "version": 1,
///    "meta": { ... free-form identification data ... },
///    "arrays": [{"name", "dtype": "f8", "order": "F",
///                "shape": [..], "offset", "bytes"}, ...]}
/// Offsets are relative to the start of the payload. Matrices are stored
/// column-major. All numeric data is float64; integer-valued arrays (index
/// sets) are stored as exact float64.
class Container {
 public:
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void add(const std::string& name, const VectorXd& v);
  void add(const std::string& name, const MatrixXd& m);
  void add_scalar(const std::string& name, double value);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::vector<std::int64_t>& shape(const std::string& name) const;

  VectorXd vector(const std::string& name) const;
  MatrixXd matrix(const std::string& name) const;
  double scalar(const std::string& name) const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);

 private:
  struct Entry {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
  };
  const Entry& entry(const std::string& name) const;

  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, Entry> entries_;
};

}  // namespace vmsrb
