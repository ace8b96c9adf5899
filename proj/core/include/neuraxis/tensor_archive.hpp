#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace neuraxis {

// Flat binary tensor container: a 4-byte little-endian header size, a JSON
// header listing {name, dtype, shape, offset} per tensor plus free-form
// string metadata, then one contiguous little-endian float32 payload.
// Matrices are serialized row-major.
class TensorArchive {
 public:
  void add(const std::string& name, const Eigen::MatrixXd& m);
  void add(const std::string& name, const Eigen::VectorXd& v);
  void add(const std::string& name, const std::vector<double>& v);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  Eigen::MatrixXd matrix(const std::string& name) const;
  Eigen::VectorXd vector(const std::string& name) const;
  // Shape as stored; vectors have a single dimension.
  std::vector<std::int64_t> shape(const std::string& name) const;

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  struct Entry {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
  };
  std::vector<std::pair<std::string, Entry>> entries_;
  std::map<std::string, std::string> meta_;

  const Entry& find(const std::string& name) const;
};

}  // namespace neuraxis
