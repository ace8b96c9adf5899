#include "neuraxis/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "neuraxis/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor archive assumes a little-endian host");

namespace neuraxis {

using nlohmann::json;

void TensorArchive::add(const std::string& name, const Eigen::MatrixXd& m) {
  Entry e;
  e.shape = {m.rows(), m.cols()};
  e.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) e.data[k++] = static_cast<float>(m(r, c));
  entries_.emplace_back(name, std::move(e));
}

void TensorArchive::add(const std::string& name, const Eigen::VectorXd& v) {
  Entry e;
  e.shape = {v.size()};
  e.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) e.data[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  entries_.emplace_back(name, std::move(e));
}

void TensorArchive::add(const std::string& name, const std::vector<double>& v) {
  Entry e;
  e.shape = {static_cast<std::int64_t>(v.size())};
  e.data.assign(v.begin(), v.end());
  entries_.emplace_back(name, std::move(e));
}

bool TensorArchive::has(const std::string& name) const {
  for (const auto& [n, e] : entries_)
    if (n == name) return true;
  return false;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [n, e] : entries_) out.push_back(n);
  return out;
}

const TensorArchive::Entry& TensorArchive::find(const std::string& name) const {
  for (const auto& [n, e] : entries_)
    if (n == name) return e;
  throw_io("tensor archive: no tensor named '" + name + "'");
}

Eigen::MatrixXd TensorArchive::matrix(const std::string& name) const {
  const Entry& e = find(name);
  if (e.shape.size() != 2) throw_io("tensor '" + name + "' is not 2-d");
  Eigen::MatrixXd m(e.shape[0], e.shape[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<double>(e.data[k++]);
  return m;
}

Eigen::VectorXd TensorArchive::vector(const std::string& name) const {
  const Entry& e = find(name);
  std::size_t n = e.data.size();
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(e.data[i]);
  return v;
}

std::vector<std::int64_t> TensorArchive::shape(const std::string& name) const {
  return find(name).shape;
}

void TensorArchive::save(const std::string& path) const {
  json header;
  header["meta"] = meta_;
  json tensors = json::array();
  std::int64_t offset = 0;
  for (const auto& [n, e] : entries_) {
    json t;
    t["name"] = n;
    t["dtype"] = "f32";
    t["shape"] = e.shape;
    t["offset"] = offset;
    tensors.push_back(t);
    offset += static_cast<std::int64_t>(e.data.size() * sizeof(float));
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("cannot open for writing: " + path);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [n, e] : entries_)
    f.write(reinterpret_cast<const char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  if (!f) throw_io("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("cannot open: " + path);
  std::uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f) throw_io("truncated archive header: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw_io("truncated archive header: " + path);

  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw_io("malformed archive header: " + path);

  TensorArchive a;
  if (header.contains("meta"))
    a.meta_ = header["meta"].get<std::map<std::string, std::string>>();
  for (const auto& t : header["tensors"]) {
    if (t.at("dtype").get<std::string>() != "f32")
      throw_io("unsupported dtype in archive: " + path);
    Entry e;
    e.shape = t.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t count = 1;
    for (auto d : e.shape) count *= d;
    e.data.resize(static_cast<std::size_t>(count));
    a.entries_.emplace_back(t.at("name").get<std::string>(), std::move(e));
  }
  for (auto& [n, e] : a.entries_) {
    f.read(reinterpret_cast<char*>(e.data.data()),
           static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    if (!f) throw_io("truncated archive payload: " + path);
  }
  return a;
}

}  // namespace neuraxis
