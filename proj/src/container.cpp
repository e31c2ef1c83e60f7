#include "vmsrb/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vmsrb {

// Payload is written as raw native float64; the format is defined as
// little-endian, so refuse to build on big-endian targets.
static_assert(std::endian::native == std::endian::little,
              "container i/o assumes a little-endian target");

namespace {

constexpr char kMagic[8] = {'V', 'M', 'S', 'R', 'B', 'B', 'I', 'N'};

void write_u64(std::ostream& out, std::uint64_t value) {
  char buf[8];
  std::memcpy(buf, &value, 8);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  std::uint64_t value = 0;
  std::memcpy(&value, buf, 8);
  return value;
}

}  // namespace

void Container::add(const std::string& name, const VectorXd& v) {
  Entry e;
  e.shape = {static_cast<std::int64_t>(v.size())};
  e.data.assign(v.data(), v.data() + v.size());
  entries_[name] = std::move(e);
}

void Container::add(const std::string& name, const MatrixXd& m) {
  Entry e;
  e.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  e.data.assign(m.data(), m.data() + m.size());
  entries_[name] = std::move(e);
}

void Container::add_scalar(const std::string& name, double value) {
  add(name, VectorXd(VectorXd::Constant(1, value)));
}

bool Container::has(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

const Container::Entry& Container::entry(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "container: no array named '" + name + "'");
  return it->second;
}

const std::vector<std::int64_t>& Container::shape(const std::string& name) const {
  return entry(name).shape;
}

VectorXd Container::vector(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.shape.size() == 1, "container: array '" + name + "' is not 1-d");
  return Eigen::Map<const VectorXd>(e.data.data(), static_cast<Eigen::Index>(e.data.size()));
}

MatrixXd Container::matrix(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.shape.size() == 2, "container: array '" + name + "' is not 2-d");
  return Eigen::Map<const MatrixXd>(e.data.data(), static_cast<Eigen::Index>(e.shape[0]),
                                    static_cast<Eigen::Index>(e.shape[1]));
}

double Container::scalar(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.data.size() == 1, "container: array '" + name + "' is not a scalar");
  return e.data[0];
}

void Container::save(const std::string& path) const {
  nlohmann::json header;
  header["format"] = "VMSRBBIN";
  header["version"] = 1;
  header["meta"] = meta_;
  nlohmann::json arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    const std::uint64_t bytes = 8ull * e.data.size();
    arrays.push_back({{"name", name},
                      {"dtype", "f8"},
                      {"order", "F"},
                      {"shape", e.shape},
                      {"offset", offset},
                      {"bytes", bytes}});
    offset += bytes;
  }
  header["arrays"] = std::move(arrays);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "container: cannot open for writing: " + path);
  out.write(kMagic, 8);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, e] : entries_) {
    out.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(8 * e.data.size()));
  }
  require(out.good(), "container: write failed: " + path);
}

Container Container::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "container: cannot open: " + path);

  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
          "container: bad magic in " + path);
  const std::uint64_t header_len = read_u64(in);
  require(in.good() && header_len > 0 && header_len < (1ull << 31),
          "container: bad header length in " + path);

  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  require(in.good(), "container: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("container: malformed header in " + path + ": " + ex.what());
  }
  require(header.value("format", "") == "VMSRBBIN", "container: wrong format tag in " + path);
  require(header.value("version", 0) == 1, "container: unsupported version in " + path);

  Container c;
  c.meta_ = header.value("meta", nlohmann::json::object());

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& desc : header.value("arrays", nlohmann::json::array())) {
    const std::string name = desc.at("name").get<std::string>();
    require(desc.at("dtype").get<std::string>() == "f8",
            "container: unsupported dtype for '" + name + "' in " + path);
    Entry e;
    e.shape = desc.at("shape").get<std::vector<std::int64_t>>();
    const std::uint64_t offset = desc.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = desc.at("bytes").get<std::uint64_t>();
    require(bytes % 8 == 0 && offset + bytes <= payload.size(),
            "container: array '" + name + "' out of bounds in " + path);
    std::int64_t expect = 1;
    for (std::int64_t s : e.shape) expect *= s;
    require(static_cast<std::uint64_t>(expect) * 8 == bytes,
            "container: shape/bytes mismatch for '" + name + "' in " + path);
    e.data.resize(bytes / 8);
    std::memcpy(e.data.data(), payload.data() + offset, bytes);
    c.entries_[name] = std::move(e);
  }
  return c;
}

}  // namespace vmsrb
