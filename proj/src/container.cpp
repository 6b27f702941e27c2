#include "cadv/container.hpp"

#include <cstring>
#include <fstream>

namespace cadv {

namespace {

constexpr char kMagic[5] = {'C', 'A', 'D', 'V', '1'};
constexpr char kTensorTag[4] = {'T', 'N', 'S', 'R'};
constexpr char kTextTag[4] = {'T', 'E', 'X', 'T'};

template <class T>
void append(std::string& s, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  s.append(buf, sizeof(T));
}

template <class T>
T read_at(const std::string& s, size_t& off) {
  CADV_CHECK(off + sizeof(T) <= s.size(), "container: truncated file");
  T v;
  std::memcpy(&v, s.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void Container::put_text(const std::string& name, const std::string& text) {
  std::string payload(kTextTag, 4);
  payload += text;
  sections_.emplace_back(name, std::move(payload));
}

void Container::put_tensor(const std::string& name, const Shape& shape,
                           const std::vector<double>& data) {
  CADV_CHECK(numel(shape) == static_cast<int64_t>(data.size()), "container: tensor '", name,
             "' shape ", shape_str(shape), " vs ", data.size(), " values");
  std::string payload(kTensorTag, 4);
  append<uint32_t>(payload, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) append<int64_t>(payload, d);
  payload.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  sections_.emplace_back(name, std::move(payload));
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, p] : sections_)
    if (n == name) return true;
  return false;
}

const std::string& Container::payload(const std::string& name) const {
  for (const auto& [n, p] : sections_)
    if (n == name) return p;
  fail("container: missing section '", name, "'");
}

std::string Container::text(const std::string& name) const {
  const std::string& p = payload(name);
  CADV_CHECK(p.size() >= 4 && std::memcmp(p.data(), kTextTag, 4) == 0,
             "container: section '", name, "' is not text");
  return p.substr(4);
}

std::vector<double> Container::tensor(const std::string& name, Shape* shape) const {
  const std::string& p = payload(name);
  CADV_CHECK(p.size() >= 4 && std::memcmp(p.data(), kTensorTag, 4) == 0,
             "container: section '", name, "' is not a tensor");
  size_t off = 4;
  uint32_t ndim = read_at<uint32_t>(p, off);
  Shape s(ndim);
  for (auto& d : s) d = read_at<int64_t>(p, off);
  int64_t n = numel(s);
  CADV_CHECK(off + static_cast<size_t>(n) * sizeof(double) <= p.size(),
             "container: tensor '", name, "' truncated");
  std::vector<double> data(static_cast<size_t>(n));
  std::memcpy(data.data(), p.data() + off, data.size() * sizeof(double));
  if (shape) *shape = std::move(s);
  return data;
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  for (const auto& [n, p] : sections_) out.push_back(n);
  return out;
}

void Container::save(const std::string& path) const {
  std::string blob(kMagic, 5);
  append<uint8_t>(blob, 1);  // format version
  append<uint32_t>(blob, static_cast<uint32_t>(sections_.size()));
  for (const auto& [name, payload] : sections_) {
    append<uint32_t>(blob, static_cast<uint32_t>(name.size()));
    blob += name;
    append<uint64_t>(blob, payload.size());
    blob += payload;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  CADV_CHECK(f.good(), "container: cannot open '", path, "' for writing");
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  CADV_CHECK(f.good(), "container: write failed for '", path, "'");
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CADV_CHECK(f.good(), "container: cannot open '", path, "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CADV_CHECK(blob.size() >= 6 && std::memcmp(blob.data(), kMagic, 5) == 0,
             "container: wrong magic in '", path, "'");
  size_t off = 5;
  uint8_t ver = read_at<uint8_t>(blob, off);
  CADV_CHECK(ver == 1, "container: unsupported version ", int(ver));
  uint32_t count = read_at<uint32_t>(blob, off);
  Container c;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = read_at<uint32_t>(blob, off);
    CADV_CHECK(off + nlen <= blob.size(), "container: truncated file");
    std::string name = blob.substr(off, nlen);
    off += nlen;
    uint64_t plen = read_at<uint64_t>(blob, off);
    CADV_CHECK(off + plen <= blob.size(), "container: truncated file");
    c.sections_.emplace_back(std::move(name), blob.substr(off, plen));
    off += plen;
  }
  return c;
}

}  // namespace cadv
