#include "disp/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "disp/errors.hpp"

namespace disp {

namespace {

constexpr char kMagic[] = "DISPCKPT1";
constexpr std::size_t kMagicLen = 9;

template <typename T>
void write_pod(std::ostream& os, T v) {
  // Little-endian hosts only; the format is defined little-endian.
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void Checkpoint::put_f64(const std::string& name, std::vector<std::uint64_t> shape,
                         std::vector<double> data) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != data.size()) throw NumericError("checkpoint: shape/data mismatch for " + name);
  Section s;
  s.type = Section::Type::f64;
  s.shape = std::move(shape);
  s.f64 = std::move(data);
  sections_[name] = std::move(s);
}

void Checkpoint::put_i64(const std::string& name, std::vector<std::int64_t> data) {
  Section s;
  s.type = Section::Type::i64;
  s.shape = {data.size()};
  s.i64 = std::move(data);
  sections_[name] = std::move(s);
}

void Checkpoint::put_u8(const std::string& name, std::vector<std::uint8_t> data) {
  Section s;
  s.type = Section::Type::u8;
  s.shape = {data.size()};
  s.u8 = std::move(data);
  sections_[name] = std::move(s);
}

void Checkpoint::put_scalar(const std::string& name, double value) {
  put_f64(name, {1}, {value});
}

void Checkpoint::put_string(const std::string& name, const std::string& value) {
  put_u8(name, std::vector<std::uint8_t>(value.begin(), value.end()));
}

const Checkpoint::Section& Checkpoint::get(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw DataError("checkpoint: missing section " + name);
  return it->second;
}

const std::vector<double>& Checkpoint::f64(const std::string& name) const {
  return get(name).f64;
}

const std::vector<std::int64_t>& Checkpoint::i64(const std::string& name) const {
  return get(name).i64;
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& v = f64(name);
  if (v.size() != 1) throw DataError("checkpoint: section " + name + " is not scalar");
  return v[0];
}

std::string Checkpoint::string(const std::string& name) const {
  const auto& v = get(name).u8;
  return std::string(v.begin(), v.end());
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sections_) out.push_back(name);
  return out;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot write " + path.string());
  os.write(kMagic, kMagicLen);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, s] : sections_) {
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(s.type));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.shape.size()));
    for (auto d : s.shape) write_pod<std::uint64_t>(os, d);
    switch (s.type) {
      case Section::Type::f64:
        write_pod<std::uint64_t>(os, s.f64.size() * sizeof(double));
        os.write(reinterpret_cast<const char*>(s.f64.data()),
                 static_cast<std::streamsize>(s.f64.size() * sizeof(double)));
        break;
      case Section::Type::i64:
        write_pod<std::uint64_t>(os, s.i64.size() * sizeof(std::int64_t));
        os.write(reinterpret_cast<const char*>(s.i64.data()),
                 static_cast<std::streamsize>(s.i64.size() * sizeof(std::int64_t)));
        break;
      case Section::Type::u8:
        write_pod<std::uint64_t>(os, s.u8.size());
        os.write(reinterpret_cast<const char*>(s.u8.data()),
                 static_cast<std::streamsize>(s.u8.size()));
        break;
    }
  }
  if (!os) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  char magic[kMagicLen];
  is.read(magic, kMagicLen);
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());

  Checkpoint out;
  auto count = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    Section s;
    s.type = static_cast<Section::Type>(read_pod<std::uint8_t>(is));
    auto ndim = read_pod<std::uint32_t>(is);
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      s.shape.push_back(read_pod<std::uint64_t>(is));
      n *= s.shape.back();
    }
    auto nbytes = read_pod<std::uint64_t>(is);
    switch (s.type) {
      case Section::Type::f64:
        if (nbytes != n * sizeof(double)) throw DataError("checkpoint: corrupt section " + name);
        s.f64.resize(n);
        is.read(reinterpret_cast<char*>(s.f64.data()), static_cast<std::streamsize>(nbytes));
        break;
      case Section::Type::i64:
        if (nbytes != n * sizeof(std::int64_t))
          throw DataError("checkpoint: corrupt section " + name);
        s.i64.resize(n);
        is.read(reinterpret_cast<char*>(s.i64.data()), static_cast<std::streamsize>(nbytes));
        break;
      case Section::Type::u8:
        if (nbytes != n) throw DataError("checkpoint: corrupt section " + name);
        s.u8.resize(n);
        is.read(reinterpret_cast<char*>(s.u8.data()), static_cast<std::streamsize>(nbytes));
        break;
      default:
        throw DataError("checkpoint: unknown section type in " + name);
    }
    if (!is) throw DataError("checkpoint: truncated section " + name);
    out.sections_[name] = std::move(s);
  }
  return out;
}

}  // namespace disp
