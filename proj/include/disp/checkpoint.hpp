#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace disp {

/// Little-endian binary container with named sections, magic "DISPCKPT1".
/// Each section is a typed array with a shape header; strings ride along as
/// byte sections. Model, memory bank and trainer state all serialize through
/// this one format so a run can resume with history intact.
class Checkpoint {
 public:
  struct Section {
    enum class Type : std::uint8_t { f64 = 0, i64 = 1, u8 = 2 };
    Type type = Type::f64;
    std::vector<std::uint64_t> shape;
    std::vector<double> f64;
    std::vector<std::int64_t> i64;
    std::vector<std::uint8_t> u8;
  };

  void put_f64(const std::string& name, std::vector<std::uint64_t> shape,
               std::vector<double> data);
  void put_i64(const std::string& name, std::vector<std::int64_t> data);
  void put_u8(const std::string& name, std::vector<std::uint8_t> data);
  void put_scalar(const std::string& name, double value);
  void put_string(const std::string& name, const std::string& value);

  bool has(const std::string& name) const { return sections_.count(name) > 0; }
  const Section& get(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<std::int64_t>& i64(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::string string(const std::string& name) const;

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Section> sections_;
};

}  // namespace disp
