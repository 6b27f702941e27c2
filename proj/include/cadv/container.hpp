#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cadv/common.hpp"

namespace cadv {

// Versioned binary container: magic "CADV1", then named sections. Tensors are
// always serialized as f64 so checkpoints are precision-independent.
class Container {
 public:
  void put_text(const std::string& name, const std::string& text);
  void put_tensor(const std::string& name, const Shape& shape, const std::vector<double>& data);

  bool has(const std::string& name) const;
  std::string text(const std::string& name) const;
  std::vector<double> tensor(const std::string& name, Shape* shape) const;
  std::vector<std::string> names() const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);

 private:
  const std::string& payload(const std::string& name) const;
  std::vector<std::pair<std::string, std::string>> sections_;
};

}  // namespace cadv
