#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mesa/net.hpp"

namespace mesa::ckpt {

// Named container of parameter sets and scalar values. Saved as a versioned
// little-endian binary record of layer shapes + row-major entries; write/read
// round trips are bit-exact.
struct Checkpoint {
  std::vector<std::pair<std::string, net::ParameterSet>> params;
  std::vector<std::pair<std::string, double>> scalars;

  void put(std::string name, net::ParameterSet value);
  void put_scalar(std::string name, double value);
  // nullptr when absent.
  const net::ParameterSet* find(std::string_view name) const;
  // Throws IoError when absent (a checkpoint missing a required entry).
  const net::ParameterSet& require(std::string_view name) const;
  double scalar(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

void save(const Checkpoint& ckpt, const std::string& path);
Checkpoint load(const std::string& path);

}  // namespace mesa::ckpt
