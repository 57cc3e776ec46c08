#pragma once

#include <string>

#include "embens/arch.hpp"
#include "embens/ensemble_net.hpp"

namespace embens {

/// Parameters plus the spec and seed that produced them.
struct Checkpoint {
  ArchSpec arch;
  Seed seed;
  EnsembleParams params;
};

/// File layout: 8-byte magic "EMBENS01", little-endian u64 header length,
/// JSON header, then the tensors as little-endian float64 in column-major
/// order at the offsets listed in the header.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace embens
