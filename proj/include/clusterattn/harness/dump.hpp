#pragma once

#include <filesystem>

#include "clusterattn/harness/synthetic.hpp"

namespace clusterattn::harness {

// Layout: <dir>/step<t>/layer<l>/head<h>/{q,k,v}.npy, each [L, D] float32.
void write_dump(const std::filesystem::path& dir, const Workload& workload);

// Reads a dump back. Malformed files raise FormatError naming the file;
// inconsistent shapes, dtypes or directory structure raise ContractError.
Workload ingest_dump(const std::filesystem::path& dir);

}  // namespace clusterattn::harness
