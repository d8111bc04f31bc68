#include "clusterattn/harness/dump.hpp"

#include "clusterattn/npy.hpp"

namespace clusterattn::harness {
namespace fs = std::filesystem;
namespace {

constexpr const char* kParts[] = {"q", "k", "v"};

fs::path head_dir(const fs::path& dir, std::size_t t, std::size_t l, std::size_t h) {
  return dir / ("step" + std::to_string(t)) / ("layer" + std::to_string(l)) / ("head" + std::to_string(h));
}

// Counts consecutive <prefix>0, <prefix>1, ... subdirectories.
std::size_t count_numbered(const fs::path& dir, const std::string& prefix) {
  std::size_t n = 0;
  while (fs::is_directory(dir / (prefix + std::to_string(n)))) ++n;
  return n;
}

}  // namespace

void write_dump(const fs::path& dir, const Workload& workload) {
  for (std::size_t t = 0; t < workload.size(); ++t) {
    for (std::size_t l = 0; l < workload[t].size(); ++l) {
      for (std::size_t h = 0; h < workload[t][l].size(); ++h) {
        const fs::path p = head_dir(dir, t, l, h);
        std::error_code ec;
        fs::create_directories(p, ec);
        if (ec) throw IoError(p.string() + ": " + ec.message());
        const HeadInput& in = workload[t][l][h];
        write_tensor(p / "q.npy", in.q);
        write_tensor(p / "k.npy", in.k);
        write_tensor(p / "v.npy", in.v);
      }
    }
  }
}

Workload ingest_dump(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": dump directory not found");
  const std::size_t steps = count_numbered(dir, "step");
  if (steps == 0) throw ContractError(dir.string() + ": no step0 directory");
  const std::size_t layers = count_numbered(dir / "step0", "layer");
  if (layers == 0) throw ContractError((dir / "step0").string() + ": no layer0 directory");

  // Check every header before loading any payload so dtype mismatches are
  // reported as such rather than as a per-file format error.
  std::string dtype;
  fs::path dtype_source;
  std::vector<std::size_t> heads(layers);
  for (std::size_t t = 0; t < steps; ++t) {
    if (count_numbered(dir / ("step" + std::to_string(t)), "layer") != layers) {
      throw ContractError(dir.string() + ": step" + std::to_string(t) + " has a different layer count than step0");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t n = count_numbered(dir / ("step" + std::to_string(t)) / ("layer" + std::to_string(l)), "head");
      if (t == 0) heads[l] = n;
      if (n == 0 || n != heads[l]) {
        throw ContractError(dir.string() + ": step" + std::to_string(t) + "/layer" + std::to_string(l) +
                            " has " + std::to_string(n) + " heads, expected " + std::to_string(heads[l]));
      }
      for (std::size_t h = 0; h < n; ++h) {
        for (const char* part : kParts) {
          const fs::path file = head_dir(dir, t, l, h) / (std::string(part) + ".npy");
          if (!fs::exists(file)) throw IoError(file.string() + ": missing");
          const NpyHeader header = read_npy_header(file);
          if (dtype.empty()) {
            dtype = header.descr;
            dtype_source = file;
          } else if (header.descr != dtype) {
            throw ContractError(file.string() + ": dtype '" + header.descr + "' differs from '" + dtype +
                                "' in " + dtype_source.string());
          }
        }
      }
    }
  }

  Workload w(steps, std::vector<std::vector<HeadInput>>(layers));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads[l]; ++h) {
        const fs::path p = head_dir(dir, t, l, h);
        HeadInput in{read_tensor(p / "q.npy"), read_tensor(p / "k.npy"), read_tensor(p / "v.npy")};
        if (in.q.cols() != in.k.cols() || in.k.rows() != in.v.rows() || in.q.rows() != in.k.rows()) {
          throw ContractError(p.string() + ": q " + shape_string(in.q) + ", k " + shape_string(in.k) + ", v " +
                              shape_string(in.v) + " are inconsistent");
        }
        if (t > 0) {
          const HeadInput& ref = w[0][l][h];
          if (in.q.rows() != ref.q.rows() || in.q.cols() != ref.q.cols() || in.v.cols() != ref.v.cols()) {
            throw ContractError(p.string() + ": shape " + shape_string(in.q) + " drifted from step0 " +
                                shape_string(ref.q));
          }
        }
        w[t][l].push_back(std::move(in));
      }
    }
  }
  return w;
}

}  // namespace clusterattn::harness
