#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clusterattn/harness/dump.hpp"
#include "clusterattn/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace clusterattn;
using namespace clusterattn::harness;

namespace {

enum Exit { kOk = 0, kValidation = 1, kIo = 2, kInternal = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

// Shapes of an ingested dump replace the synthetic sizes in the config echo.
void adopt_shapes(ExperimentConfig& cfg, const Workload& w) {
  const HeadInput& first = w.front().front().front();
  cfg.steps = static_cast<Index>(w.size());
  cfg.heads = static_cast<Index>(w.front().front().size());
  cfg.seq_len = first.k.rows();
  cfg.head_dim = first.k.cols();
  cfg.layers.resize(w.front().size());
}

Workload workload_for(ExperimentConfig& cfg, const std::string& input) {
  if (input.empty()) return gen_workload(cfg);
  Workload w = ingest_dump(input);
  adopt_shapes(cfg, w);
  return w;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-sparse attention experiments"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the config seed");
  };

  std::string out_dir, input;
  bool synthetic = false;

  CLI::App* gen = app.add_subcommand("gen", "Write a synthetic tensor dump");
  add_common(gen);
  gen->add_option("--out", out_dir, "Dump directory")->required();

  CLI::App* run = app.add_subcommand("run", "Run full and sparse attention and write a report");
  add_common(run);
  auto* input_opt = run->add_option("--input", input, "Tensor dump directory");
  auto* synth_opt = run->add_flag("--synthetic", synthetic, "Generate inputs from the config");
  input_opt->excludes(synth_opt);
  run->add_option("--out", out_dir, "Report directory")->required();
  std::string scorer;
  run->add_option("--scorer", scorer, "quest or mean")->check(CLI::IsMember({"quest", "mean"}));
  std::optional<Index> threads;
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  bool deterministic = false;
  run->add_flag("--deterministic", deterministic, "Single-threaded, no wall-clock fields");

  CLI::App* an = app.add_subcommand("analyze", "Compactness, Davies-Bouldin and PCA export");
  add_common(an);
  auto* an_input = an->add_option("--input", input, "Tensor dump directory");
  auto* an_synth = an->add_flag("--synthetic", synthetic, "Generate inputs from the config");
  an_input->excludes(an_synth);
  an->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* be = app.add_subcommand("bench", "Wall-clock of full vs. sparse attention for one head");
  add_common(be);
  std::optional<Index> seq_len;
  Index repeats = 5;
  be->add_option("--seq-len", seq_len, "Sequence length L")->check(CLI::PositiveNumber);
  be->add_option("--repeats", repeats, "Timed repetitions (median reported)")->check(CLI::PositiveNumber);
  be->add_option("--out", out_dir, "Write bench.json here as well as to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if ((run->parsed() || an->parsed()) && input.empty() && !synthetic) {
    std::cerr << "error: one of --input or --synthetic is required\n";
    return kValidation;
  }

  return run_guarded([&] {
    ExperimentConfig cfg = load(common);
    if (gen->parsed()) {
      write_dump(out_dir, gen_workload(cfg));
      std::cout << "wrote " << out_dir << "\n";
    } else if (run->parsed()) {
      if (!scorer.empty()) cfg.scorer = parse_scorer(scorer);
      if (threads) cfg.threads = *threads;
      if (deterministic) cfg.deterministic = true;
      validate(cfg);
      Workload w = workload_for(cfg, input);
      const RunReport report = run_experiment(cfg, w);
      write_report(out_dir, report);
      const Totals& t = report.totals;
      std::printf("layers %lld (full %lld)  rel_l2 %.3e  snr %.2f dB  recall %.4f  density %.4f  est_speedup %.2f\n",
                  static_cast<long long>(t.layers), static_cast<long long>(t.full_layers), t.mean_rel_l2,
                  t.mean_snr_db, t.mean_recall, t.mean_density, t.flops.est_speedup());
    } else if (an->parsed()) {
      Workload w = workload_for(cfg, input);
      analyze(cfg, w, out_dir);
      std::cout << "wrote " << (fs::path(out_dir) / "analysis.json").string() << "\n";
    } else if (be->parsed()) {
      if (seq_len) cfg.seq_len = *seq_len;
      const Json j = bench_to_json(bench(cfg, repeats));
      std::cout << j.dump(2) << "\n";
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "bench.json") << j.dump(2) << "\n";
      }
    }
  });
}
