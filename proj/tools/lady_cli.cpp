#include "lady/decoder.hpp"
#include "lady/fusion.hpp"
#include "lady/fusion_io.hpp"
#include "lady/harness.hpp"
#include "lady/pdms.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace lady;

namespace
{

enum Exit : int
{
  kOk = 0,
  kUsage = 1,
  kIo = 2,
  kFormat = 3,
  kConfig = 4,
  kDimension = 5,
  kNumeric = 6,
  kContract = 7,
  kScene = 8,
  kInsufficientData = 9,
  kEquivalence = 10,
  kOrdering = 11,
  kInternal = 12,
};

std::uint64_t default_seed()
{
  if (const char * env = std::getenv("LADY_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception &) {
      throw ConfigError(std::string("LADY_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 42;
}

/// "1,2,4,...,128" expands the elided run geometrically (or arithmetically when the ratio is not integral).
std::vector<std::size_t> parse_frames(const std::string & list)
{
  std::vector<std::string> parts;
  std::stringstream ss(list);
  for (std::string tok; std::getline(ss, tok, ',');) parts.push_back(tok);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == "...") {
      if (out.size() < 2 || i + 1 >= parts.size()) throw ConfigError("--frames: '...' needs two values before and one after");
      const std::size_t a = out[out.size() - 2];
      const std::size_t b = out.back();
      const std::size_t end = std::stoul(parts[i + 1]);
      if (b <= a) throw ConfigError("--frames: the run before '...' must increase");
      const bool geometric = a > 0 && b % a == 0 && b / a > 1;
      for (std::size_t v = geometric ? b * (b / a) : b + (b - a); v < end; v = geometric ? v * (b / a) : v + (b - a)) {
        out.push_back(v);
      }
      continue;
    }
    try {
      out.push_back(std::stoul(parts[i]));
    } catch (const std::exception &) {
      throw ConfigError("--frames: bad entry '" + parts[i] + "'");
    }
  }
  if (out.empty()) throw ConfigError("--frames: empty list");
  return out;
}

std::ostream & open_out(const std::string & path, std::ofstream & file)
{
  if (path == "-") return std::cout;
  file.open(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  return file;
}

int run_equiv(std::uint64_t seed)
{
  const auto results = harness::run_equivalence_suites(seed);
  harness::print_suites(std::cout, results);
  for (const auto & r : results) {
    if (!r.passed()) return kEquivalence;
  }
  return kOk;
}

struct BenchArgs
{
  std::string frames = "1,2,4,...,128";
  std::string mode = "both";
  std::string out = "-";
  std::size_t trials = 5;
  std::size_t warmup = 1;
};

int run_bench(const BenchArgs & args, std::uint64_t seed)
{
  std::vector<harness::BenchMode> modes;
  if (args.mode == "linear" || args.mode == "both") modes.push_back(harness::BenchMode::linear);
  if (args.mode == "softmax" || args.mode == "both") modes.push_back(harness::BenchMode::softmax);
  if (modes.empty()) throw ConfigError("--mode must be linear, softmax or both");
  harness::BenchConfig cfg;
  cfg.trials = args.trials;
  cfg.warmup = args.warmup;
  cfg.seed = seed;
  cfg.log = &std::cerr;
  const auto records = harness::run_scaling_bench(parse_frames(args.frames), modes, cfg);
  std::ofstream file;
  harness::write_bench_csv(open_out(args.out, file), records);
  return kOk;
}

struct DemoArgs
{
  std::size_t frames = 10;
  std::string out = "traj.json";
  std::string frames_in;
  std::string ego_in;
  std::string anchors_in;
  std::string scene_out;
  std::string dataset_out;
  std::size_t anchors = 100;
  std::size_t steps = 2;
};

int run_demo(const DemoArgs & args, std::uint64_t seed)
{
  const fusion::FusionConfig fcfg;
  const auto fparams = fusion::FusionParams<float>::random(fcfg, seed);
  auto frames = args.frames_in.empty() ? harness::gen_synthetic_frames<float>(fcfg, args.frames, seed + 1)
                                       : fusion::load_frames<float>(args.frames_in);
  frames = fusion::pad_history(std::move(frames), args.frames, fcfg);

  fusion::StreamingSession<float> session(fparams, fcfg);
  Tokens<float> fused;
  for (const auto & f : frames) fused = session.step(f);
  const Tokens<double> lidar = fusion::fused_lidar(fused, fcfg).cast<double>();

  const fusion::EgoStatus ego = args.ego_in.empty() ? fusion::EgoStatus{5.0, 0.0, fusion::Command::follow}
                                                    : fusion::load_ego(args.ego_in);
  const auto bev = fusion::assemble_bev(lidar, ego, fusion::BevParams<double>::random(fcfg.d, fcfg.grid_h, fcfg.grid_w, seed + 2));

  decoder::DecoderConfig dcfg;
  dcfg.d = fcfg.d;
  const auto dparams = decoder::DecoderParams::random(dcfg, seed + 3);
  decoder::AnchorSet anchors;
  if (args.anchors_in.empty()) {
    const auto dataset = harness::gen_trajectories(10 * args.anchors, dcfg.horizon, seed + 4);
    if (!args.dataset_out.empty()) {
      std::ofstream file(args.dataset_out);
      if (!file) throw IoError("cannot open '" + args.dataset_out + "' for writing");
      nlohmann::json j = nlohmann::json::array();
      for (const auto & t : dataset) j.push_back(decoder::trajectory_to_json(t));
      file << j.dump(2) << '\n';
    }
    anchors = decoder::cluster_anchors(dataset, args.anchors, seed + 5);
  } else {
    anchors = decoder::load_anchors(args.anchors_in);
  }

  const auto agents = decoder::agent_queries(bev, dparams);
  const auto out = decoder::decode(anchors, bev, agents, dparams, args.steps, seed + 6);
  const auto [best, index] = decoder::select_best(out);
  decoder::save_trajectory(best, args.out);
  if (!args.scene_out.empty()) pdms::save_scene(harness::gen_scene_case(seed + 7, dcfg.horizon).scene, args.scene_out);

  std::cout << "frames " << session.frames() << ", modes " << out.trajectories.size() << ", best mode " << index
            << " (anchor " << out.anchor_index[index] << ", confidence " << out.confidence[index] << ")\n";
  std::cout << "wrote " << args.out << '\n';
  return kOk;
}

int run_score(const std::string & traj_path, const std::string & scene_path, const std::string & out_path)
{
  const auto traj = decoder::load_trajectory(traj_path);
  const auto scene = pdms::load_scene(scene_path);
  const pdms::Config cfg;
  const auto s = pdms::eval_subscores(traj, scene, cfg);
  const double score = pdms::pdms(s, cfg.weights);
  std::ofstream file;
  pdms::write_report(open_out(out_path, file), {{scene_path, traj_path, s, score}});
  if (out_path != "-") std::cout << "pdms " << score << '\n';
  return kOk;
}

int run_cluster(const std::string & data, std::size_t k, const std::string & out_path, std::uint64_t seed)
{
  const auto dataset = decoder::load_trajectories(data);
  const auto anchors = decoder::cluster_anchors(dataset, k, seed);
  std::ofstream file;
  open_out(out_path, file) << decoder::anchors_to_json(anchors).dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"lady: linear-attention fusion, truncated-diffusion decoding and PDMS scoring"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App * sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t & s) {
      seed = s;
      seed_given = true;
    }, "RNG seed (default 42, or $LADY_SEED)");
  };

  auto * equiv = app.add_subcommand("equiv", "Run the oracle-equivalence suites and print a pass/fail table");
  add_seed(equiv);

  BenchArgs bench_args;
  auto * bench = app.add_subcommand("bench", "Per-frame latency and state size versus history length");
  bench->add_option("--frames", bench_args.frames, "Frame counts, e.g. 1,2,4,...,128")->capture_default_str();
  bench->add_option("--mode", bench_args.mode, "linear, softmax or both")->capture_default_str();
  bench->add_option("--out", bench_args.out, "CSV output path ('-' for stdout)")->capture_default_str();
  bench->add_option("--trials", bench_args.trials, "Timed trials per record")->capture_default_str();
  bench->add_option("--warmup", bench_args.warmup, "Untimed warm-up trials")->capture_default_str();
  add_seed(bench);

  DemoArgs demo_args;
  auto * demo = app.add_subcommand("demo", "Synthetic frames -> streaming fusion -> diffusion decode -> best trajectory");
  demo->add_option("--frames", demo_args.frames, "History length (shorter inputs are zero-padded)")->capture_default_str();
  demo->add_option("--out", demo_args.out, "Trajectory JSON output")->capture_default_str();
  demo->add_option("--frames-in", demo_args.frames_in, "JSON-lines frame file instead of synthetic frames");
  demo->add_option("--ego", demo_args.ego_in, "Ego status JSON {v, a, cmd}");
  demo->add_option("--anchors-in", demo_args.anchors_in, "Anchor JSON instead of clustering synthetic data");
  demo->add_option("--anchors", demo_args.anchors, "Anchor count when clustering")->capture_default_str();
  demo->add_option("--steps", demo_args.steps, "Denoising steps")->capture_default_str();
  demo->add_option("--scene-out", demo_args.scene_out, "Also write a synthetic scene for `score`");
  demo->add_option("--dataset-out", demo_args.dataset_out, "Also write the synthetic trajectory dataset");
  add_seed(demo);

  std::string traj_path, scene_path, report_path = "report.csv";
  auto * score = app.add_subcommand("score", "PDMS sub-scores of one trajectory in one scene");
  score->add_option("--traj", traj_path, "Trajectory JSON")->required();
  score->add_option("--scene", scene_path, "Scene JSON")->required();
  score->add_option("--out", report_path, "CSV report ('-' for stdout)")->capture_default_str();

  std::string data_path, anchors_out = "-";
  std::size_t k = 100;
  auto * cluster = app.add_subcommand("cluster", "k-means anchors from a JSON array of trajectories");
  cluster->add_option("--data", data_path, "Trajectory dataset JSON")->required();
  cluster->add_option("--k", k, "Anchor count")->capture_default_str();
  cluster->add_option("--out", anchors_out, "Anchor JSON output ('-' for stdout)")->capture_default_str();
  add_seed(cluster);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (!seed_given) seed = default_seed();
    if (*equiv) return run_equiv(seed);
    if (*bench) return run_bench(bench_args, seed);
    if (*demo) return run_demo(demo_args, seed);
    if (*score) return run_score(traj_path, scene_path, report_path);
    if (*cluster) return run_cluster(data_path, k, anchors_out, seed);
  } catch (const IoError & e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError & e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const ConfigError & e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError & e) {
    std::cerr << "dimension error: " << e.what() << '\n';
    return kDimension;
  } catch (const NumericError & e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ContractViolation & e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return kContract;
  } catch (const SceneError & e) {
    std::cerr << "scene error: " << e.what() << '\n';
    return kScene;
  } catch (const InsufficientDataError & e) {
    std::cerr << "insufficient data: " << e.what() << '\n';
    return kInsufficientData;
  } catch (const OrderingError & e) {
    std::cerr << "ordering error: " << e.what() << '\n';
    return kOrdering;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
