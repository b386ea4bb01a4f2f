#include "dyl/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>

#include "dyl/metrics.hpp"
#include "dyl/pipeline.hpp"

namespace dyl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pulls "--config <path>" out before the real parse so config values become
// the option defaults and explicit flags still win.
std::string find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

std::vector<int> parse_dims(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

FeatureClip synthetic_clip(const std::vector<int>& d, std::uint64_t seed) {
  if (d.size() != 4) throw Error(ErrorKind::Parameter, "cli", "--synthetic-clip expects T,H,W,C");
  FeatureClip clip(d[0], d[1], d[2], d[3]);
  std::mt19937_64 rng(derive_seed(seed, "cli.clip"));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : clip.data) v = static_cast<float>(u(rng));  // representable in FTC1
  return clip;
}

int cmd_phantom(const PhantomSpec& spec, const fs::path& out) {
  auto [seq, masks] = generate_phantom(spec);
  save_sequence(seq, out);
  save_masks(masks, out);
  std::cout << "ed=" << seq.ed_index << " es=" << seq.es_index << "\n";
  return 0;
}

int cmd_flow(const fs::path& in, const PipelineConfig& cfg, const fs::path& out) {
  const FrameSequence seq = load_sequence(in);
  const auto flows = flow_sequence(seq, cfg.flow);
  fs::create_directories(out);
  for (std::size_t t = 0; t < flows.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "flow_%04zu.bin", t);
    write_file_atomic(out / name, encode_flow(flows[t]));
    std::printf("t=%zu mean_magnitude=%.6f\n", t, mean_flow_magnitude(flows[t]));
  }
  return 0;
}

int cmd_edg(const fs::path& in, const PipelineConfig& cfg, const fs::path& out) {
  const FrameSequence seq = load_sequence(in);
  const EdgResult r = run_edg_pipeline(seq, cfg);
  if (!r.motion_detected) std::cerr << "warning: no motion detected\n";
  write_edg_outputs(r, seq.height(), seq.width(), out);
  write_text_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  std::printf("frames=%d energy_frames=%zu k=%d M=%d sigma=%.6g\n", seq.length(), r.energies.size(),
              r.model.k(), r.model.m(), r.model.sigma);
  std::printf("final training residual: %.9g\n", r.final_residual());
  return 0;
}

struct CpdaDemoArgs {
  std::string clip_path;
  std::string synthetic;
  std::string weights_path;
  bool seed_weights = false;
  int ed = 0;
  int es = -1;
  std::string pedg_path;
  std::string out;
  double alpha = -1.0;
};

int cmd_cpda_demo(const CpdaDemoArgs& a, const PipelineConfig& cfg) {
  FeatureClip clip;
  if (!a.clip_path.empty())
    clip = decode_clip(read_file(a.clip_path));
  else if (!a.synthetic.empty())
    clip = synthetic_clip(parse_dims(a.synthetic), cfg.seed);
  else
    throw Error(ErrorKind::Parameter, "cli", "cpda-demo needs --clip or --synthetic-clip");

  Matrix pedg;
  if (!a.pedg_path.empty()) {
    const auto rows = read_numeric_csv(a.pedg_path);
    if (rows.empty()) throw Error(ErrorKind::Format, "cli", "P_EDG file has no rows");
    pedg.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size()) throw Error(ErrorKind::Format, "cli", "ragged P_EDG rows");
      for (std::size_t c = 0; c < rows[r].size(); ++c) pedg(r, c) = rows[r][c];
    }
  }

  CpdaWeights w;
  if (!a.weights_path.empty()) {
    w = cpda_weights_from_json(json::parse(read_text(a.weights_path)));
  } else if (a.seed_weights) {
    CpdaShape shape = cfg.cpda;
    shape.channels = clip.c;
    shape.pedg_dim = pedg.size() ? static_cast<int>(pedg.cols()) : cfg.k2;
    w = seed_weights(shape, cfg.seed);
  } else {
    throw Error(ErrorKind::Parameter, "cli", "cpda-demo needs --weights or --seed-weights");
  }
  if (a.alpha >= 0.0) w.alpha = a.alpha;
  if (!pedg.size()) {
    std::cerr << "note: no --pedg given, using a zero dynamic feature\n";
    pedg = Matrix::Zero(clip.t, w.pedg_dim());
  }
  if (pedg.rows() + 1 == clip.t) pedg = align_pedg(pedg, clip.t);

  const int es = a.es >= 0 ? a.es : std::max(1, clip.t / 2);
  const PhaseTrack phase = phase_track(clip.t, a.ed, es);
  const FeatureClip out = cpda_forward(clip, phase, pedg, w);
  write_file_atomic(a.out, encode_clip(out));

  const std::size_t plane = static_cast<std::size_t>(clip.h) * clip.w * clip.c;
  for (int t = 0; t < clip.t; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += std::abs(out.data[t * plane + i] - clip.data[t * plane + i]);
    std::printf("t=%d mean_abs_delta=%.9g\n", t, plane ? acc / plane : 0.0);
  }
  return 0;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report_path) {
  const MaskSequence pred = load_masks(pred_dir);
  const MaskSequence gt = load_masks(gt_dir);
  const MetricsReport r = evaluate(pred, gt);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  write_text_atomic(report_path, to_json(r).dump(2) + "\n");
  fs::path csv = report_path;
  csv.replace_extension(".csv");
  write_text_atomic(csv, to_csv(r));
  for (const auto& l : r.per_label) {
    std::printf("%-3s dice=%.4f hd95=", label_name(l.label), l.mean_dice);
    if (l.mean_hd95)
      std::printf("%.2f", *l.mean_hd95);
    else
      std::printf("missing");
    std::printf(" tcd=%.4f\n", l.tcd);
  }
  const auto hd = r.mean_hd95();
  if (hd)
    std::printf("dice=%.4f hd95=%.2f tcd=%.4f\n", r.mean_dice(), *hd, r.average_tcd);
  else
    std::printf("dice=%.4f hd95=missing tcd=%.4f\n", r.mean_dice(), r.average_tcd);
  return 0;
}

int cmd_seed_weights(const CpdaShape& shape, std::uint64_t seed, const fs::path& out) {
  const CpdaWeights w = seed_weights(shape, seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text_atomic(out, to_json(w).dump(2) + "\n");
  std::printf("channels=%d k2=%d d=%d heads=%d\n", w.channels(), w.pedg_dim(), w.token_dim(), w.attention.heads);
  return 0;
}

}  // namespace

std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cli", "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> row;
    std::getline(ss, tok, ',');  // index column
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  return rows;
}

int run_cli(const std::vector<std::string>& args) {
  PipelineConfig cfg;
  const std::string config_path = find_config_path(args);
  try {
    if (!config_path.empty()) cfg = config_from_json(json::parse(read_text(config_path)), cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"Echo dynamics pipeline: phantom, optical flow, RBF dynamics / EDG, CPDA and metrics", "dyl"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_flag;
  int threads = 0;
  app.add_option("--config", config_flag, "JSON file overriding the default pipeline configuration");
  app.add_option("--threads", threads, "Cap on OpenMP threads (0 = runtime default)");
  app.add_option("--seed", cfg.seed, "Master seed; stage streams are derived from it");

  // phantom
  PhantomSpec spec;
  int size = 0;
  std::string phantom_out;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic beating-heart sequence with masks");
  phantom->add_option("--t", spec.t_count, "Frames per cardiac cycle");
  phantom->add_option("--size", size, "Square image size (overrides --height/--width when > 0)");
  phantom->add_option("--height", spec.height, "Image height in pixels");
  phantom->add_option("--width", spec.width, "Image width in pixels");
  phantom->add_option("--cycles", spec.cycles, "Number of cardiac cycles");
  phantom->add_option("--base-radius", spec.base_radius, "End-diastolic LV radius in pixels");
  phantom->add_option("--contraction", spec.contraction_fraction, "Fractional radius loss at end-systole");
  phantom->add_option("--speckle", spec.speckle_sigma, "Gaussian speckle standard deviation");
  phantom->add_option("-o,--out", phantom_out, "Output directory")->required();

  // flow / edg share the pipeline flags
  std::string in_dir, out_dir;
  std::string fit = cfg.rbf.fit == FitMethod::Lms ? "lms" : "ls";
  auto add_flow_flags = [&](CLI::App* sub) {
    sub->add_option("--alpha", cfg.flow.alpha, "Horn-Schunck smoothness weight (8-bit intensity units)");
    sub->add_option("--iterations", cfg.flow.iterations, "Jacobi iterations");
    sub->add_option("--presmooth", cfg.flow.presmooth_sigma, "Gaussian presmoothing sigma in pixels");
  };
  auto* flow = app.add_subcommand("flow", "Dump Horn-Schunck flow for every adjacent frame pair");
  flow->add_option("-i,--in", in_dir, "Sequence directory or .eds file")->required();
  flow->add_option("-o,--out", out_dir, "Output directory")->required();
  add_flow_flags(flow);

  auto* edg = app.add_subcommand("edg", "Run flow, descriptors, RBF dynamics and write EDG / P_EDG");
  edg->add_option("-i,--in", in_dir, "Sequence directory or .eds file")->required();
  edg->add_option("-o,--out", out_dir, "Output directory")->required();
  add_flow_flags(edg);
  edg->add_option("--r-bins", cfg.grid.r_bins, "Rings in the sector grid");
  edg->add_option("--theta-bins", cfg.grid.theta_bins, "Angular bins in the sector grid");
  edg->add_option("--r-max", cfg.grid.r_max, "Outer grid radius in pixels (0 = min(H,W)/2)");
  edg->add_option("--k", cfg.pca_k, "PCA dimension of z_t");
  edg->add_option("--centers", cfg.rbf.m_centers, "RBF centers M");
  edg->add_option("--sigma", cfg.rbf.sigma, "RBF width (0 = median pairwise center distance)");
  edg->add_option("--lr", cfg.rbf.learn_rate, "LMS learning rate");
  edg->add_option("--epochs", cfg.rbf.epochs, "Passes over the trajectory");
  edg->add_option("--ridge", cfg.rbf.ridge, "Ridge term for --fit ls");
  edg->add_option("--fit", fit, "Weight fit: lms or ls")->check(CLI::IsMember({"lms", "ls"}));
  edg->add_option("--k2", cfg.k2, "P_EDG dimension");

  CpdaDemoArgs demo;
  auto* cpda = app.add_subcommand("cpda-demo", "Run the CPDA forward pass on a feature clip");
  cpda->add_option("--clip", demo.clip_path, "Input .ftc clip");
  cpda->add_option("--synthetic-clip", demo.synthetic, "Generate a seeded clip with shape T,H,W,C instead");
  cpda->add_option("--weights", demo.weights_path, "Weight JSON");
  cpda->add_flag("--seed-weights", demo.seed_weights, "Use seeded random weights");
  cpda->add_option("--ed", demo.ed, "End-diastole frame");
  cpda->add_option("--es", demo.es, "End-systole frame (-1 = T/2)");
  cpda->add_option("--pedg", demo.pedg_path, "pedg.csv from the edg subcommand");
  cpda->add_option("--alpha", demo.alpha, "Override modulation strength (-1 = from weights)");
  cpda->add_option("--phase-dim", cfg.cpda.phase_dim, "Phase MLP width for seeded weights");
  cpda->add_option("--edg-dim", cfg.cpda.edg_dim, "P_EDG MLP width for seeded weights");
  cpda->add_option("--heads", cfg.cpda.heads, "Attention heads for seeded weights");
  cpda->add_option("-o,--out", demo.out, "Output .ftc clip")->required();

  std::string pred_dir, gt_dir, report;
  auto* eval = app.add_subcommand("eval", "Dice / HD95 / TCD of predicted against reference masks");
  eval->add_option("--pred", pred_dir, "Directory of predicted mask_%04d.pgm")->required();
  eval->add_option("--gt", gt_dir, "Directory of reference mask_%04d.pgm")->required();
  eval->add_option("-o,--out", report, "Report JSON path (CSV written alongside)")->required();

  std::string weights_out;
  auto* sw = app.add_subcommand("seed-weights", "Write a reproducible random CPDA weight set");
  sw->add_option("--channels", cfg.cpda.channels, "Feature channels C");
  sw->add_option("--k2", cfg.k2, "P_EDG dimension");
  sw->add_option("--phase-dim", cfg.cpda.phase_dim, "Phase MLP width");
  sw->add_option("--edg-dim", cfg.cpda.edg_dim, "P_EDG MLP width");
  sw->add_option("--heads", cfg.cpda.heads, "Attention heads");
  sw->add_option("--alpha", cfg.cpda.alpha, "Modulation strength");
  sw->add_option("-o,--out", weights_out, "Output JSON")->required();

  std::vector<std::string> rest(args.rbegin(), args.rend() - 1);  // CLI11 wants reversed, without argv[0]
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (threads > 0) omp_set_num_threads(threads);
  cfg.rbf.fit = fit == "ls" ? FitMethod::LeastSquares : FitMethod::Lms;
  try {
    if (*phantom) {
      if (size > 0) spec.height = spec.width = size;
      spec.seed = cfg.seed;
      return cmd_phantom(spec, phantom_out);
    }
    if (*flow) return cmd_flow(in_dir, cfg, out_dir);
    if (*edg) return cmd_edg(in_dir, cfg, out_dir);
    if (*cpda) return cmd_cpda_demo(demo, cfg);
    if (*eval) return cmd_eval(pred_dir, gt_dir, report);
    if (*sw) {
      CpdaShape shape = cfg.cpda;
      shape.pedg_dim = cfg.k2;
      return cmd_seed_weights(shape, cfg.seed, weights_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dyl
