// Command-line pipeline: synthetic-scene generation, epipolar-band feature
// matching, the bounded-distortion map solve, and accuracy evaluation.

#include <CLI11.hpp>
#include <filesystem>
#include <future>
#include <iostream>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"
#include "ebd/irls.hpp"
#include "ebd/matching.hpp"
#include "ebd/program.hpp"
#include "ebd/synthetic.hpp"
#include "ebd/triangulation.hpp"

namespace fs = std::filesystem;
using namespace ebd;

namespace {

// Exit codes: 0 ok, 2 config, 3 input parse, 4 solver, 5 I/O.
constexpr int kExitConfig = 2;
constexpr int kExitParse = 3;
constexpr int kExitSolver = 4;
constexpr int kExitIo = 5;

struct SolveFlags {
  double mu = 0.6;
  double eta = 25.0;
  double p = 0.001;
  double eps_final = 1.0;
  double tol = 1e-8;
};

void run_one_solve(const fs::path& f_path, const fs::path& matches_path, double width,
                   double height, const fs::path& out_dir, const SolveFlags& flags) {
  FundamentalMatrix f = read_fundamental(f_path);
  MatchSet matches = read_matches(matches_path);

  GridConfig grid;
  grid.eta = flags.eta;
  EpipolarTriangulation tri = EpipolarTriangulation::build({width, height}, f, grid);

  IRLSConfig cfg;
  cfg.mu = flags.mu;
  cfg.p = flags.p;
  cfg.eps_final = flags.eps_final;
  cfg.solver_tol = flags.tol;
  SolveReport report = run(tri, f, matches, cfg);

  fs::create_directories(out_dir);
  write_report(out_dir / "report.txt", report);
  write_triangulation(out_dir / "tri.txt", tri);
  std::ostringstream map_text;
  map_text << "plmap " << report.map.targets.size() << "\n";
  for (const auto& v : report.map.targets)
    map_text << format_double(v.x()) << " " << format_double(v.y()) << "\n";
  write_file_atomic(out_dir / "map.txt", map_text.str());

  int kept = 0;
  for (bool b : report.inliers) kept += b ? 1 : 0;
  std::cout << "solved: " << report.matches.size() << " pairs, " << kept << " inliers, "
            << report.dropped << " dropped, " << report.trace.size() << " eps phases\n";
}

PLMap map_from_report_file(const fs::path& report_path) {
  SolveReport report = read_report(report_path);
  return report.map;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epipolar bounded-distortion stereo matching"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_flag_callback("--version", [] { std::cout << "ebd 1.0\n"; });

  // --- gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene and its files");
  std::string gen_spec_path;
  std::string gen_out = ".";
  bool gen_fronto = false;
  gen->add_option("spec", gen_spec_path, "scene spec file (omit for the built-in default)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--fronto", gen_fronto, "use the built-in fronto-parallel scene");
  gen->add_option("--seed", seed, "override the scene seed")->each([&](const std::string&) {
    seed_set = true;
  });

  // --- match --------------------------------------------------------------
  auto* match = app.add_subcommand("match", "epipolar-band descriptor matching");
  std::string match_a, match_b, match_f, match_out = "matches.txt";
  MatchParams match_params;
  bool match_reverse = false;
  match->add_option("features-a", match_a)->required();
  match->add_option("features-b", match_b)->required();
  match->add_option("fundamental", match_f)->required();
  match->add_option("--out", match_out, "output match file");
  match->add_option("--delta", match_params.delta, "Sampson-distance bound");
  match->add_option("--ratio", match_params.ratio, "second-best ratio factor");
  match->add_flag("--reverse", match_reverse, "match B into A instead of A into B");

  // --- solve --------------------------------------------------------------
  auto* solve_cmd = app.add_subcommand("solve", "solve the bounded-distortion map");
  std::string solve_f, solve_matches, solve_out = "out", solve_batch;
  double solve_w = 0, solve_h = 0;
  SolveFlags flags;
  int jobs = 1;
  solve_cmd->add_option("--f", solve_f, "fundamental matrix file");
  solve_cmd->add_option("--matches", solve_matches, "match file");
  solve_cmd->add_option("--width", solve_w, "image width (px)");
  solve_cmd->add_option("--height", solve_h, "image height (px)");
  solve_cmd->add_option("--out", solve_out, "output directory");
  solve_cmd->add_option("--batch", solve_batch,
                        "file of lines 'F matches width height outdir'; solves all");
  solve_cmd->add_option("--jobs", jobs, "parallel solves in batch mode");
  solve_cmd->add_option("--mu", flags.mu, "distortion bound in (0,1)");
  solve_cmd->add_option("--eta", flags.eta, "triangulation step (px)");
  solve_cmd->add_option("--p", flags.p, "robust exponent");
  solve_cmd->add_option("--eps-final", flags.eps_final, "final eps (px)");
  solve_cmd->add_option("--tol", flags.tol, "conic solver tolerance");

  // --- eval ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "accuracy against synthetic ground truth");
  std::string eval_report, eval_tri, eval_scene, eval_out = "eval.csv";
  std::string eval_thresholds = "0.25,0.5,0.75,1,1.5,2,3,5,10";
  eval_cmd->add_option("--report", eval_report, "solve report file")->required();
  eval_cmd->add_option("--tri", eval_tri, "triangulation file")->required();
  eval_cmd->add_option("--scene", eval_scene, "scene spec file")->required();
  eval_cmd->add_option("--out", eval_out, "output CSV");
  eval_cmd->add_option("--thresholds", eval_thresholds, "comma-separated pixel thresholds");

  // --- plot ---------------------------------------------------------------
  auto* plot_cmd = app.add_subcommand("plot", "cumulative-error curve as SVG");
  std::string plot_csv, plot_out = "eval.svg";
  plot_cmd->add_option("table", plot_csv, "eval CSV file")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      SceneSpec spec;
      if (!gen_spec_path.empty())
        spec = read_scene(gen_spec_path);
      else
        spec = gen_fronto ? fronto_parallel_scene() : default_scene();
      if (seed_set) spec.seed = seed;

      GroundTruth gt = generate(spec);
      fs::path dir(gen_out);
      fs::create_directories(dir);
      write_scene(dir / "scene.txt", spec);
      write_fundamental(dir / "F.txt", gt.f());
      auto [fa, fb] = gt.make_features();
      write_features(dir / "features_a.txt", fa);
      write_features(dir / "features_b.txt", fb);
      write_matches(dir / "matches.txt", gt.candidates());
      int inl = 0;
      for (bool b : gt.inlier_labels()) inl += b ? 1 : 0;
      std::cout << "generated " << gt.candidates().size() << " candidate pairs (" << inl
                << " inliers) into " << dir.string() << "\n";
    }

    if (match->parsed()) {
      FeatureSet fa = read_features(match_a);
      FeatureSet fb = read_features(match_b);
      FundamentalMatrix f = read_fundamental(match_f);
      MatchSet result = match_reverse
                            ? epipolar_match(fb, fa, f.transposed(), match_params)
                            : epipolar_match(fa, fb, f, match_params);
      write_matches(match_out, result);
      std::cout << "matched " << result.size() << " pairs\n";
    }

    if (solve_cmd->parsed()) {
      if (!solve_batch.empty()) {
        std::vector<std::string> lines = split_lines(read_file(solve_batch));
        std::vector<std::array<std::string, 5>> cases;
        for (const std::string& line : lines) {
          if (line.find_first_not_of(" \t") == std::string::npos) continue;
          std::istringstream ls(line);
          std::array<std::string, 5> c;
          if (!(ls >> c[0] >> c[1] >> c[2] >> c[3] >> c[4]))
            throw ParseError("batch line needs 'F matches width height outdir'");
          cases.push_back(c);
        }
        const int njobs = std::max(1, jobs);
        std::vector<std::future<void>> running;
        for (const auto& c : cases) {
          if (static_cast<int>(running.size()) >= njobs) {
            running.front().get();
            running.erase(running.begin());
          }
          running.push_back(std::async(std::launch::async, [c, flags] {
            run_one_solve(c[0], c[1], std::stod(c[2]), std::stod(c[3]), c[4], flags);
          }));
        }
        for (auto& fut : running) fut.get();
      } else {
        if (solve_f.empty() || solve_matches.empty() || solve_w <= 0 || solve_h <= 0)
          throw ConfigError("solve needs --f, --matches, --width and --height");
        run_one_solve(solve_f, solve_matches, solve_w, solve_h, solve_out, flags);
      }
    }

    if (eval_cmd->parsed()) {
      PLMap map = map_from_report_file(eval_report);
      EpipolarTriangulation tri = read_triangulation(eval_tri);
      SceneSpec spec = read_scene(eval_scene);
      GroundTruth gt = generate(spec);
      std::vector<double> thresholds;
      std::istringstream ts(eval_thresholds);
      std::string tok;
      while (std::getline(ts, tok, ',')) thresholds.push_back(std::stod(tok));
      EvalReport report = evaluate(map, tri, gt, thresholds);
      write_file_atomic(eval_out, report.to_csv());
      std::cout << "fraction within 1px: " << report.fraction_at_1px << " (" << report.covered
                << "/" << report.samples << " samples covered)\n";
    }

    if (plot_cmd->parsed()) {
      EvalReport report = EvalReport::from_csv(read_file(plot_csv));
      fs::path svg(plot_out);
      fs::path csv = svg;
      csv.replace_extension(".csv");
      emit_plots(report, svg, csv);
      std::cout << "wrote " << svg.string() << "\n";
    }

    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitParse;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
}
