#include "ebd/irls.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

void IRLSConfig::validate() const {
  if (!(p > 0.0) || !(p < 2.0)) throw ConfigError("IRLS exponent p must lie in (0,2)");
  if (!(eps_final > 0.0)) throw ConfigError("eps_final must be positive");
  if (eps_init && !(eps_final <= *eps_init))
    throw ConfigError("eps_final must not exceed eps_init");
  if (!(eps_factor > 0.0) || !(eps_factor < 1.0))
    throw ConfigError("eps factor must lie in (0,1)");
  if (!(mu > 0.0) || !(mu < 1.0)) throw ConfigError("distortion bound must lie in (0,1)");
  if (inner_max_iter < 1) throw ConfigError("inner_max_iter must be positive");
}

double g_pe(double r, double p, double eps) {
  if (r > eps) return std::pow(r, p);
  return 0.5 * p * std::pow(eps, p - 2.0) * r * r + (1.0 - 0.5 * p) * std::pow(eps, p);
}

double majorizer_weight(double s, double p, double eps) {
  return std::pow(std::max(s, eps), p - 2.0);
}

std::optional<Eigen::Vector2d> evaluate_map(const PLMap& map, const EpipolarTriangulation& t,
                                            const Eigen::Vector2d& p) {
  std::optional<int> face = t.locate(p);
  if (!face) return std::nullopt;
  Eigen::Vector3d bc = t.barycentric(*face, p);
  const auto& fc = t.face(*face);
  return Eigen::Vector2d(bc(0) * map.targets[fc.v[0]] + bc(1) * map.targets[fc.v[1]] +
                         bc(2) * map.targets[fc.v[2]]);
}

SolveReport run(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                const MatchSet& matches, const IRLSConfig& cfg) {
  cfg.validate();
  if (matches.size() == 0) throw ParseError("match set is empty");
  if (matches.p.size() != matches.q.size()) throw ParseError("match set lists must align");

  SolveReport report;
  report.matches = matches;
  report.located.assign(matches.size(), false);
  report.inlier_threshold = cfg.inlier_threshold.value_or(2.0 * cfg.eps_final);

  // Ingest: barycentric encoding of each p_m; points outside the
  // triangulation are dropped with a count.
  std::vector<MatchTerm> terms;
  std::vector<int> term_pair;  // term index -> match index
  for (std::size_t m = 0; m < matches.size(); ++m) {
    std::optional<int> face = t.locate(matches.p[m]);
    if (!face) continue;
    MatchTerm term;
    term.face = *face;
    term.bary = t.barycentric(*face, matches.p[m]);
    term.q = matches.q[m];
    terms.push_back(term);
    term_pair.push_back(static_cast<int>(m));
    report.located[m] = true;
  }
  report.dropped = static_cast<int>(matches.size() - terms.size());
  if (terms.empty()) throw ParseError("no matches fall inside the triangulation");

  const DistortionBound bound(cfg.mu);
  const double eps0 = cfg.eps_init.value_or(t.rect().diameter());
  if (!(cfg.eps_final <= eps0)) throw ConfigError("eps_final exceeds the initial eps");

  // Geometric eps schedule; phases run while eps is above eps_final.
  std::vector<double> schedule;
  for (double e = eps0; e > cfg.eps_final; e *= cfg.eps_factor) schedule.push_back(e);
  if (schedule.empty()) schedule.push_back(eps0);

  // Initial surrogate residuals h'_m = p_m - q_m.
  std::vector<double> s(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i)
    s[i] = (matches.p[term_pair[i]] - terms[i].q).norm();

  PLMap map;
  for (double eps : schedule) {
    PhaseTrace phase;
    phase.eps = eps;
    double prev_energy = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < cfg.inner_max_iter; ++it) {
      for (std::size_t i = 0; i < terms.size(); ++i)
        terms[i].weight = majorizer_weight(s[i], cfg.p, eps);
      EBDProgram prog = build_iteration_program(t, f, bound, terms);
      SolverResult sol = solve(prog.problem, cfg.solver_tol, cfg.solver_max_iter);
      if (sol.status != SolveStatus::optimal) {
        auto dump_path = std::filesystem::temp_directory_path() / "ebd_failed_program.txt";
        try {
          write_file_atomic(dump_path, prog.problem.dump());
        } catch (const IoError&) {
          dump_path.clear();
        }
        throw SolverError(std::string("iteration program not solved to optimality (") +
                          to_string(sol.status) + "); program dump: " + dump_path.string());
      }
      map = prog.extract(sol.x);

      double energy = 0.0;
      for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& fc = t.face(terms[i].face);
        Eigen::Vector2d h = terms[i].bary(0) * map.targets[fc.v[0]] +
                            terms[i].bary(1) * map.targets[fc.v[1]] +
                            terms[i].bary(2) * map.targets[fc.v[2]] - terms[i].q;
        s[i] = h.norm();
        energy += g_pe(s[i], cfg.p, eps);
      }
      phase.energies.push_back(energy);
      if (it > 0 && std::abs(prev_energy - energy) <= cfg.inner_tol * std::max(1.0, prev_energy))
        break;
      prev_energy = energy;
    }
    report.trace.push_back(std::move(phase));
  }

  report.map = map;
  report.residuals.assign(matches.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < terms.size(); ++i) report.residuals[term_pair[i]] = s[i];
  report.inliers = classify_inliers(report, report.inlier_threshold);

  std::set<int> constrained;
  for (const MatchTerm& term : terms)
    for (int v : t.face(term.face).v) constrained.insert(t.vertex_param(v).ray_id);
  for (int ray = 0; ray < t.ray_count(); ++ray)
    if (!constrained.count(ray)) report.underconstrained_rays.push_back(ray);

  return report;
}

std::vector<bool> classify_inliers(const SolveReport& report, double threshold) {
  std::vector<bool> flags(report.residuals.size(), false);
  for (std::size_t m = 0; m < report.residuals.size(); ++m)
    flags[m] = report.located[m] && report.residuals[m] <= threshold;
  return flags;
}

std::string SolveReport::serialize() const {
  std::ostringstream ss;
  ss << "ebd-solve-report 1\n";
  ss << "inlier-threshold " << format_double(inlier_threshold) << "\n";
  ss << "vertices " << map.targets.size() << "\n";
  for (const auto& v : map.targets)
    ss << format_double(v.x()) << " " << format_double(v.y()) << "\n";
  ss << "pairs " << matches.size() << " dropped " << dropped << "\n";
  for (std::size_t m = 0; m < matches.size(); ++m) {
    ss << format_double(matches.p[m].x()) << " " << format_double(matches.p[m].y()) << " "
       << format_double(matches.q[m].x()) << " " << format_double(matches.q[m].y()) << " "
       << format_double(residuals[m]) << " " << (inliers[m] ? 1 : 0) << " "
       << (located[m] ? 1 : 0) << "\n";
  }
  ss << "phases " << trace.size() << "\n";
  for (const PhaseTrace& ph : trace) {
    ss << "phase " << format_double(ph.eps);
    for (double e : ph.energies) ss << " " << format_double(e);
    ss << "\n";
  }
  ss << "underconstrained-rays " << underconstrained_rays.size();
  for (int r : underconstrained_rays) ss << " " << r;
  ss << "\n";
  return ss.str();
}

SolveReport SolveReport::deserialize(const std::string& text) {
  std::vector<std::string> lines = split_lines(text);
  std::size_t pos = 0;
  auto next = [&]() -> std::string {
    while (pos < lines.size() && lines[pos].empty()) ++pos;
    if (pos >= lines.size()) throw ParseError("truncated solve report");
    return lines[pos++];
  };

  if (next() != "ebd-solve-report 1") throw ParseError("not a solve report");
  SolveReport r;
  std::string tag;
  {
    std::istringstream ls(next());
    ls >> tag >> r.inlier_threshold;
    if (tag != "inlier-threshold") throw ParseError("expected inlier-threshold");
  }
  long nv = 0;
  {
    std::istringstream ls(next());
    ls >> tag >> nv;
    if (tag != "vertices") throw ParseError("expected vertices");
  }
  for (long i = 0; i < nv; ++i) {
    std::vector<double> v = parse_doubles(next(), "report vertex");
    if (v.size() != 2) throw ParseError("bad report vertex line");
    r.map.targets.emplace_back(v[0], v[1]);
  }
  long np = 0;
  {
    std::istringstream ls(next());
    std::string dtag;
    ls >> tag >> np >> dtag >> r.dropped;
    if (tag != "pairs" || dtag != "dropped") throw ParseError("expected pairs header");
  }
  for (long i = 0; i < np; ++i) {
    std::istringstream ls(next());
    double px, py, qx, qy, res;
    int inl, loc;
    if (!(ls >> px >> py >> qx >> qy >> res >> inl >> loc)) throw ParseError("bad pair line");
    r.matches.p.emplace_back(px, py);
    r.matches.q.emplace_back(qx, qy);
    r.residuals.push_back(res);
    r.inliers.push_back(inl != 0);
    r.located.push_back(loc != 0);
  }
  long nph = 0;
  {
    std::istringstream ls(next());
    ls >> tag >> nph;
    if (tag != "phases") throw ParseError("expected phases");
  }
  for (long i = 0; i < nph; ++i) {
    std::istringstream ls(next());
    PhaseTrace ph;
    ls >> tag >> ph.eps;
    if (tag != "phase") throw ParseError("expected phase line");
    double e;
    while (ls >> e) ph.energies.push_back(e);
    r.trace.push_back(std::move(ph));
  }
  {
    std::istringstream ls(next());
    long k = 0;
    ls >> tag >> k;
    if (tag != "underconstrained-rays") throw ParseError("expected underconstrained-rays");
    int ray;
    while (ls >> ray) r.underconstrained_rays.push_back(ray);
  }
  return r;
}

void write_report(const std::filesystem::path& path, const SolveReport& report) {
  write_file_atomic(path, report.serialize());
}

SolveReport read_report(const std::filesystem::path& path) {
  return SolveReport::deserialize(read_file(path));
}

}  // namespace ebd
