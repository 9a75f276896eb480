#include "study.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ccdfse {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

Frac frac_field(const json& v) {
  if (v.is_number_integer()) return Frac(v.get<std::int64_t>(), 1);
  if (v.is_string()) return parse_frac(v.get<std::string>());
  throw ConfigError("rational fields take integers or \"p/q\" strings");
}

Frac3 frac3_field(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) throw ConfigError(where + " must be a 3-array");
  return Frac3{frac_field(v[0]), frac_field(v[1]), frac_field(v[2])};
}

}  // namespace

StudyConfig parse_study_config(const json& j) {
  StudyConfig c;
  reject_unknown(j,
                 {"schema_version", "name", "system", "terms", "quadruple", "k_i", "k_j", "k_a",
                  "meshes", "fit_meshes", "validation_meshes", "scheme", "budget_gib",
                  "eri_cache_gib", "threads"},
                 "study config");
  if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
    throw ConfigError("unsupported schema_version");
  if (j.contains("name")) c.name = j["name"].get<std::string>();

  if (j.contains("system")) {
    const json& s = j["system"];
    reject_unknown(s, {"cell", "potential", "n_pw", "n_occ", "n_vir", "residual_tol", "force_dense"},
                   "system");
    if (s.contains("cell")) {
      auto v = s["cell"].get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("system.cell must be [ax, ay, az]");
      c.model.cell = UnitCell::orthorhombic(v[0], v[1], v[2]);
    }
    if (s.contains("potential")) {
      const json& p = s["potential"];
      reject_unknown(p, {"center", "sigma", "strength"}, "system.potential");
      if (p.contains("center")) {
        auto v = p["center"].get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("potential.center must be a 3-array");
        c.model.potential.center = {v[0], v[1], v[2]};
      }
      if (p.contains("sigma")) {
        auto v = p["sigma"].get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("potential.sigma must be a 3-array");
        for (int d = 0; d < 3; ++d) {
          if (v[static_cast<size_t>(d)] <= 0) throw ConfigError("potential.sigma must be positive");
          c.model.potential.sigma2[d] = v[static_cast<size_t>(d)] * v[static_cast<size_t>(d)];
        }
      }
      if (p.contains("strength")) c.model.potential.strength = p["strength"].get<double>();
    }
    if (s.contains("n_pw")) c.model.n_pw = s["n_pw"].get<int>();
    if (s.contains("n_occ")) c.model.n_occ = s["n_occ"].get<int>();
    if (s.contains("n_vir")) c.model.n_vir = s["n_vir"].get<int>();
    if (s.contains("residual_tol")) c.model.residual_tol = s["residual_tol"].get<double>();
    if (s.contains("force_dense")) c.model.force_dense = s["force_dense"].get<bool>();
  }

  if (j.contains("terms")) c.terms = j["terms"].get<std::vector<std::string>>();
  for (const std::string& t : c.terms) {
    if (term_from_name(t)) continue;
    if (t == "mp2" || t == "mp3") continue;
    if (t.rfind("ccd(", 0) == 0 && t.back() == ')') continue;
    throw ConfigError("unknown term selector '" + t + "'");
  }

  if (j.contains("quadruple")) {
    auto v = j["quadruple"].get<std::vector<int>>();
    if (v.size() != 4) throw ConfigError("quadruple must be [i, j, a, b] (1-based band labels)");
    // Paper-style labels: holes count from 1, particles continue after n_occ.
    c.quadruple = Quadruple{v[0] - 1, v[1] - 1, v[2] - c.model.n_occ - 1, v[3] - c.model.n_occ - 1};
    if (c.quadruple.i < 0 || c.quadruple.i >= c.model.n_occ || c.quadruple.j < 0 ||
        c.quadruple.j >= c.model.n_occ || c.quadruple.a < 0 || c.quadruple.a >= c.model.n_vir ||
        c.quadruple.b < 0 || c.quadruple.b >= c.model.n_vir)
      throw ConfigError("quadruple labels out of range");
  }
  if (j.contains("k_i")) c.ki = frac3_field(j["k_i"], "k_i");
  if (j.contains("k_j")) c.kj = frac3_field(j["k_j"], "k_j");
  if (j.contains("k_a")) c.ka = frac3_field(j["k_a"], "k_a");

  if (j.contains("meshes")) c.meshes = j["meshes"].get<std::vector<int>>();
  if (j.contains("fit_meshes")) c.fit_meshes = j["fit_meshes"].get<std::vector<int>>();
  if (j.contains("validation_meshes"))
    c.validation_meshes = j["validation_meshes"].get<std::vector<int>>();
  if (j.contains("scheme")) {
    std::string s = j["scheme"].get<std::string>();
    if (s == "gamma_centered")
      c.scheme = MeshScheme::gamma_centered;
    else if (s == "mp_offset")
      c.scheme = MeshScheme::mp_offset;
    else
      throw ConfigError("scheme must be gamma_centered or mp_offset");
  }
  if (j.contains("budget_gib")) c.budget_gib = j["budget_gib"].get<double>();
  if (j.contains("eri_cache_gib")) c.eri_cache_gib = j["eri_cache_gib"].get<double>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();

  if (c.meshes.empty()) throw ConfigError("meshes must be nonempty");
  if (!std::is_sorted(c.meshes.begin(), c.meshes.end()))
    throw ConfigError("meshes must be ascending");
  for (int m : c.fit_meshes)
    if (!std::count(c.meshes.begin(), c.meshes.end(), m))
      throw ConfigError("fit_meshes must be a subset of meshes");
  if (!c.fit_meshes.empty() && c.fit_meshes.size() != 3)
    throw ConfigError("fit_meshes takes exactly 3 sizes");
  for (int m : c.validation_meshes) {
    if (!std::count(c.meshes.begin(), c.meshes.end(), m))
      throw ConfigError("validation_meshes must be a subset of meshes");
    if (std::count(c.fit_meshes.begin(), c.fit_meshes.end(), m))
      throw ConfigError("validation_meshes must be disjoint from fit_meshes");
  }
  return c;
}

std::vector<StudyConfig> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  std::vector<StudyConfig> out;
  if (j.is_array())
    for (const auto& item : j) out.push_back(parse_study_config(item));
  else
    out.push_back(parse_study_config(j));
  return out;
}

json config_to_json(const StudyConfig& c) {
  json j;
  j["schema_version"] = 1;
  j["name"] = c.name;
  j["system"] = {
      {"cell",
       {c.model.cell.lattice_vectors[0][0], c.model.cell.lattice_vectors[1][1],
        c.model.cell.lattice_vectors[2][2]}},
      {"potential",
       {{"center", {c.model.potential.center[0], c.model.potential.center[1],
                    c.model.potential.center[2]}},
        {"sigma",
         {std::sqrt(c.model.potential.sigma2[0]), std::sqrt(c.model.potential.sigma2[1]),
          std::sqrt(c.model.potential.sigma2[2])}},
        {"strength", c.model.potential.strength}}},
      {"n_pw", c.model.n_pw},
      {"n_occ", c.model.n_occ},
      {"n_vir", c.model.n_vir}};
  j["terms"] = c.terms;
  j["quadruple"] = {c.quadruple.i + 1, c.quadruple.j + 1, c.model.n_occ + c.quadruple.a + 1,
                    c.model.n_occ + c.quadruple.b + 1};
  auto f3 = [](const Frac3& f) { return json{to_string(f[0]), to_string(f[1]), to_string(f[2])}; };
  j["k_i"] = f3(c.ki);
  j["k_j"] = f3(c.kj);
  j["k_a"] = f3(c.ka);
  j["meshes"] = c.meshes;
  j["fit_meshes"] = c.fit_meshes;
  j["validation_meshes"] = c.validation_meshes;
  j["scheme"] = c.scheme == MeshScheme::gamma_centered ? "gamma_centered" : "mp_offset";
  j["budget_gib"] = c.budget_gib;
  j["eri_cache_gib"] = c.eri_cache_gib;
  return j;
}

std::string config_hash(const StudyConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

const char* verdict_name(FitVerdict v) {
  switch (v) {
    case FitVerdict::matches_power_law:
      return "matches_power_law";
    case FitVerdict::faster_than:
      return "faster_than";
    case FitVerdict::unreliable:
      return "unreliable";
    case FitVerdict::no_power_law:
      return "no_power_law";
  }
  return "?";
}

std::vector<double> error_series(const std::vector<SweepRecord>& records,
                                 const std::vector<int>& meshes) {
  // records assumed ordered like meshes for one term
  std::vector<double> e(records.size());
  const cplx ref = records.back().value;
  for (size_t i = 0; i < records.size(); ++i) e[i] = std::abs(records[i].value - ref);
  (void)meshes;
  return e;
}

FitVerdict validate_fit(const RateFit& fit, const std::vector<std::pair<double, double>>& points,
                        std::vector<double>* discrepancies) {
  if (discrepancies) discrepancies->clear();
  if (points.empty() || fit.no_power_law) return FitVerdict::no_power_law;
  // Judge at the two largest abscissas.
  std::vector<std::pair<double, double>> pts = points;
  std::sort(pts.begin(), pts.end());
  bool all_fast = true, all_match = true;
  size_t first_judged = pts.size() >= 2 ? pts.size() - 2 : 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    double env = std::abs(fit.c1) * std::pow(pts[i].first, -fit.s);
    double dev = std::abs(pts[i].second - fit.c0);
    if (discrepancies) discrepancies->push_back(std::abs(dev - env));
    if (i < first_judged) continue;
    if (env <= 0) {
      all_fast = all_match = false;
      continue;
    }
    if (!(dev <= env / 5.0)) all_fast = false;
    if (!(dev >= env / 2.0 && dev <= 2.0 * env)) all_match = false;
  }
  if (all_fast) return FitVerdict::faster_than;
  if (all_match) return FitVerdict::matches_power_law;
  return FitVerdict::unreliable;
}

namespace {

struct TermCost {
  std::string term;
  int m;
  double cost;
};

double cost_of(const std::string& term, int m) {
  double nk = double(m) * m * m;
  auto id = term_from_name(term);
  if (!id) return nk * nk * nk;  // full pipelines
  if (term_is_energy(*id)) return nk * nk * nk;
  if (term_is_quadratic(*id)) return nk * nk;
  return nk;
}

// One sweep point. Selector strings run the full-tensor pipelines.
cplx evaluate_point(const StudyConfig& cfg, const AmpContext& ctx, const std::string& term,
                    const MonkhorstPackMesh& mesh) {
  ExactAmplitude mp2{ExactAmplitude::Tag::mp2, &ctx};
  if (auto id = term_from_name(term)) {
    if (*id == TermId::energy_exchange && static_cast<double>(mesh.n_k) * mesh.n_k * mesh.n_k > 3e7)
      throw BudgetError("energy_exchange at N_k=" + std::to_string(mesh.n_k) +
                        ": no accelerated path for this sweep size");
    return term_evaluate(ctx, *id, mp2, cfg.quadruple, cfg.ki, cfg.kj, cfg.ka, mesh);
  }
  if (term == "mp2") {
    AmplitudeTensor T = sample_on_mesh(ctx, mp2, mesh);
    return energy(ctx, T);
  }
  if (term == "mp3") {
    // MP3 amplitude: constant plus linear terms of the map applied to MP2.
    CcdTables tables = build_ccd_tables(ctx, mesh);
    AmplitudeTensor T1 = sample_on_mesh(ctx, mp2, mesh);
    AmplitudeTensor T = ccd_map(ctx, tables, T1, MapParts::linear_only);
    return energy(ctx, T);
  }
  if (term.rfind("ccd(", 0) == 0) {
    int n = std::stoi(term.substr(4));
    CcdSolveResult r = ccd_solve(ctx, mesh, n);
    return energy(ctx, r.amplitude);
  }
  throw ConfigError("unknown term selector '" + term + "'");
}

std::string journal_path(const std::string& out_dir) { return out_dir + "/journal.csv"; }

}  // namespace

std::vector<std::string> dry_run_plan(const StudyConfig& cfg) {
  std::vector<TermCost> plan;
  for (const auto& term : cfg.terms)
    for (int m : cfg.meshes) plan.push_back({term, m, cost_of(term, m)});
  std::stable_sort(plan.begin(), plan.end(),
                   [](const TermCost& a, const TermCost& b) { return a.cost > b.cost; });
  std::vector<std::string> lines;
  for (const auto& p : plan) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s m=%-3d N_k=%-6d est_cost=%.3g", p.term.c_str(), p.m,
                  p.m * p.m * p.m, p.cost);
    lines.push_back(buf);
  }
  return lines;
}

std::vector<SweepRecord> run_sweep(const StudyConfig& cfg, const std::string& out_dir,
                                   bool resume) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (cfg.threads > 0) set_num_threads(cfg.threads);

  // Resume state.
  std::map<std::pair<std::string, int>, cplx> done;
  if (resume && fs::exists(journal_path(out_dir))) {
    std::ifstream in(journal_path(out_dir));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::stringstream ss(line);
      std::string term, ms, re, im;
      if (!std::getline(ss, term, ',') || !std::getline(ss, ms, ',') ||
          !std::getline(ss, re, ',') || !std::getline(ss, im, ','))
        continue;
      done[{term, std::stoi(ms)}] = cplx(std::stod(re), std::stod(im));
    }
  } else if (fs::exists(journal_path(out_dir))) {
    fs::remove(journal_path(out_dir));
  }

  ModelSystem system(cfg.model);
  EriEngine eri(system, static_cast<size_t>(cfg.eri_cache_gib * double(1ull << 30)));
  AmpContext ctx{&system, &eri, static_cast<size_t>(cfg.budget_gib * double(1ull << 30))};

  std::vector<TermCost> plan;
  for (const auto& term : cfg.terms)
    for (int m : cfg.meshes) plan.push_back({term, m, cost_of(term, m)});
  std::stable_sort(plan.begin(), plan.end(),
                   [](const TermCost& a, const TermCost& b) { return a.cost > b.cost; });

  std::ofstream journal(journal_path(out_dir), std::ios::app);
  std::map<std::pair<std::string, int>, SweepRecord> results;
  // Meshes are shared across terms (and the band cache across meshes).
  std::map<int, MonkhorstPackMesh> meshes;
  for (int m : cfg.meshes) meshes.emplace(m, build_mp_mesh(cfg.model.cell, m, cfg.scheme));

  for (const auto& p : plan) {
    SweepRecord rec;
    rec.term = p.term;
    rec.m = p.m;
    rec.n_k = p.m * p.m * p.m;
    auto key = std::make_pair(p.term, p.m);
    if (auto it = done.find(key); it != done.end()) {
      rec.value = it->second;
      rec.seconds = 0;
    } else {
      auto t0 = std::chrono::steady_clock::now();
      rec.value = evaluate_point(cfg, ctx, p.term, meshes.at(p.m));
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g\n", p.term.c_str(), p.m,
                    rec.value.real(), rec.value.imag());
      journal << buf;
      journal.flush();
    }
    results[key] = rec;
  }

  // Canonical order: configured term order, then mesh ascending.
  std::vector<SweepRecord> out;
  for (const auto& term : cfg.terms)
    for (int m : cfg.meshes) out.push_back(results.at({term, m}));
  return out;
}

std::vector<TermReport> analyze(const StudyConfig& cfg, const std::vector<SweepRecord>& records) {
  std::vector<TermReport> reports;
  size_t per_term = cfg.meshes.size();
  for (size_t t = 0; t < cfg.terms.size(); ++t) {
    TermReport rep;
    rep.term = cfg.terms[t];
    std::vector<SweepRecord> recs(records.begin() + static_cast<long>(t * per_term),
                                  records.begin() + static_cast<long>((t + 1) * per_term));
    std::vector<double> errs = error_series(recs, cfg.meshes);
    auto nk_of = [&](int m) { return double(m) * m * m; };

    // Free three-point fit on the error series.
    if (cfg.fit_meshes.size() == 3) {
      std::array<double, 3> xs{}, ys{};
      for (int i = 0; i < 3; ++i) {
        auto it = std::find(cfg.meshes.begin(), cfg.meshes.end(), cfg.fit_meshes[static_cast<size_t>(i)]);
        size_t idx = static_cast<size_t>(it - cfg.meshes.begin());
        xs[static_cast<size_t>(i)] = nk_of(cfg.meshes[idx]);
        ys[static_cast<size_t>(i)] = errs[idx];
      }
      rep.free_fit = fit_power_law(xs, ys);

      std::vector<std::pair<double, double>> val_points;
      std::vector<double> env_x, env_y;
      for (int i = 0; i < 3; ++i) {
        env_x.push_back(xs[static_cast<size_t>(i)]);
        env_y.push_back(ys[static_cast<size_t>(i)]);
      }
      for (int m : cfg.validation_meshes) {
        if (m == cfg.meshes.back()) continue;  // degenerate against the reference
        auto it = std::find(cfg.meshes.begin(), cfg.meshes.end(), m);
        size_t idx = static_cast<size_t>(it - cfg.meshes.begin());
        val_points.emplace_back(nk_of(m), errs[idx]);
      }
      rep.free_verdict = validate_fit(rep.free_fit, val_points, &rep.free_discrepancies);

      for (double s : {1.0, 1.0 / 3.0}) {
        CandidateReport cand;
        cand.s = s;
        cand.fit = fit_envelope(env_x, env_y, s);
        cand.verdict = validate_fit(cand.fit, val_points, &cand.discrepancies);
        rep.candidates.push_back(std::move(cand));
      }
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

void emit_report(const StudyConfig& cfg, const std::vector<SweepRecord>& records,
                 const std::vector<TermReport>& reports, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::string hash = config_hash(cfg);

  // results.csv
  {
    std::ofstream csv(out_dir + "/results.csv");
    if (!csv) throw Error("cannot write " + out_dir + "/results.csv");
    csv << "term,n_k,re,im,err_vs_finest,config_hash,version\r\n";
    size_t per_term = cfg.meshes.size();
    for (size_t t = 0; t < cfg.terms.size(); ++t) {
      std::vector<SweepRecord> recs(records.begin() + static_cast<long>(t * per_term),
                                    records.begin() + static_cast<long>((t + 1) * per_term));
      std::vector<double> errs = error_series(recs, cfg.meshes);
      for (size_t i = 0; i < recs.size(); ++i) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g,%s,%s\r\n",
                      recs[i].term.c_str(), recs[i].n_k, recs[i].value.real(),
                      recs[i].value.imag(), errs[i], hash.c_str(), kArtifactVersion);
        csv << buf;
      }
    }
  }

  // per-term plot data: N_k vs error-vs-finest
  {
    size_t per_term = cfg.meshes.size();
    for (size_t t = 0; t < cfg.terms.size(); ++t) {
      std::vector<SweepRecord> recs(records.begin() + static_cast<long>(t * per_term),
                                    records.begin() + static_cast<long>((t + 1) * per_term));
      std::vector<double> errs = error_series(recs, cfg.meshes);
      std::ofstream dat(out_dir + "/" + cfg.terms[t] + ".dat");
      dat << "# " << cfg.terms[t] << "  config=" << hash << " version=" << kArtifactVersion
          << "\n# N_k  err_vs_finest\n";
      for (size_t i = 0; i < recs.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d %.17g\n", recs[i].n_k, errs[i]);
        dat << buf;
      }
    }
  }

  // summary.json
  {
    json summary;
    summary["schema_version"] = 1;
    summary["artifact_version"] = kArtifactVersion;
    summary["config_hash"] = hash;
    summary["config"] = config_to_json(cfg);
    json recs = json::array();
    for (const auto& r : records)
      recs.push_back({{"term", r.term},
                      {"m", r.m},
                      {"n_k", r.n_k},
                      {"re", r.value.real()},
                      {"im", r.value.imag()},
                      {"seconds", r.seconds}});
    summary["records"] = recs;
    json fits = json::array();
    for (const auto& rep : reports) {
      json f;
      f["term"] = rep.term;
      f["free"] = {{"c0", rep.free_fit.c0},
                   {"c1", rep.free_fit.c1},
                   {"s", rep.free_fit.s},
                   {"no_power_law", rep.free_fit.no_power_law},
                   {"non_monotone", rep.free_fit.non_monotone},
                   {"verdict", verdict_name(rep.free_verdict)},
                   {"discrepancies", rep.free_discrepancies}};
      json cands = json::array();
      for (const auto& c : rep.candidates)
        cands.push_back({{"s", c.s},
                         {"c1", c.fit.c1},
                         {"verdict", verdict_name(c.verdict)},
                         {"discrepancies", c.discrepancies}});
      f["candidates"] = cands;
      fits.push_back(f);
    }
    summary["fits"] = fits;
    std::ofstream out(out_dir + "/summary.json");
    if (!out) throw Error("cannot write " + out_dir + "/summary.json");
    out << summary.dump(2) << "\n";
  }
}

StudyResult run_study(const StudyConfig& cfg, const std::string& out_dir, bool resume) {
  StudyResult res;
  res.config = cfg;
  res.records = run_sweep(cfg, out_dir, resume);
  res.reports = analyze(cfg, res.records);
  emit_report(cfg, res.records, res.reports, out_dir);
  return res;
}

}  // namespace ccdfse
