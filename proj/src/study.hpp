#pragma once

#include <json.hpp>

#include "quadrature.hpp"
#include "terms.hpp"

namespace ccdfse {

// One sweep: a set of term selectors evaluated over a list of mesh sizes at
// fixed external labels, followed by power-law extrapolation and validation.
struct StudyConfig {
  std::string name = "study";
  ModelConfig model;
  MeshScheme scheme = MeshScheme::gamma_centered;
  std::vector<std::string> terms;  // TermId names or selectors mp2 / mp3 / ccd(n)
  Quadruple quadruple{0, 0, 0, 0};
  Frac3 ki{}, kj{}, ka{};
  std::vector<int> meshes;            // per-dim sizes, ascending
  std::vector<int> fit_meshes;        // exactly 3, subset of meshes
  std::vector<int> validation_meshes; // subset of meshes, disjoint from fit
  double budget_gib = 4.0;
  double eri_cache_gib = 2.0;
  int threads = 0;  // 0 = hardware
};

// Strict parse (unknown keys rejected). A config file holds one study object
// or an array of them.
StudyConfig parse_study_config(const nlohmann::json& j);
std::vector<StudyConfig> load_config_file(const std::string& path);
nlohmann::json config_to_json(const StudyConfig& c);
std::string config_hash(const StudyConfig& c);

struct SweepRecord {
  std::string term;
  int m = 0;
  int n_k = 0;
  cplx value{};
  double seconds = 0;  // wall time, reporting only
};

enum class FitVerdict { matches_power_law, faster_than, unreliable, no_power_law };
const char* verdict_name(FitVerdict v);

struct CandidateReport {
  double s = 0;
  RateFit fit;
  FitVerdict verdict = FitVerdict::unreliable;
  std::vector<double> discrepancies;  // |fit(N) - actual| per usable validation mesh
};

struct TermReport {
  std::string term;
  RateFit free_fit;            // exponent fit on the error-vs-finest series
  FitVerdict free_verdict = FitVerdict::unreliable;
  std::vector<double> free_discrepancies;
  std::vector<CandidateReport> candidates;  // pinned s = 1 and s = 1/3 envelopes
};

struct StudyResult {
  StudyConfig config;
  std::vector<SweepRecord> records;
  std::vector<TermReport> reports;
};

// Error series vs the value at the largest configured mesh.
std::vector<double> error_series(const std::vector<SweepRecord>& records,
                                 const std::vector<int>& meshes);

// Verdict for one fit against later points (N, deviation). `deviation` is
// |e(N) - c0|; the envelope is c1 N^-s. The two largest points decide.
FitVerdict validate_fit(const RateFit& fit, const std::vector<std::pair<double, double>>& points,
                        std::vector<double>* discrepancies = nullptr);

// Runs every (term, mesh) point; appends finished points to
// <out_dir>/journal.csv so interrupted sweeps resume. Pass resume=true to
// reuse existing journal rows.
std::vector<SweepRecord> run_sweep(const StudyConfig& cfg, const std::string& out_dir,
                                   bool resume);

// Fits + validations for all terms from the records.
std::vector<TermReport> analyze(const StudyConfig& cfg, const std::vector<SweepRecord>& records);

// results.csv, summary.json, and per-term plot data under out_dir.
void emit_report(const StudyConfig& cfg, const std::vector<SweepRecord>& records,
                 const std::vector<TermReport>& reports, const std::string& out_dir);

// Convenience: sweep + analyze + emit.
StudyResult run_study(const StudyConfig& cfg, const std::string& out_dir, bool resume = false);

// Cost-plan line per sweep point (for --dry-run).
std::vector<std::string> dry_run_plan(const StudyConfig& cfg);

}  // namespace ccdfse
