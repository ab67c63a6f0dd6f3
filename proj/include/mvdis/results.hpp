#pragma once

// Flat comma-separated results table, resumable appends, and the derived
// plot-data files.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mvdis/probe.hpp"

namespace mvdis {

inline constexpr const char* kResultsHeader =
    "run_id,principle,objective,lambda,gamma,seed,best_val_total,recon_mse,acc_shared_zp,acc_shared_zs,"
    "acc_shared_concat,acc_private_zp,acc_private_zs,acc_private_concat,delta_shared,delta_private,wall_time_s";

/// One table row. Empty optionals are written as empty fields (baselines
/// without a decoder or without subspaces).
struct ResultRow {
  std::string run_id;
  std::string principle;
  std::string objective;
  std::optional<double> lambda;
  std::optional<double> gamma;
  std::uint64_t seed = 0;
  std::optional<double> best_val_total;
  std::optional<double> recon_mse;
  std::optional<double> acc[2][3];  // [task][feature], same layout as ProbeReport
  std::optional<double> delta_shared;
  std::optional<double> delta_private;
  double wall_time_s = 0.0;

  void set_probe_report(const ProbeReport& report);
  std::optional<double> accuracy(ProbeTask task, FeatureKind kind) const {
    return acc[static_cast<int>(task)][static_cast<int>(kind)];
  }
  /// Mean of the concat accuracies over both tasks.
  std::optional<double> mean_overall_accuracy() const;
};

std::string format_result_row(const ResultRow& row);
/// Throws FormatError on a malformed line.
ResultRow parse_result_row(const std::string& line);

/// Reads a table; the first line must be the fixed header.
std::vector<ResultRow> read_results(const std::filesystem::path& path);
void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ull);

/// Append-only table guarded by a digest sidecar (`<table>.digest`).
/// Opening an existing table drops a trailing partial line, remembers the
/// run ids already present, and throws ConsistencyError if the digest
/// differs. Appends are whole lines written under a lock and flushed.
class ResultsWriter {
 public:
  ResultsWriter(const std::filesystem::path& path, const std::string& digest);

  bool contains(const std::string& run_id) const;
  void append(const ResultRow& row);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  std::set<std::string> run_ids_;
  std::ofstream out_;
  mutable std::mutex mutex_;
};

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ReportFiles {
  std::filesystem::path scatter, margins, deltas;
};

/// Writes scatter.csv, margins.csv and deltas.csv into `out_dir`. Rows are
/// ordered by run id so the output does not depend on table order. Deltas
/// compare every non-baseline row to the lambda = 1 row of the same
/// principle, objective and seed (any lambda = 1 row of that seed when the
/// grid was deduplicated) and average across principles; a "mean" seed
/// entry averages across seeds. Throws ReportError naming a missing
/// reference.
ReportFiles write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& out_dir);

}  // namespace mvdis
