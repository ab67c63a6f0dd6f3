#include "mvdis/results.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "mvdis/config.hpp"
#include "mvdis/errors.hpp"

namespace mvdis {

namespace {

constexpr int kColumns = 17;

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& name, const std::string& text) {
  if (text.empty()) return std::nullopt;
  try {
    return parse_double(name, text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("results row: ") + e.what());
  }
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::filesystem::path digest_path(const std::filesystem::path& table) {
  auto p = table;
  p += ".digest";
  return p;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void ResultRow::set_probe_report(const ProbeReport& report) {
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 3; ++f) acc[t][f] = report.acc[t][f];
  delta_shared = report.delta_shared;
  delta_private = report.delta_private;
  recon_mse = report.recon_mse;
}

std::optional<double> ResultRow::mean_overall_accuracy() const {
  const auto s = accuracy(ProbeTask::shared_task, FeatureKind::concat);
  const auto p = accuracy(ProbeTask::private_task, FeatureKind::concat);
  if (!s || !p) return std::nullopt;
  return 0.5 * (*s + *p);
}

std::string format_result_row(const ResultRow& row) {
  std::string out = row.run_id + "," + row.principle + "," + row.objective + "," + opt(row.lambda) + "," +
                    opt(row.gamma) + "," + std::to_string(row.seed) + "," + opt(row.best_val_total) + "," +
                    opt(row.recon_mse);
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 3; ++f) out += "," + opt(row.acc[t][f]);
  out += "," + opt(row.delta_shared) + "," + opt(row.delta_private) + "," + format_double(row.wall_time_s);
  return out;
}

ResultRow parse_result_row(const std::string& line) {
  const auto fields = split_fields(line);
  if (fields.size() != kColumns) {
    throw FormatError("results row has " + std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(kColumns) + ": '" + line + "'");
  }
  ResultRow row;
  row.run_id = fields[0];
  if (row.run_id.empty()) throw FormatError("results row with an empty run_id");
  row.principle = fields[1];
  row.objective = fields[2];
  row.lambda = parse_opt("lambda", fields[3]);
  row.gamma = parse_opt("gamma", fields[4]);
  try {
    const auto seed = parse_int("seed", fields[5]);
    if (seed < 0) throw ConfigError("negative seed");
    row.seed = static_cast<std::uint64_t>(seed);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("results row: ") + e.what());
  }
  row.best_val_total = parse_opt("best_val_total", fields[6]);
  row.recon_mse = parse_opt("recon_mse", fields[7]);
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 3; ++f) row.acc[t][f] = parse_opt("accuracy", fields[static_cast<std::size_t>(8 + 3 * t + f)]);
  row.delta_shared = parse_opt("delta_shared", fields[14]);
  row.delta_private = parse_opt("delta_private", fields[15]);
  const auto wall = parse_opt("wall_time_s", fields[16]);
  if (!wall) throw FormatError("results row without wall_time_s");
  row.wall_time_s = *wall;
  return row;
}

std::vector<ResultRow> read_results(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw FormatError(path.string() + ": missing or unexpected results header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_result_row(line));
  }
  return rows;
}

void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  auto out = open_out(path);
  out << kResultsHeader << '\n';
  for (const auto& row : rows) out << format_result_row(row) << '\n';
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ull;
  }
  return state;
}

std::string fnv1a_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

ResultsWriter::ResultsWriter(const std::filesystem::path& path, const std::string& digest) : path_(path) {
  const auto sidecar = digest_path(path);
  if (std::filesystem::exists(path)) {
    if (!std::filesystem::exists(sidecar)) {
      throw ConsistencyError(path.string() + " exists without a digest; refusing to resume");
    }
    std::string stored = read_text(sidecar);
    while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
    if (stored != digest) {
      throw ConsistencyError("sweep specification changed since " + path.string() + " was started (digest " + stored +
                             ", now " + digest + ")");
    }
    std::string text = read_text(path);
    const auto last_newline = text.rfind('\n');
    const std::size_t keep = last_newline == std::string::npos ? 0 : last_newline + 1;
    if (keep != text.size()) {
      text.resize(keep);
      std::filesystem::resize_file(path, keep);
    }
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
      auto header = open_out(path);
      header << kResultsHeader << '\n';
    } else if (line != kResultsHeader) {
      throw FormatError(path.string() + ": unexpected results header");
    }
    while (std::getline(in, line)) {
      if (!line.empty()) run_ids_.insert(parse_result_row(line).run_id);
    }
  } else {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto header = open_out(path);
    header << kResultsHeader << '\n';
    if (!header.flush()) throw IoError("failed writing " + path.string());
    auto side = open_out(sidecar);
    side << digest << '\n';
    if (!side.flush()) throw IoError("failed writing " + sidecar.string());
  }
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw IoError("cannot append to " + path.string());
}

bool ResultsWriter::contains(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  return run_ids_.count(run_id) != 0;
}

std::size_t ResultsWriter::size() const {
  std::lock_guard lock(mutex_);
  return run_ids_.size();
}

void ResultsWriter::append(const ResultRow& row) {
  const std::string line = format_result_row(row) + "\n";
  std::lock_guard lock(mutex_);
  if (!run_ids_.insert(row.run_id).second) throw ConsistencyError("duplicate run id " + row.run_id);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw IoError("failed appending to " + path_.string());
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 2) throw ContractError("spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ReportFiles write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<const ResultRow*> sorted;
  for (const auto& row : rows) sorted.push_back(&row);
  std::sort(sorted.begin(), sorted.end(), [](const ResultRow* a, const ResultRow* b) { return a->run_id < b->run_id; });

  ReportFiles files{out_dir / "scatter.csv", out_dir / "margins.csv", out_dir / "deltas.csv"};

  auto scatter = open_out(files.scatter);
  scatter << "run_id,principle,objective,lambda,seed,recon_mse,mean_accuracy\n";
  auto margins = open_out(files.margins);
  margins << "run_id,principle,objective,lambda,seed,delta_shared,delta_private,mean_accuracy\n";
  for (const ResultRow* r : sorted) {
    const std::string prefix =
        r->run_id + "," + r->principle + "," + r->objective + "," + opt(r->lambda) + "," + std::to_string(r->seed) + ",";
    scatter << prefix << opt(r->recon_mse) << "," << opt(r->mean_overall_accuracy()) << "\n";
    margins << prefix << opt(r->delta_shared) << "," << opt(r->delta_private) << "," << opt(r->mean_overall_accuracy())
            << "\n";
  }

  // Reference lookup for the lambda = 1 comparison.
  std::map<std::tuple<std::string, std::string, std::uint64_t>, const ResultRow*> exact;
  std::map<std::uint64_t, const ResultRow*> any_of_seed;
  auto is_sweep_row = [](const ResultRow& r) {
    if (r.principle == "baseline" || !r.lambda) return false;
    for (int t = 0; t < 2; ++t)
      for (int f = 0; f < 3; ++f)
        if (!r.acc[t][f]) return false;
    return true;
  };
  for (const ResultRow* r : sorted) {
    if (!is_sweep_row(*r) || *r->lambda != 1.0) continue;
    exact.emplace(std::make_tuple(r->principle, r->objective, r->seed), r);
    any_of_seed.emplace(r->seed, r);
  }

  struct Accum {
    double sum[2][3] = {};
    int count = 0;
  };
  // (seed, objective, lambda) -> per-principle deltas summed.
  std::map<std::tuple<std::uint64_t, std::string, double>, Accum> per_seed;
  for (const ResultRow* r : sorted) {
    if (!is_sweep_row(*r)) continue;
    const ResultRow* ref = nullptr;
    if (auto it = exact.find({r->principle, r->objective, r->seed}); it != exact.end()) ref = it->second;
    else if (auto jt = any_of_seed.find(r->seed); jt != any_of_seed.end()) ref = jt->second;
    if (ref == nullptr) {
      throw ReportError("no lambda=1 reference row for " + r->run_id + " (principle " + r->principle +
                        ", objective " + r->objective + ", seed " + std::to_string(r->seed) + ")");
    }
    auto& acc = per_seed[{r->seed, r->objective, *r->lambda}];
    for (int t = 0; t < 2; ++t)
      for (int f = 0; f < 3; ++f) acc.sum[t][f] += *r->acc[t][f] - *ref->acc[t][f];
    ++acc.count;
  }

  // (objective, lambda) -> mean over seeds of the per-seed principle means.
  std::map<std::pair<std::string, double>, Accum> across_seeds;
  auto deltas = open_out(files.deltas);
  deltas << "seed,objective,lambda,runs,d_acc_shared_zp,d_acc_shared_zs,d_acc_shared_concat,d_acc_private_zp,"
            "d_acc_private_zs,d_acc_private_concat\n";
  auto emit = [&](const std::string& seed, const std::string& objective, double lambda, const Accum& a) {
    deltas << seed << "," << objective << "," << format_double(lambda) << "," << a.count;
    for (int t = 0; t < 2; ++t)
      for (int f = 0; f < 3; ++f) deltas << "," << format_double(a.sum[t][f] / a.count);
    deltas << "\n";
  };
  for (const auto& [key, a] : per_seed) {
    const auto& [seed, objective, lambda] = key;
    emit(std::to_string(seed), objective, lambda, a);
    auto& m = across_seeds[{objective, lambda}];
    for (int t = 0; t < 2; ++t)
      for (int f = 0; f < 3; ++f) m.sum[t][f] += a.sum[t][f] / a.count;
    ++m.count;
  }
  for (const auto& [key, a] : across_seeds) emit("mean", key.first, key.second, a);

  for (auto* s : {&scatter, &margins, &deltas}) {
    if (!s->flush()) throw IoError("failed writing report files in " + out_dir.string());
  }
  return files;
}

}  // namespace mvdis
