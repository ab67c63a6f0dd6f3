// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
//
// Set MVDIS_ACCEPTANCE_KEEP=1 to reuse the work directory of an earlier
// invocation (the sweep resumes from its table).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mvdis/harness.hpp"
#include "mvdis/optim.hpp"

using namespace mvdis;
using mvdis::testing::max_gradient_error;
using mvdis::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Training budget of the 54-run sweep. The single-run criteria use the
// default budget.
constexpr int kSweepEpochs = 30;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MVDIS_CLI_PATH + "\" " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quote(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_wall_time(ResultRow row) {
  row.wall_time_s = 0.0;
  return format_result_row(row);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome criterion_1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const Shape shape{4, 2, 6};
  auto a = random_tensor(shape, rng);
  auto b = random_tensor(shape, rng);
  auto near_a = add(a, random_tensor(shape, rng, 0.4, false)).clone(true);
  auto x1 = random_tensor({4, 2, 12}, rng);
  auto x2 = random_tensor({4, 2, 12}, rng);
  auto h1 = random_tensor({4, 2, 12}, rng);
  auto h2 = random_tensor({4, 2, 12}, rng);
  const double eps = 1e-6;

  std::map<std::string, double> errors;
  errors["infonce_sim"] = max_gradient_error([&](const auto& in) { return loss_infonce_sim(in[0], in[1], 0.1, eps); }, {a, b});
  errors["infonce_sep"] = max_gradient_error([&](const auto& in) { return loss_infonce_sep(in[0], in[1], eps); }, {a, b});
  errors["cosine_sim"] = max_gradient_error([&](const auto& in) { return loss_cosine_sim(in[0], in[1], eps); }, {a, near_a});
  errors["cosine_sep"] = max_gradient_error([&](const auto& in) { return loss_cosine_sep(in[0], in[1], eps); }, {a, b});
  errors["vicreg_sim"] = max_gradient_error(
      [&](const auto& in) { return loss_vicreg(in[0], in[1], VicRegMode::sim, VicRegCoeffs{}, eps).value; }, {a, b});
  errors["vicreg_sep"] = max_gradient_error(
      [&](const auto& in) { return loss_vicreg(in[0], in[1], VicRegMode::sep, VicRegCoeffs{}, eps).value; }, {a, b});
  errors["rec"] = max_gradient_error([&](const auto& in) { return loss_rec(in[0], in[1], in[2], in[3]); }, {x1, x2, h1, h2});

  ViewPairBatch<double> batch;
  batch.view1 = x1.clone(false);
  batch.view2 = x2.clone(false);
  auto c1 = random_tensor(shape, rng);
  auto c2 = random_tensor(shape, rng);
  for (Principle p : {Principle::infonce, Principle::cosine, Principle::vicreg}) {
    for (Objective obj : {Objective::sim, Objective::sep, Objective::sim_sep}) {
      LossConfig config;
      config.principle = p;
      config.objective = obj;
      config.lambda = 0.4;
      config.gamma = 1.7;
      errors["total_" + to_string(p) + "_" + to_string(obj)] = max_gradient_error(
          [&](const std::vector<TensorD>& in) {
            ForwardOutput<double> fo{in[0], in[1], in[2], in[3], in[4], in[5]};
            return loss_total(config, fo, batch).first;
          },
          {c1, c2, a, near_a, h1, h2});
    }
  }
  double worst = 0.0;
  for (const auto& [name, err] : errors) {
    o.require(err < 1e-4, name + " rel err " + fmt(err));
    worst = std::max(worst, err);
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < 60.0, "runtime " + fmt(elapsed) + " s");
  o.detail << errors.size() << " gradient checks at B=4 n=2 k=6, max rel err " << fmt(worst) << ", " << fmt(elapsed)
           << " s";
  return o;
}

Outcome criterion_2() {
  Outcome o;
  const double eps = 1e-6;
  std::mt19937_64 rng(7);
  auto z = random_tensor({5, 3, 4}, rng, 1.0, false);
  o.require(std::abs(loss_cosine_sim(z, z, eps).item()) <= 1e-9, "cosine identity alignment");
  o.require(std::abs(loss_rec(z, z, z, z).item()) <= 1e-9, "reconstruction identity");
  for (Index b = 2; b <= 8; ++b) {
    auto same = TensorD::full({b, 2, 3}, 0.7);
    o.require(std::abs(loss_infonce_sim(same, same, 0.1, eps).item() - std::log(static_cast<double>(b))) <= 1e-9,
              "all-identical InfoNCE at B=" + std::to_string(b));
  }
  auto u = TensorD::from_values({2, 1, 2}, {1, 0, 0, 1});
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  const double got = loss_infonce_sim(u, u, 1.0, eps).item();
  o.require(std::abs(got - expected) <= 1e-9, "B=2 InfoNCE value " + fmt(got));

  ForwardOutput<double> fo;
  fo.z_p1 = random_tensor({4, 2, 6}, rng, 1.0, false);
  fo.z_p2 = random_tensor({4, 2, 6}, rng, 1.0, false);
  fo.z_s1 = random_tensor({4, 2, 6}, rng, 1.0, false);
  fo.z_s2 = random_tensor({4, 2, 6}, rng, 1.0, false);
  fo.xhat1 = random_tensor({4, 2, 12}, rng, 1.0, false);
  fo.xhat2 = random_tensor({4, 2, 12}, rng, 1.0, false);
  ViewPairBatch<double> batch;
  batch.view1 = random_tensor({4, 2, 12}, rng, 1.0, false);
  batch.view2 = random_tensor({4, 2, 12}, rng, 1.0, false);
  for (double lambda : {0.0, 0.2, 0.6, 1.0}) {
    LossConfig config;
    config.lambda = lambda;
    config.gamma = 2.5;
    const auto [total, b] = loss_total(config, fo, batch);
    const double rec = loss_rec(batch.view1, batch.view2, fo.xhat1, fo.xhat2).item();
    const double dis = loss_dis(config, fo).value.item();
    o.require(std::abs(total.item() - (2.5 * lambda * rec + (1.0 - lambda) * dis)) <= 1e-9,
              "lambda weighting at " + fmt(lambda));
  }
  o.detail << "identity alignment, log B for B=2..8, B=2 value " << fmt(got) << ", lambda weighting";
  return o;
}

struct SignRuns {
  std::map<double, std::vector<ResultRow>> by_lambda;  // lambda -> one row per seed
  bool ok = true;
};

SignRuns headline_runs(const fs::path& data_dir, const fs::path& work) {
  SignRuns runs;
  for (double lambda : {0.6, 1.0}) {
    for (std::uint64_t seed : kSeeds) {
      const auto out = work / ("cosine-sep-l" + fmt(lambda) + "-s" + std::to_string(seed));
      if (!fs::exists(out / "results.csv")) {
        const auto t0 = std::chrono::steady_clock::now();
        const int rc = run_cli("train --data-dir " + quote(data_dir) + " --out-dir " + quote(out) + " --seed " +
                               std::to_string(seed) + " --principle cosine --objective sep --lambda " + fmt(lambda));
        std::cerr << "  trained " << out.filename().string() << " in " << fmt(seconds_since(t0)) << " s\n";
        if (rc != 0) {
          runs.ok = false;
          continue;
        }
      }
      runs.by_lambda[lambda].push_back(read_results(out / "results.csv").at(0));
    }
  }
  return runs;
}

double seed_mean(const std::vector<ResultRow>& rows, const std::function<double(const ResultRow&)>& f) {
  double s = 0.0;
  for (const auto& r : rows) s += f(r);
  return rows.empty() ? NAN : s / static_cast<double>(rows.size());
}

Outcome criterion_3(const SignRuns& runs) {
  Outcome o;
  o.require(runs.ok && runs.by_lambda.at(0.6).size() == kSeeds.size() && runs.by_lambda.at(1.0).size() == kSeeds.size(),
            "all training runs completed");
  if (!o.pass) return o;
  const auto& sep = runs.by_lambda.at(0.6);
  const auto& rec = runs.by_lambda.at(1.0);
  const double dp = seed_mean(sep, [](const ResultRow& r) { return *r.delta_private; });
  const double ds = seed_mean(sep, [](const ResultRow& r) { return *r.delta_shared; });
  const double rdp = seed_mean(rec, [](const ResultRow& r) { return *r.delta_private; });
  const double rds = seed_mean(rec, [](const ResultRow& r) { return *r.delta_shared; });
  o.require(dp >= 0.03, "lambda=0.6 delta_private " + fmt(dp) + " < 0.03");
  o.require(ds >= 0.03, "lambda=0.6 delta_shared " + fmt(ds) + " < 0.03");
  o.require(std::abs(rdp) < 0.05, "lambda=1 |delta_private| " + fmt(rdp));
  o.require(std::abs(rds) < 0.05, "lambda=1 |delta_shared| " + fmt(rds));
  double slowest = 0.0;
  for (const auto* rows : {&sep, &rec})
    for (const auto& r : *rows) slowest = std::max(slowest, r.wall_time_s);
  o.require(slowest < 600.0, "slowest run " + fmt(slowest) + " s");
  o.detail << "cosine/sep seeds 0-2: lambda=0.6 delta_private " << fmt(dp) << " delta_shared " << fmt(ds)
           << "; lambda=1 delta_private " << fmt(rdp) << " delta_shared " << fmt(rds) << "; per seed (dp, ds):";
  for (const auto& r : sep) o.detail << " (" << fmt(*r.delta_private) << ", " << fmt(*r.delta_shared) << ")";
  o.detail << "; slowest run " << fmt(slowest) << " s";
  return o;
}

Outcome criterion_4(const SignRuns& runs) {
  Outcome o;
  o.require(runs.ok && runs.by_lambda.at(0.6).size() == kSeeds.size() && runs.by_lambda.at(1.0).size() == kSeeds.size(),
            "all training runs completed");
  if (!o.pass) return o;
  const double sep = seed_mean(runs.by_lambda.at(0.6), [](const ResultRow& r) { return *r.mean_overall_accuracy(); });
  const double rec = seed_mean(runs.by_lambda.at(1.0), [](const ResultRow& r) { return *r.mean_overall_accuracy(); });
  o.require(std::abs(sep - rec) <= 0.05, "concat accuracy gap " + fmt(sep - rec));
  o.detail << "mean concat accuracy lambda=0.6 " << fmt(sep) << " vs lambda=1 " << fmt(rec);
  return o;
}

Outcome criterion_5(const std::vector<ResultRow>& rows) {
  Outcome o;
  o.require(rows.size() == 54, "sweep produced " + std::to_string(rows.size()) + " rows");
  if (rows.empty()) return o;
  std::vector<double> mse, acc;
  std::map<std::pair<std::string, std::string>, const ResultRow*> lambda1;
  for (const auto& r : rows) {
    mse.push_back(*r.recon_mse);
    acc.push_back(*r.mean_overall_accuracy());
    if (*r.lambda == 1.0) lambda1[{r.principle, r.objective}] = &r;
  }
  const double rho = spearman(mse, acc);
  o.require(rho < 0.0, "spearman " + fmt(rho));
  int checked = 0;
  for (const auto& r : rows) {
    if (*r.lambda != 0.2) continue;
    const auto it = lambda1.find({r.principle, r.objective});
    o.require(it != lambda1.end(), "missing lambda=1 row for " + r.run_id);
    if (it == lambda1.end()) continue;
    ++checked;
    o.require(*r.recon_mse >= *it->second->recon_mse,
              r.run_id + " recon_mse " + fmt(*r.recon_mse) + " < " + fmt(*it->second->recon_mse));
  }
  o.require(checked == 9, "checked " + std::to_string(checked) + " lambda=0.2 rows");
  o.detail << "54-run sweep (" << kSweepEpochs << " epochs per run): spearman(recon_mse, mean accuracy) = " << fmt(rho)
           << ", " << checked << " lambda=0.2 rows compared to lambda=1";
  return o;
}

Outcome criterion_6(const ExperimentData& data) {
  Outcome o;
  const TrainConfig defaults;
  const auto split = stratified_split(data.train_pool, kTrainingFractions, 0);
  const auto index = index_by_id(split.train);
  const auto pairs = make_pairs(split.train, 99);
  const auto batch = make_batch<double>(split.train, index,
                                        std::span<const SamplePair>(pairs).first(static_cast<std::size_t>(defaults.batch_size)));
  const Index dim = split.train.front().latent.cols();
  const auto start = init_params<double>(dim, dim, 5);

  auto same = [](const Mlp<double>& a, const Mlp<double>& b) {
    return (a.hidden.weight.data() == b.hidden.weight.data()).all() &&
           (a.hidden.bias.data() == b.hidden.bias.data()).all() &&
           (a.output.weight.data() == b.output.weight.data()).all() &&
           (a.output.bias.data() == b.output.bias.data()).all();
  };
  int cases = 0;
  for (Principle p : {Principle::infonce, Principle::cosine, Principle::vicreg}) {
    for (Objective obj : {Objective::sim, Objective::sep}) {
      LossConfig loss = defaults.loss;
      loss.principle = p;
      loss.objective = obj;
      loss.lambda = 0.0;
      auto params = start.clone();
      AdamW<double> opt(params.parameters(), {defaults.learning_rate, defaults.weight_decay});
      auto [total, breakdown] = loss_total(loss, forward_pair(params, batch), batch);
      total.backward();
      opt.step();
      const std::string name = to_string(p) + "/" + to_string(obj);
      if (obj == Objective::sim) {
        o.require(same(params.private_encoder, start.private_encoder), name + " changed e_p");
        o.require(!same(params.shared_encoder, start.shared_encoder), name + " left e_s unchanged");
      } else {
        o.require(same(params.shared_encoder, start.shared_encoder), name + " changed e_s");
        o.require(!same(params.private_encoder, start.private_encoder), name + " left e_p unchanged");
      }
      ++cases;
    }
  }
  o.detail << cases << " principle/objective cases at lambda=0, one AdamW step each";
  return o;
}

Outcome criterion_7(const fs::path& sweep_table, const fs::path& data_dir, const fs::path& work) {
  Outcome o;
  const auto rows = read_results(sweep_table);
  std::set<std::string> ids;
  for (const auto& r : rows) ids.insert(r.run_id);
  o.require(rows.size() == 54 && ids.size() == 54, "sweep rows " + std::to_string(rows.size()));

  const auto base_dir = work / "baselines";
  const int rc = run_cli("baselines --data-dir " + quote(data_dir) + " --out-dir " + quote(base_dir) +
                         " --seed 0 --epochs " + std::to_string(kSweepEpochs));
  o.require(rc == 0, "baselines exit code " + std::to_string(rc));
  std::set<std::string> labels;
  if (rc == 0) {
    const auto base_rows = read_results(base_dir / "baselines.csv");
    for (const auto& r : base_rows) {
      if (r.principle == "baseline" && r.mean_overall_accuracy()) labels.insert(r.objective);
    }
    o.require(base_rows.size() == 4 && labels.size() == 4, "baseline rows " + std::to_string(base_rows.size()));
  }

  const auto rep1 = work / "report1", rep2 = work / "report2", rep3 = work / "report3";
  o.require(run_cli("report --results " + quote(sweep_table) + " --out-dir " + quote(rep1)) == 0, "report 1");
  o.require(run_cli("report --results " + quote(sweep_table) + " --out-dir " + quote(rep2)) == 0, "report 2");
  auto reversed = rows;
  std::reverse(reversed.begin(), reversed.end());
  write_results(work / "reversed.csv", reversed);
  o.require(run_cli("report --results " + quote(work / "reversed.csv") + " --out-dir " + quote(rep3)) == 0, "report 3");
  for (const char* f : {"scatter.csv", "margins.csv", "deltas.csv"}) {
    const auto text = slurp(rep1 / f);
    o.require(!text.empty() && text == slurp(rep2 / f) && text == slurp(rep3 / f), std::string(f) + " differs");
  }
  o.detail << rows.size() << " sweep rows, " << labels.size() << " baseline labels (";
  for (const auto& l : labels) o.detail << l << (l == *labels.rbegin() ? "" : ",");
  o.detail << "), report files identical across 3 regenerations";
  return o;
}

Outcome criterion_8(const fs::path& data_dir, const fs::path& work) {
  Outcome o;
  const std::string train_args = "train --data-dir " + quote(data_dir) +
                                 " --seed 3 --principle vicreg --objective sim_sep --lambda 0.4 --epochs 5 --out-dir ";
  const auto t1 = work / "det_train1", t2 = work / "det_train2";
  o.require(run_cli(train_args + quote(t1)) == 0 && run_cli(train_args + quote(t2)) == 0, "train exit codes");
  const std::string sweep_args = "sweep --data-dir " + quote(data_dir) +
                                 " --seed 1 --principles infonce,cosine --objectives sep --lambdas 0.2,1 --epochs 5 "
                                 "--out-dir ";
  const auto s1 = work / "det_sweep1", s2 = work / "det_sweep2";
  o.require(run_cli(sweep_args + quote(s1)) == 0 && run_cli(sweep_args + quote(s2)) == 0, "sweep exit codes");
  if (!o.pass) return o;

  auto rows_of = [](const fs::path& table) {
    std::vector<std::string> out;
    for (const auto& r : read_results(table)) out.push_back(without_wall_time(r));
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto ta = rows_of(t1 / "results.csv"), tb = rows_of(t2 / "results.csv");
  const auto sa = rows_of(s1 / "results.csv"), sb = rows_of(s2 / "results.csv");
  o.require(ta == tb, "train rows differ");
  o.require(slurp(t1 / "model.mvck") == slurp(t2 / "model.mvck"), "train checkpoints differ");
  o.require(sa == sb && sa.size() == 4, "sweep rows differ");
  o.detail << "train row and checkpoint, and " << sa.size()
           << " sweep rows, identical across repeated invocations (wall_time_s excluded)";
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::current_path() / "acceptance_work";
  const char* keep = std::getenv("MVDIS_ACCEPTANCE_KEEP");
  if (!(keep && std::string(keep) == "1")) fs::remove_all(work);
  fs::create_directories(work);
  const fs::path data_dir = work / "data";

  std::vector<std::pair<int, Outcome>> outcomes;
  auto report = [&](int n, Outcome o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail.str() << std::endl;
    outcomes.emplace_back(n, std::move(o));
  };

  report(1, criterion_1());
  report(2, criterion_2());

  if (!fs::exists(data_dir / "train_pool.mvle") && run_cli("gen-data --seed 0 --out-dir " + quote(data_dir)) != 0) {
    std::cout << "FAIL criteria 3-8: could not generate the default dataset" << std::endl;
    return 1;
  }
  const ExperimentData data = load_dataset(data_dir);

  const auto runs = headline_runs(data_dir, work / "headline");
  report(3, criterion_3(runs));
  report(4, criterion_4(runs));

  const auto sweep_dir = work / "sweep";
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli("sweep --data-dir " + quote(data_dir) + " --out-dir " + quote(sweep_dir) + " --seed 0 --epochs " +
                         std::to_string(kSweepEpochs));
  std::cerr << "  sweep finished in " << fmt(seconds_since(t0)) << " s\n";
  std::vector<ResultRow> sweep_rows;
  if (rc == 0) sweep_rows = read_results(sweep_dir / "results.csv");
  report(5, criterion_5(sweep_rows));
  report(6, criterion_6(data));
  if (rc == 0) {
    report(7, criterion_7(sweep_dir / "results.csv", data_dir, work));
  } else {
    Outcome o;
    o.require(false, "sweep exit code " + std::to_string(rc));
    report(7, std::move(o));
  }
  report(8, criterion_8(data_dir, work));

  int failed = 0;
  for (const auto& [n, o] : outcomes) failed += !o.pass;
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
