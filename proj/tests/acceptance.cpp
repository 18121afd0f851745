// Acceptance checks; prints one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "tdpfed/aggregation.hpp"
#include "tdpfed/cli.hpp"
#include "tdpfed/gradcheck.hpp"
#include "tdpfed/objective.hpp"
#include "tdpfed/simulator.hpp"
#include "test_util.hpp"

using namespace tdpfed;
using testing::max_abs_diff;
using testing::random_factors;
using testing::random_matrix;
using testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += " (over time limit)";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome factor_gradient_fd() {
  std::mt19937_64 rng(11);
  const double h = 1e-6, lambda = 1.0;
  double worst = 0.0;
  for (std::size_t order : {2u, 4u})
    for (std::size_t rank : {1u, 2u, 3u}) {
      const Shape shape = order == 2 ? Shape{4, 3} : Shape{3, 2, 3, 2};
      const DenseTensor theta = random_tensor(rng, shape);
      KruskalFactors f = random_factors(rng, shape, rank);
      for (std::size_t n = 0; n < order; ++n) {
        const Matrix g = factor_gradient(theta, f, n, lambda);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double& v = f.factors[n].data()[i];
          const double keep = v;
          v = keep + h;
          const double up = layer_prox(theta, f, lambda);
          v = keep - h;
          const double down = layer_prox(theta, f, lambda);
          v = keep;
          worst = std::max(worst, gradient_rel_error(g.data()[i], (up - down) / (2 * h)));
        }
      }
    }
  return {worst < 1e-5, fmt("max rel error %.3g (< 1e-5)", worst)};
}

Outcome cp_conv_exact() {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> ch(1, 8), sp(3, 8), rk(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t S = ch(rng), T = ch(rng), R = rk(rng);
    const Matrix a1 = random_matrix(rng, 3, R), a2 = random_matrix(rng, 3, R),
                 a3 = random_matrix(rng, S, R), a4 = random_matrix(rng, T, R),
                 b = random_matrix(rng, 1, T);
    const DenseTensor x = random_tensor(rng, {sp(rng), sp(rng), S});
    const TensorizedConv c{a1, a2, a3, a4, b.data()};
    const KruskalFactors k({a1, a2, a3, a4});
    const DenseTensor dense = conv_forward_dense(kruskal_reconstruct(k), b.data(), x);
    worst = std::max(worst, max_abs_diff(tc_forward(c, x).data(), dense.data()));
  }
  return {worst <= 1e-9, fmt("50 instances, max abs diff %.3g (<= 1e-9)", worst)};
}

std::vector<std::size_t> plan_via_cli(const std::string& model, const std::string& cr) {
  std::ostringstream out, err;
  if (cli_main({"plan-ranks", "--model", model, "--cr", cr}, out, err) != 0) return {};
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::vector<std::size_t> ranks;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string name, dims;
    std::size_t rank = 0;
    f >> name >> dims >> rank;
    ranks.push_back(rank);
  }
  return ranks;
}

Outcome table_ranks() {
  using V = std::vector<std::size_t>;
  const struct {
    const char* model;
    const char* cr;
    V ranks;
  } rows[] = {
      {"dnn", "2", V{44, 5}},
      {"dnn", "1.5", V{59, 6}},
      {"vgg8", "2", V{11, 90, 186, 378, 569, 64, 64, 5}},
      {"vgg8", "1.5", V{14, 120, 248, 504, 759, 85, 85, 6}},
  };
  std::size_t matched = 0, total = 0;
  for (const auto& r : rows) {
    const V got = plan_via_cli(r.model, r.cr);
    total += r.ranks.size();
    for (std::size_t i = 0; i < r.ranks.size() && i < got.size(); ++i) matched += got[i] == r.ranks[i];
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " ranks match"};
}

Outcome compression_bytes() {
  const TensorizedModel m = init_global(dnn_spec(44, 5), 1);
  const BroadcastPayload p = make_broadcast(m);
  const std::size_t reals = p.uplink_bytes / kBytesPerReal;
  const std::size_t dense = 784 * 100 + 100 + 100 * 10 + 10;
  const double ratio = static_cast<double>(dense) / static_cast<double>(reals);
  const bool ok = reals == 39556 && dense == 79510 && ratio >= 1.95 && ratio <= 2.10;
  return {ok, std::to_string(reals) + " reals vs " + std::to_string(dense) + " dense, ratio " +
                  fmt("%.4f", ratio)};
}

SimConfig desk_config(Strategy strategy) {
  SimConfig c;
  c.strategy = strategy;
  c.clients = 20;
  c.sampled = 20;
  c.rounds = 100;
  c.eval_every = 5;
  c.beta = 1.0;
  c.model = dnn_spec(44, 5);
  c.hyper.tau = 5;
  c.hyper.s = 5;
  c.hyper.s_prime = 5;
  c.hyper.lambda = 12.0;
  c.hyper.batch_size = 20;
  c.data.classes = 10;
  c.data.separation = 3.0;
  c.data.classes_per_client = 2;
  return c;
}

double loss_at(const SimResult& r, std::size_t round) {
  for (const auto& m : r.metrics)
    if (m.round == round) return m.loss_train_mean;
  return NAN;
}

SimResult afm_run, act_run;

Outcome desk_run() {
  afm_run = run(desk_config(Strategy::afm));
  const RoundMetrics& last = afm_run.metrics.back();
  const double l5 = loss_at(afm_run, 5), l50 = loss_at(afm_run, 50);
  const bool ok = last.round == 100 && last.acc_personalized_mean >= 0.95 && l50 < l5;
  std::ostringstream s;
  s << "personalized acc " << fmt("%.4f", last.acc_personalized_mean) << " (>= 0.95), loss r5 "
    << fmt("%.4f", l5) << " r50 " << fmt("%.4f", l50);
  return {ok, s.str()};
}

Outcome afm_vs_act() {
  act_run = run(desk_config(Strategy::act));
  if (afm_run.metrics.empty()) return {false, "AFM run missing"};
  const double afm_acc = afm_run.metrics.back().acc_personalized_mean;
  const double act_acc = act_run.metrics.back().acc_personalized_mean;
  const bool finite = std::isfinite(act_run.metrics.back().loss_train_mean);
  return {finite && act_run.metrics.back().round == 100 && afm_acc >= act_acc - 0.02,
          "AFM " + fmt("%.4f", afm_acc) + " vs ACT " + fmt("%.4f", act_acc)};
}

TensorizedModel algebra_model(std::mt19937_64& rng) {
  TensorizedModel m;
  m.layers.push_back({LayerKind::linear, random_factors(rng, {4, 3}, 2),
                      random_matrix(rng, 1, 4).data()});
  m.layers.push_back({LayerKind::conv, random_factors(rng, {3, 3, 2, 2}, 3),
                      random_matrix(rng, 1, 2).data()});
  return m;
}

double model_diff(const TensorizedModel& a, const TensorizedModel& b) {
  double d = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t n = 0; n < a.layers[l].factors.order(); ++n)
      d = std::max(d, max_abs_diff(a.layers[l].factors.factors[n].data(),
                                   b.layers[l].factors.factors[n].data()));
    d = std::max(d, max_abs_diff(a.layers[l].bias, b.layers[l].bias));
  }
  return d;
}

Outcome aggregation_algebra() {
  std::mt19937_64 rng(13);
  const TensorizedModel g = algebra_model(rng), a = algebra_model(rng), b = algebra_model(rng);
  // Exact mean.
  TensorizedModel mean = a;
  for (std::size_t l = 0; l < mean.layers.size(); ++l) {
    for (std::size_t n = 0; n < mean.layers[l].factors.order(); ++n)
      for (std::size_t i = 0; i < mean.layers[l].factors.factors[n].size(); ++i)
        mean.layers[l].factors.factors[n].data()[i] =
            0.5 * a.layers[l].factors.factors[n].data()[i] +
            0.5 * b.layers[l].factors.factors[n].data()[i];
    for (std::size_t i = 0; i < mean.layers[l].bias.size(); ++i)
      mean.layers[l].bias[i] = 0.5 * a.layers[l].bias[i] + 0.5 * b.layers[l].bias[i];
  }
  const double mean_err = model_diff(afm({g, {{0, a, 20, 100}, {1, b, 20, 100}}}, 1.0), mean);
  double fixed_err = 0.0, refit_err = 0.0;
  for (double beta : {0.5, 1.0, 1.4, 1.8}) {
    const AggregationInput same{g, {{0, g, 5, 50}, {3, g, 20, 80}, {7, g, 9, 10}}};
    fixed_err = std::max(fixed_err, model_diff(afm(same, beta), g));
    const ActResult r = act(same, beta, 2000, 3);
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      const DenseTensor w = kruskal_reconstruct(g.layers[l].factors);
      const DenseTensor fit = kruskal_reconstruct(r.factors.layers[l].factors);
      double sq = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i)
        sq += (fit.data()[i] - w.data()[i]) * (fit.data()[i] - w.data()[i]);
      refit_err = std::max(refit_err, std::sqrt(sq) / frobenius_norm(w));
    }
  }
  std::ostringstream s;
  s << "mean err " << fmt("%.2g", mean_err) << ", fixed point err " << fmt("%.2g", fixed_err)
    << ", ACT refit rel err " << fmt("%.2g", refit_err) << " (< 1e-6)";
  return {mean_err == 0.0 && fixed_err < 1e-12 && refit_err < 1e-6, s.str()};
}

const char* kDeterminismConfig = R"([experiment]
seed = 21
eval_every = 2
[data]
classes = 4
dim = 12
train_per_class = 30
test_per_class = 10
[fl]
K = 4
S = 3
T = 6
tau = 3
batch_size = 8
[opt]
lambda = 5
eta = 0.005
eta_p = 0.05
s = 3
s_prime = 3
[model]
layer = linear 12 8 relu
layer = linear 8 4 softmax
ranks = 3,2
)";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tdpfed_acceptance";
  fs::create_directories(dir);
  std::ofstream(dir / "det.ini") << kDeterminismConfig;
  std::vector<std::string> csvs;
  for (const char* threads : {"1", "4", "1", "3"}) {
    setenv("TDPFED_THREADS", threads, 1);
    const fs::path out = dir / (std::string("run_") + std::to_string(csvs.size()));
    std::ostringstream o, e;
    const int code =
        cli_main({"run", "--config", (dir / "det.ini").string(), "--out", out.string()}, o, e);
    if (code != 0) return {false, "run failed: " + e.str()};
    csvs.push_back(slurp(out / "metrics.csv"));
  }
  unsetenv("TDPFED_THREADS");
  bool same = !csvs[0].empty();
  for (const auto& c : csvs) same = same && c == csvs[0];
  return {same, "4 runs with TDPFED_THREADS in {1,4,1,3}: metrics.csv " +
                    std::string(same ? "byte-identical" : "differs")};
}

Outcome tensor_properties() {
  std::mt19937_64 rng(14);
  double fold_err = 0, mode_err = 0, kru_err = 0, kr_err = 0;
  bool monotone = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape shape = testing::random_shape(rng, 2 + trial % 3, 4);
    const DenseTensor t = random_tensor(rng, shape);
    for (std::size_t n = 0; n < shape.size(); ++n) {
      fold_err = std::max(fold_err, max_abs_diff(fold(unfold(t, n), n, shape).data(), t.data()));
      // (T x_n U)_(n) = U T_(n)
      const Matrix u = random_matrix(rng, 3, shape[n]);
      mode_err = std::max(mode_err, max_abs_diff(unfold(mode_n_product(t, u, n), n).data(),
                                                 matmul(u, unfold(t, n)).data()));
      const KruskalFactors f = random_factors(rng, shape, 1 + trial % 3);
      kru_err = std::max(kru_err, max_abs_diff(kruskal_unfold(f, n).data(),
                                               unfold(kruskal_reconstruct(f), n).data()));
    }
    // Column r of A kr B equals kron(a_r, b_r).
    const Matrix a = random_matrix(rng, 3, 2), b = random_matrix(rng, 4, 2);
    const Matrix k = khatri_rao(a, b);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          kr_err = std::max(kr_err, std::abs(k(i * 4 + j, r) - a(i, r) * b(j, r)));
    const CpAlsResult als = cp_als(t, 2, 30, trial);
    for (std::size_t i = 1; i < als.errors.size(); ++i)
      monotone = monotone && als.errors[i] <= als.errors[i - 1] + 1e-9;
  }
  std::ostringstream s;
  s << "fold " << fmt("%.2g", fold_err) << ", mode-n " << fmt("%.2g", mode_err) << ", kruskal_unfold "
    << fmt("%.2g", kru_err) << ", khatri-rao " << fmt("%.2g", kr_err) << ", ALS monotone "
    << (monotone ? "yes" : "no");
  return {fold_err == 0 && mode_err < 1e-12 && kru_err < 1e-10 && kr_err == 0 && monotone, s.str()};
}

}  // namespace

int main() {
  report(1, "factor gradient vs finite differences", 10, factor_gradient_fd);
  report(2, "CP conv staged vs dense", 5, cp_conv_exact);
  report(3, "rank table", 0, table_ranks);
  report(4, "compression byte accounting", 0, compression_bytes);
  report(5, "desk-scale synthetic run", 0, desk_run);
  report(6, "AFM non-inferior to ACT", 0, afm_vs_act);
  report(7, "aggregation algebra", 5, aggregation_algebra);
  report(8, "determinism across thread counts", 0, determinism);
  report(9, "tensor algebra properties", 10, tensor_properties);
  return failures == 0 ? 0 : 1;
}
