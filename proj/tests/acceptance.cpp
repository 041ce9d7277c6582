// Acceptance run: one PASS/FAIL line per criterion with the measured values.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/detection.hpp"
#include "prism/experiment.hpp"
#include "prism/metrics.hpp"
#include "prism/model.hpp"
#include "prism/subspace.hpp"
#include "prism/training.hpp"
#include "test_util.hpp"

using namespace prism;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s | %s\n", id, ok ? "PASS" : "FAIL", title, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 ----------------------------------------------------------------------

void posterior_recovery() {
  const auto t0 = Clock::now();
  Rng rng(seed_offset::kFixture);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const std::size_t k = 2 + i % 5, m = 1 + i % 3;
    const auto fx = gen_fixture(m, k, i);
    std::vector<Matrix> inv;
    for (const auto& a : fx.a_list) inv.push_back(test_util::eigen_inverse(a));
    const auto d = random_simplex_point(rng, m);
    for (const auto& f : fx.f_table) worst = std::max(worst, max_abs_diff(recombine_raw(inv, d, fx.stacked(f)), f));
  }
  const double t = seconds_since(t0);
  report(1, "posterior recovery on 50 fixtures", worst < 1e-10 && t < 1.0,
         fmt("max abs error %.3g (< 1e-10), %.3f s (< 1 s)", worst, t));
}

// --- 2 ----------------------------------------------------------------------

std::vector<Matrix> random_blocks(Rng& rng, std::size_t m, std::size_t k) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < m; ++i) {
    Matrix a(k, k);
    for (double& x : a.flat()) x = rng.uniform(-1, 1);
    for (std::size_t j = 0; j < k; ++j) a(j, j) += 2.0;
    out.push_back(a);
  }
  return out;
}

Vector random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

void projector_oracle() {
  const auto t0 = Clock::now();
  Rng rng(41);
  double lsq = 0.0, idem = 0.0, orth = 0.0, annih = 0.0, pyth = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = 1 + rng.uniform_int(4);
    const auto k = 2 + rng.uniform_int(5);
    const auto basis = build_basis(random_blocks(rng, m, k), Inversion::exact());
    const auto& w = basis.basis();
    const auto p = random_vector(rng, m * k, -2, 2);
    const auto r = null_projection(basis, p);

    lsq = std::max(lsq, max_abs_diff(r, test_util::lsq_residual(w, p)));
    idem = std::max(idem, max_abs_diff(null_projection(basis, r), r));
    for (double x : matvec_t(w, r)) orth = std::max(orth, std::abs(x));
    for (double x : null_projection(basis, matvec(w, random_vector(rng, k, -2, 2))))
      annih = std::max(annih, std::abs(x));
    Vector q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = p[i] - r[i];
    pyth = std::max(pyth, std::abs(dot(p, p) - dot(r, r) - dot(q, q)));
  }
  const double t = seconds_since(t0);
  const double worst = std::max({lsq, idem, orth, annih, pyth});
  report(2, "projector vs least-squares oracle, 100 cases", worst < 1e-8 && t < 1.0,
         fmt("lsq %.2g idempotent %.2g orthogonal %.2g annihilate %.2g pythagoras %.2g (< 1e-8), %.3f s (< 1 s)", lsq,
             idem, orth, annih, pyth, t));
}

// --- 3 ----------------------------------------------------------------------

void subspace_membership() {
  Rng rng(43);
  double in_range = 0.0, off_range = 1.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const std::size_t k = 2 + i % 5, m = 2 + i % 2;
    const auto fx = gen_fixture(m, k, 100 + i);
    std::vector<Matrix> inv;
    for (const auto& a : fx.a_list) inv.push_back(test_util::eigen_inverse(a));
    const auto basis = build_basis(inv, Inversion::exact());
    std::vector<Vector> stacked;
    for (const auto& f : fx.f_table) stacked.push_back(fx.stacked(f));
    in_range = std::max(in_range, reg_loss(basis, stacked, Reduction::sum));

    // Add a component orthogonal to range(W), taken from the oracle residual.
    for (int j = 0; j < 5; ++j) {
      auto p = stacked[static_cast<std::size_t>(j) % stacked.size()];
      const auto perp = test_util::lsq_residual(basis.basis(), random_vector(rng, m * k, -1, 1));
      for (std::size_t t = 0; t < p.size(); ++t) p[t] += perp[t];
      off_range = std::min(off_range, reg_term(basis, p));
    }
  }
  report(3, "subspace membership of fixture vectors", in_range < 1e-8 && off_range > 0.0,
         fmt("max fixture reg %.3g (< 1e-8), min off-range reg %.3g (> 0)", in_range, off_range));
}

// --- 4 ----------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checks = 0;
  for (auto inversion : {Inversion::neumann(16), Inversion::exact()}) {
    for (auto variant : {InitVariant::identity_B_uniform_d, InitVariant::identity_B_learnable_d,
                         InitVariant::random_B_learnable_d, InitVariant::identity_B_fixed_d, InitVariant::linear_d}) {
      TrainConfig cfg;
      cfg.classes = 2;
      cfg.pseudo_labels = 2;
      cfg.embed = 4;
      cfg.lambda = 0.05;
      cfg.inversion = inversion;
      cfg.init_variant = variant;
      auto model = init_model(model_dims(cfg, 3), variant, 17);
      Rng rng(19);
      visit_tensors(model.params, [&](ParamGroup, const std::string&, std::span<double> t) {
        for (double& x : t) x += rng.uniform(-0.3, 0.3);
      });
      Batch batch;
      for (int i = 0; i < 8; ++i) {
        batch.x.push_back(random_vector(rng, 3, -2, 2));
        batch.y.push_back(i % 2);
      }
      for (const auto& [group, err] : grad_check(model, batch, cfg, 1e-5)) {
        worst = std::max(worst, err);
        ++checks;
      }
    }
  }
  const double t = seconds_since(t0);
  report(4, "analytic vs central-difference gradients, both inversion paths", worst < 1e-4 && t < 10.0,
         fmt("%zu group checks, max rel error %.3g (< 1e-4), %.2f s (< 10 s)", checks, worst, t));
}

// --- 5 ----------------------------------------------------------------------

double pairwise_auroc(const Vector& id, const Vector& ood) {
  double wins = 0, ties = 0;
  for (double a : id)
    for (double b : ood) {
      if (a > b) wins += 1;
      else if (a == b) ties += 1;
    }
  return (wins + 0.5 * ties) / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

void metric_oracles() {
  bool examples = fpr_at_tpr(Vector{-0.1, -0.2}, Vector{-5, -6}, 0.95) == 0.0 &&
                  fpr_at_tpr(Vector{-1, -2, -3}, Vector{-1, -2, -3}, 0.95) == 1.0 &&
                  fpr_at_tpr(Vector{-1, -2, -3, -4}, Vector{-2.5, -10}, 0.95) == 0.5 &&
                  auroc(Vector{3, 4}, Vector{1, 2}) == 1.0 && auroc(Vector{1, 2, 2}, Vector{2, 1, 2}) == 0.5 &&
                  auroc(Vector{3, 2}, Vector{1, 2.5}) == 0.75;
  Rng rng(47);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Vector id(1 + rng.uniform_int(60)), ood(1 + rng.uniform_int(60));
    const double shift = rng.uniform(-1, 2);
    for (double& x : id) x = std::round((rng.gaussian() + shift) * 4) / 4;
    for (double& x : ood) x = std::round(rng.gaussian() * 4) / 4;
    mismatches += auroc(id, ood) != pairwise_auroc(id, ood);
  }
  report(5, "metric examples and pairwise AUROC oracle", examples && mismatches == 0,
         fmt("hand examples %s, %d/200 pairwise mismatches", examples ? "exact" : "WRONG", mismatches));
}

// --- 6 ----------------------------------------------------------------------

// Independent of the selection logic: every distance is computed, then the
// whole list is sorted. Sums run in index order so the arithmetic is the same.
double full_sort_score(const std::vector<Vector>& train, const Vector& h, std::size_t k) {
  auto unit = [](const Vector& v) {
    double s = 0;
    for (double x : v) s += x * x;
    Vector u = v;
    for (double& x : u) x /= std::sqrt(s);
    return u;
  };
  const auto u = unit(h);
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto r = unit(train[i]);
    double s = 0;
    for (std::size_t j = 0; j < u.size(); ++j) s += (u[j] - r[j]) * (u[j] - r[j]);
    d.emplace_back(s, i);
  }
  std::sort(d.begin(), d.end());
  return -std::sqrt(d[k - 1].first);
}

void knn_oracle() {
  Rng rng(53);
  int mismatches = 0, checked = 0, pow2_breaks = 0;
  double any_scale_dev = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + rng.uniform_int(200);
    const auto l = 1 + rng.uniform_int(16);
    std::vector<Vector> train(n, Vector(l));
    for (auto& v : train)
      for (double& x : v) x = rng.gaussian();
    if (n > 2) train[1] = train[0];
    const auto index = build_index(train);
    Vector h(l);
    for (double& x : h) x = rng.gaussian();
    for (std::size_t k = 1; k <= n; k += 1 + n / 8) {
      const double s = knn_score(index, h, k);
      ++checked;
      mismatches += s != full_sort_score(train, h, k);
      for (double c : {0x1p-30, 0.125, 2.0, 0x1p40}) {
        Vector scaled = h;
        for (double& x : scaled) x *= c;
        pow2_breaks += std::bit_cast<std::uint64_t>(knn_score(index, scaled, k)) != std::bit_cast<std::uint64_t>(s);
      }
      Vector scaled = h;
      const double c = rng.uniform(1e-3, 1e3);
      for (double& x : scaled) x *= c;
      any_scale_dev = std::max(any_scale_dev, std::abs(knn_score(index, scaled, k) - s));
    }
  }
  report(6, "kNN full-sort oracle and scale invariance", mismatches == 0 && pow2_breaks == 0 && any_scale_dev < 1e-14,
         fmt("%d/%d full-sort mismatches, %d bit differences under power-of-two scaling, "
             "max deviation under arbitrary scaling %.2g",
             mismatches, checked, pow2_breaks, any_scale_dev));
}

// --- 7-10 -------------------------------------------------------------------

ExperimentConfig benchmark_config() {
  ExperimentConfig cfg;
  cfg.synth.classes = 4;
  cfg.synth.input_dim = 16;
  cfg.synth.n_per_class = 500;
  cfg.synth.seed = 7;
  cfg.train.classes = 4;
  cfg.train.pseudo_labels = 3;
  cfg.train.lambda = 0.05;
  cfg.train.epochs = 50;
  cfg.train.seed = 7;
  return cfg;
}

void benchmark_suite() {
  const auto cfg = benchmark_config();
  const auto data = gen_synthetic(cfg.synth);

  const auto t0 = Clock::now();
  const auto main_run = run_experiment(data, cfg);
  const double t = seconds_since(t0);
  const auto& ood = main_run.ood;
  report(7, "synthetic benchmark K=4 D=16 n=500 M=3 lambda=0.05 50 epochs seed 7",
         main_run.id_accuracy >= 0.95 && ood.auroc >= 0.95 && ood.fpr_at_tpr <= 0.25 && t < 120.0,
         fmt("ID acc %.4f (>= 0.95), AUROC %.4f (>= 0.95), FPR@95 %.4f (<= 0.25), %.1f s (< 120 s)",
             main_run.id_accuracy, ood.auroc, ood.fpr_at_tpr, t));

  const double reg_id = mean(main_run.id_reg), reg_ood = mean(main_run.ood_reg);
  report(8, "reg term separates OOD from ID", reg_ood > reg_id,
         fmt("mean reg OOD %.4g vs ID %.4g", reg_ood, reg_id));

  auto no_reg = cfg;
  no_reg.train.lambda = 0.0;
  const auto plain = run_experiment(data, no_reg);
  auto single = cfg;
  single.train.pseudo_labels = 1;
  const auto one_block = fit(data.train, single.train);
  double max_epoch_reg = 0.0;
  for (const auto& e : one_block.log.epochs) max_epoch_reg = std::max(max_epoch_reg, std::abs(e.reg));
  for (double r : sample_reg_terms(one_block.model, data.test_id, single.train.inversion))
    max_epoch_reg = std::max(max_epoch_reg, std::abs(r));
  report(9, "ablation trends", ood.fpr_at_tpr <= plain.ood.fpr_at_tpr && max_epoch_reg == 0.0,
         fmt("FPR@95 lambda=0.05 %.4f <= lambda=0 %.4f; M=1 max reg over %zu epochs %.3g (== 0)", ood.fpr_at_tpr,
             plain.ood.fpr_at_tpr, one_block.log.epochs.size(), max_epoch_reg));

  const auto first = encode_container(checkpoint_tensors(main_run.fit.model));
  const auto second = encode_container(checkpoint_tensors(fit(data.train, cfg.train).model));
  report(10, "checkpoint is byte-identical across reruns", first == second,
         fmt("%zu vs %zu bytes, %s", first.size(), second.size(), first == second ? "identical" : "differ"));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{posterior_recovery, projector_oracle, subspace_membership,
                                                    gradient_suite,     metric_oracles,   knn_oracle,
                                                    benchmark_suite};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      std::printf("criterion error: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("acceptance: %d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
