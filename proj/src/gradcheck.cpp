#include "tdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"

namespace tdn {

namespace {

ClipBatch random_batch(const ModelSpec& spec, int batch, std::mt19937_64& rng) {
  const int T = spec.segments, H = spec.input_size, W = spec.input_size;
  std::uniform_real_distribution<double> upix(0.0, 1.0);
  std::vector<double> centers(static_cast<std::size_t>(batch) * T * 3 * H * W);
  std::vector<double> neighbors(static_cast<std::size_t>(batch) * T * 4 * 3 * H * W);
  for (auto& v : centers) v = upix(rng);
  for (auto& v : neighbors) v = upix(rng);
  ClipBatch cb;
  cb.center_frames = Tensor::from({batch, T, 3, H, W}, std::move(centers));
  cb.neighbor_frames = Tensor::from({batch, T, 4, 3, H, W}, std::move(neighbors));
  cb.labels.resize(static_cast<std::size_t>(batch));
  std::uniform_int_distribution<int> ulab(0, spec.classes - 1);
  for (auto& l : cb.labels) l = ulab(rng);
  return cb;
}

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

}  // namespace

GradCheckReport gradcheck_model(const ModelSpec& spec, std::uint64_t seed,
                                std::int64_t samples_per_tensor, double h, double tol) {
  TDN_REQUIRE(h > 0 && tol > 0, "gradcheck: h and tol must be positive");
  std::mt19937_64 rng(derive_seed(seed, 0x6C));
  TdnModel model(spec, derive_seed(seed, 0x6D));
  ClipBatch batch = random_batch(spec, 2, rng);

  // Jitter every parameter so zero- and delta-initialized tensors sit at a
  // generic point of the loss surface.
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (const auto& [name, p] : model.params().entries()) {
    Tensor t = p;
    for (auto& v : t.values_mut()) v += jitter(rng);
  }

  auto loss_value = [&]() {
    NoGradGuard no_grad;
    Tensor logits = model.forward(batch);
    return softmax_cross_entropy(logits, batch.labels).scalar();
  };

  model.params().zero_grads();
  {
    Tensor logits = model.forward(batch);
    Tensor loss = softmax_cross_entropy(logits, batch.labels);
    loss.backward();
  }

  GradCheckReport report;
  report.tol = tol;
  for (const auto& [name, p] : model.params().entries()) {
    Tensor t = p;
    const std::int64_t n = t.size();
    std::vector<std::int64_t> indices;
    if (samples_per_tensor <= 0 || samples_per_tensor >= n) {
      indices.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
    } else {
      std::mt19937_64 pick_rng(derive_seed(seed, 0x91, fnv1a(name)));
      std::uniform_int_distribution<std::int64_t> upick(0, n - 1);
      for (std::int64_t i = 0; i < samples_per_tensor; ++i) indices.push_back(upick(pick_rng));
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    }

    GradCheckRow row;
    row.name = name;
    row.checked = static_cast<std::int64_t>(indices.size());
    const auto analytic = t.grad();
    auto vals = t.values_mut();
    for (std::int64_t idx : indices) {
      const double saved = vals[static_cast<std::size_t>(idx)];
      auto fd_at = [&](double step) {
        vals[static_cast<std::size_t>(idx)] = saved + step;
        const double lp = loss_value();
        vals[static_cast<std::size_t>(idx)] = saved - step;
        const double lm = loss_value();
        vals[static_cast<std::size_t>(idx)] = saved;
        return (lp - lm) / (2.0 * step);
      };
      double err = rel_err(fd_at(h), analytic[static_cast<std::size_t>(idx)]);
      if (err >= tol) err = std::min(err, rel_err(fd_at(h / 10.0), analytic[static_cast<std::size_t>(idx)]));
      row.max_rel_err = std::max(row.max_rel_err, err);
    }
    report.worst = std::max(report.worst, row.max_rel_err);
    report.rows.push_back(std::move(row));
  }
  report.pass = report.worst < tol;
  return report;
}

std::string format_gradcheck_table(const GradCheckReport& report) {
  std::size_t name_w = 10;
  for (const auto& r : report.rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "parameter" << std::right
     << std::setw(10) << "checked" << std::setw(14) << "max_rel_err"
     << "  status\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::right
       << std::setw(10) << r.checked << std::setw(14) << std::scientific << std::setprecision(3)
       << r.max_rel_err << std::defaultfloat << "  "
       << (r.max_rel_err < report.tol ? "ok" : "FAIL") << "\n";
  }
  os << "\nworst: " << std::scientific << std::setprecision(3) << report.worst << std::defaultfloat
     << "  tolerance: " << report.tol << "  => " << (report.pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

}  // namespace tdn
