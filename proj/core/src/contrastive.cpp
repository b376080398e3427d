#include "brainssl/contrastive.hpp"

#include <cmath>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

void check_projections(const torch::Tensor& z, double tau) {
  if (z.dim() != 2) throw InvalidArgument("projections must be a 2N x d matrix");
  if (z.size(0) < 2 || z.size(0) % 2 != 0) {
    throw InvalidArgument("NT-Xent needs 2N rows with N >= 1, got " + std::to_string(z.size(0)));
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("temperature must be > 0");
  if ((z.norm(2, 1) == 0).any().item<bool>()) {
    throw InvalidArgument("NT-Xent requires nonzero projections");
  }
}

torch::Tensor positive_index(std::int64_t n2, const torch::TensorOptions& opts) {
  const std::int64_t n = n2 / 2;
  return (torch::arange(n2, opts.dtype(torch::kLong)) + n) % n2;
}

// Saved state shared by forward and backward.
struct Forward {
  torch::Tensor u;        // row-normalised projections
  torch::Tensor norms;    // (2N, 1)
  torch::Tensor probs;    // softmax over l != k, zero diagonal
  torch::Tensor per_anchor;  // L_k
};

Forward forward_terms(const torch::Tensor& z, double tau) {
  Forward f;
  f.norms = z.norm(2, 1, /*keepdim=*/true);
  f.u = z / f.norms;
  const std::int64_t n2 = z.size(0);
  auto s = torch::mm(f.u, f.u.t()) / tau;
  auto self = torch::eye(n2, z.options().dtype(torch::kBool));
  s = s.masked_fill(self, -std::numeric_limits<double>::infinity());
  // Max-subtracted log-sum-exp over the 2N - 1 candidates of each anchor.
  const auto m = std::get<0>(s.max(1, /*keepdim=*/true));
  const auto e = torch::exp(s - m);
  const auto denom = e.sum(1, /*keepdim=*/true);
  f.probs = e / denom;
  const auto lse = (m + torch::log(denom)).squeeze(1);
  const auto pos = s.gather(1, positive_index(n2, z.options()).unsqueeze(1)).squeeze(1);
  f.per_anchor = lse - pos;
  return f;
}

// d(sum_k w_k L_k) / dz for per-anchor weights w.
torch::Tensor backward_terms(const Forward& f, const torch::Tensor& weights, double tau) {
  const std::int64_t n2 = f.u.size(0);
  auto g = f.probs.clone();
  const auto pos = positive_index(n2, f.u.options()).unsqueeze(1);
  g.scatter_add_(1, pos, -torch::ones({n2, 1}, f.u.options()));
  g = g * weights.unsqueeze(1);
  const auto du = torch::mm(g + g.t(), f.u) / tau;
  const auto radial = (f.u * du).sum(1, /*keepdim=*/true);
  return (du - f.u * radial) / f.norms;
}

class NtXentFunction : public torch::autograd::Function<NtXentFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& z, double tau,
                               const torch::Tensor& anchor_mask) {
    const Forward f = forward_terms(z, tau);
    const auto weights = anchor_mask.to(z.dtype()) / static_cast<double>(z.size(0));
    ctx->save_for_backward({f.u, f.norms, f.probs, weights});
    ctx->saved_data["tau"] = tau;
    return (f.per_anchor * weights).sum();
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    Forward f;
    f.u = saved[0];
    f.norms = saved[1];
    f.probs = saved[2];
    const double tau = ctx->saved_data["tau"].toDouble();
    auto grad = backward_terms(f, saved[3], tau) * grad_out[0];
    return {grad, torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine_sim: zero-norm input");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine_sim(const torch::Tensor& a, const torch::Tensor& b) {
  const auto x = a.to(torch::kFloat64).contiguous().flatten();
  const auto y = b.to(torch::kFloat64).contiguous().flatten();
  return cosine_sim(std::span<const double>(x.data_ptr<double>(), x.numel()),
                    std::span<const double>(y.data_ptr<double>(), y.numel()));
}

torch::Tensor nt_xent_partial(const torch::Tensor& z, double tau, const torch::Tensor& anchor_mask) {
  check_projections(z, tau);
  if (anchor_mask.dim() != 1 || anchor_mask.size(0) != z.size(0)) {
    throw InvalidArgument("anchor mask must have one entry per projection");
  }
  return NtXentFunction::apply(z, tau, anchor_mask.to(torch::kBool));
}

torch::Tensor nt_xent_loss(const torch::Tensor& z, double tau) {
  return nt_xent_partial(z, tau, torch::ones({z.size(0)}, torch::kBool));
}

torch::Tensor shard_anchor_mask(std::int64_t n_pairs, std::int64_t workers, std::int64_t worker) {
  if (workers < 1 || worker < 0 || worker >= workers) throw InvalidArgument("bad worker index");
  auto mask = torch::zeros({2 * n_pairs}, torch::kBool);
  const std::int64_t lo = worker * n_pairs / workers;
  const std::int64_t hi = (worker + 1) * n_pairs / workers;
  if (hi > lo) {
    mask.slice(0, lo, hi).fill_(true);
    mask.slice(0, n_pairs + lo, n_pairs + hi).fill_(true);
  }
  return mask;
}

NtXentValue nt_xent_value_and_grad(const torch::Tensor& z_in, double tau) {
  torch::NoGradGuard guard;
  const auto z = z_in.to(torch::kFloat64).contiguous();
  check_projections(z, tau);
  const Forward f = forward_terms(z, tau);
  const auto weights = torch::full({z.size(0)}, 1.0 / static_cast<double>(z.size(0)), z.options());
  return {(f.per_anchor * weights).sum().item<double>(), backward_terms(f, weights, tau)};
}

double nt_xent_grad_check(const torch::Tensor& z_in, double tau, double step, double floor) {
  const auto z = z_in.to(torch::kFloat64).contiguous().clone();
  const NtXentValue analytic = nt_xent_value_and_grad(z, tau);
  auto* data = z.data_ptr<double>();
  const auto* grad = analytic.grad.contiguous().data_ptr<double>();
  double worst = 0.0;
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    const double orig = data[i];
    data[i] = orig + step;
    const double up = nt_xent_value_and_grad(z, tau).loss;
    data[i] = orig - step;
    const double down = nt_xent_value_and_grad(z, tau).loss;
    data[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(grad[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(grad[i] - fd) / scale);
  }
  return worst;
}

}  // namespace brainssl
