#pragma once

#include <cstdint>
#include <span>

#include <torch/torch.h>

namespace brainssl {

/// z_a . z_b / (|z_a| |z_b|). Throws InvalidArgument on a zero-norm input or
/// a length mismatch.
double cosine_sim(std::span<const double> a, std::span<const double> b);
double cosine_sim(const torch::Tensor& a, const torch::Tensor& b);

/// NT-Xent over a batch of 2N projections laid out as [view a of samples
/// 0..N-1; view b of samples 0..N-1], so row k pairs with row (k + N) mod 2N.
/// Each anchor k contributes
///   L_k = -log( exp(s_kp / tau) / sum_{l != k} exp(s_kl / tau) )
/// with cosine similarities s, and the loss is the mean of L_k over all 2N
/// anchors, which equals averaging (L_ij + L_ji) / 2 over the N pairs.
/// The backward pass is analytic.
torch::Tensor nt_xent_loss(const torch::Tensor& z, double tau);

/// Contribution of a subset of anchors: sum_{k in anchors} L_k / 2N. Summing
/// this over a partition of the anchors reproduces nt_xent_loss; this is how
/// a data-parallel worker evaluates its share while still seeing every
/// projection as a negative.
torch::Tensor nt_xent_partial(const torch::Tensor& z, double tau, const torch::Tensor& anchor_mask);

/// Anchor mask for worker `worker` of `workers` equal shards of N samples.
/// The worker owns samples [worker * N / workers, (worker + 1) * N / workers)
/// and therefore both of their views.
torch::Tensor shard_anchor_mask(std::int64_t n_pairs, std::int64_t workers, std::int64_t worker);

struct NtXentValue {
  double loss = 0.0;
  torch::Tensor grad;  // d loss / d z, same shape as z
};

/// Loss and analytic gradient in float64 without going through autograd.
NtXentValue nt_xent_value_and_grad(const torch::Tensor& z, double tau);

/// Largest relative error between the analytic gradient and central finite
/// differences with step `step`, evaluated in float64. Entries are compared
/// as |a - f| / max(|a|, |f|, floor) so that vanishing gradients do not blow
/// up the ratio.
double nt_xent_grad_check(const torch::Tensor& z, double tau, double step = 1e-5,
                          double floor = 1e-6);

}  // namespace brainssl
