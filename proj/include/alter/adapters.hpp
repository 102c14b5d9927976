// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alter/entropy.hpp"
#include "alter/model.hpp"
#include "alter/numkit.hpp"

namespace alter {

// Entropy-adaptive router over the forgetting experts. The routing signal is
// the scalar deformed entropy of a position; the temperature switches from
// sharp (near-argmax) to soft when the signal crosses route_threshold.
struct GateNet {
  numkit::Tensor w_g;  // n_experts x 1, learnable
  double tau_high = 0.8;
  double tau_low = 0.01;
};

// softmax(w_g * sq / tau) with tau chosen by the threshold. Sums to 1
// within 1e-12.
std::vector<double> gate_weights(const GateNet& gate, double sq_value,
                                 double route_threshold);

// Differentiable batch form for gate training: row t of the result is
// softmax over experts of w_g * sq_over_tau[t], where sq_over_tau already
// folds in each row's temperature. Shape T x n_experts.
numkit::Tensor gate_rows(const GateNet& gate, const numkit::Tensor& sq_over_tau);

// One shared down-projection A serving several up-projection experts: a
// retention expert reinforcing kept knowledge and one forgetting expert per
// subdomain, plus learnable per-expert mixing scalars and the gate.
struct AsymAdapterSet {
  std::string injection_point;  // projection the delta attaches to
  int rank = 8;
  numkit::Tensor a;                    // rank x k_in
  numkit::Tensor b_r;                  // d_out x rank
  std::vector<numkit::Tensor> b_f;     // one d_out x rank matrix per expert
  std::vector<numkit::Tensor> omega;   // per-expert 1x1 scalars, start at 1
  GateNet gate;
  EntropyConfig entropy;

  int n_experts() const { return static_cast<int>(b_f.size()); }
  size_t trainable_param_count() const;
  void set_trainable(bool on);

  // Cheap copy where every parameter group except the selected one is
  // replaced by a detached constant, so a loss built on the copy can only
  // send gradients where the caller intends.
  enum class Live { kA, kBr, kExpert };
  AsymAdapterSet isolate(Live which, int expert = -1) const;

  // (b_r + sum_d omega_d b_f^d), the composed expert-side factor.
  numkit::Tensor composed_b() const;
  // Effective weight delta (b_r + sum_d omega_d b_f^d) A, shape d_out x k_in.
  numkit::Tensor compose_delta_w() const;
};

// Shared matrix init: i.i.d. normal with fan-in variance 2/k.
numkit::Tensor init_shared_a(int rank, int k_in, uint64_t seed);

// Expert init: eps * (centroid / ||centroid||) in the first column, zeros
// elsewhere, so the Frobenius norm is exactly eps. A zero centroid falls
// back to an all-zeros matrix and logs a note.
numkit::Tensor init_expert_b(const numkit::Tensor& centroid, int rank,
                             double eps);

// Builds the adapter set for one injection point of the model. Each forget
// centroid seeds one expert; sizes come from the projection's weight.
AsymAdapterSet init_adapters(const BaseModel& model,
                             const std::string& injection_point, int rank,
                             std::span<const numkit::Tensor> forget_centroids,
                             const numkit::Tensor& retain_centroid, double eps,
                             uint64_t seed, const EntropyConfig& entropy);

// delta(x) = b_r A x + sum_d omega_d b_f^d A x for the given handles.
numkit::Tensor train_delta(const numkit::Tensor& x_in, const numkit::Tensor& a,
                           const numkit::Tensor& b_r,
                           std::span<const numkit::Tensor> b_f,
                           std::span<const numkit::Tensor> omega);

// Hook computing the training composition at the set's injection point.
AdapterHook train_hook(const AsymAdapterSet& set);

// Hook computing the inference composition, routed per row by the given
// entropy values: rows above route_threshold blend the retention expert
// with the gate's top three forgetting experts; rows at or below it use
// only the argmax expert (ties to the lowest index). Fewer than three
// experts means the high branch uses them all.
AdapterHook infer_hook(const AsymAdapterSet& set, std::vector<double> sq_per_row);

// Adapter checkpoint round trip; optionally embeds the merged delta for
// outside inspection (ignored on load).
void save_adapters(const AsymAdapterSet& set, const std::string& path,
                   bool include_delta_w = false);
AsymAdapterSet load_adapters(const std::string& path);

}  // namespace alter
