// SPDX-License-Identifier: Apache-2.0
//
// Temperature softmax and the divergences built on it. All reductions run in
// double with max-subtraction; inputs and probability outputs are f32.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ssb::numerics {

std::vector<float> softmax_t(std::span<const float> logits, double temperature);

// out[i] = log softmax(logits / T)[i]. Returns log-sum-exp of logits / T.
double log_softmax_t(std::span<const float> logits, double temperature,
                     std::span<double> out);

// KL(softmax(teacher/T) || softmax(student/T)); teacher is the reference.
double kl_from_logits(std::span<const float> teacher, std::span<const float> student,
                      double temperature);

// -log softmax(logits)[target]
double cross_entropy(std::span<const float> logits, std::size_t target);

}  // namespace ssb::numerics
