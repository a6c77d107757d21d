// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "layerprobe/arch.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/params.hpp"
#include "layerprobe/tensor.hpp"

namespace lp {

enum class Mode { train, eval };

/// Logits [batch, K]. Eval mode reads batch-norm running statistics; train
/// mode normalizes with batch statistics and updates the running statistics
/// stored in `params`.
template <typename T>
BasicTensor<T> forward(const ArchSpec& arch, BasicParamSet<T>& params,
                       const BasicTensor<T>& inputs, Mode mode);

/// Eval-mode forward; never touches `params`.
template <typename T>
BasicTensor<T> forward(const ArchSpec& arch, const BasicParamSet<T>& params,
                       const BasicTensor<T>& inputs);

struct BackwardOptions {
  Mode mode = Mode::train;
  bool param_grads = true;
  bool input_grad = false;
  // Layers whose parameter gradients are not needed (left zero).
  const std::set<std::string, std::less<>>* skip_param_grads = nullptr;
};

template <typename T>
struct Gradients {
  T loss = 0;  // mean softmax cross-entropy over the batch
  BasicTensor<T> logits;
  BasicParamSet<T> params;  // trainable tensors only, same names as params
  std::optional<BasicTensor<T>> input;
  std::size_t correct = 0;  // argmax(logits) == label count
};

/// Forward in `options.mode`, then backpropagation of the mean cross-entropy.
/// Labels must lie in [0, K).
template <typename T>
Gradients<T> backward(const ArchSpec& arch, BasicParamSet<T>& params,
                      const BasicTensor<T>& inputs,
                      const std::vector<int>& labels,
                      const BackwardOptions& options = {});

/// Mean softmax cross-entropy and d(loss)/d(logits).
template <typename T>
T softmax_cross_entropy(const BasicTensor<T>& logits,
                        const std::vector<int>& labels,
                        BasicTensor<T>* dlogits);

/// Row argmax; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits);

/// Fraction of examples whose argmax prediction differs from the label.
double eval_error(const ArchSpec& arch, const ParamSet& params,
                  const Dataset& dataset, std::size_t batch_size = 500);

}  // namespace lp
