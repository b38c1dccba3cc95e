// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "demoseg/diffops.hpp"
#include "demoseg/params.hpp"

namespace demoseg {

/// Registers `<prefix>.weight` [cout,cin,k,k,k] and `<prefix>.bias`, plus
/// `<prefix>.norm.gamma/beta` when `norm` is set.
template <typename T>
void init_conv(ParameterStore<T>& params, const std::string& prefix, int cin, int cout, int k, double slope,
               bool norm);

/// conv -> instance norm -> leaky rectifier (norm/activation skipped when `norm_act` is false).
template <typename T>
Var<T> conv_block(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, int stride,
                  double slope, bool norm_act);

template <typename T>
void init_linear(ParameterStore<T>& params, const std::string& prefix, int in, int out, double slope);

template <typename T>
Var<T> linear_layer(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix);

}  // namespace demoseg
