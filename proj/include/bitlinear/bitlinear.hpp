/*
Copyright 2026 The bitlinear Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include "bitlinear/autodiff.hpp"
#include "bitlinear/bench.hpp"
#include "bitlinear/bitlinear_layer.hpp"
#include "bitlinear/config.hpp"
#include "bitlinear/dataset.hpp"
#include "bitlinear/model.hpp"
#include "bitlinear/model_io.hpp"
#include "bitlinear/optimizer.hpp"
#include "bitlinear/quantizer.hpp"
#include "bitlinear/random.hpp"
#include "bitlinear/selftest.hpp"
#include "bitlinear/tensor.hpp"
#include "bitlinear/ternary_kernel.hpp"
#include "bitlinear/trainer.hpp"
