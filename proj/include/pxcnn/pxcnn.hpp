/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_PXCNN_HPP_
#define PXCNN_PXCNN_HPP_

#include "pxcnn/checkpoint.hpp"
#include "pxcnn/data.hpp"
#include "pxcnn/error.hpp"
#include "pxcnn/experiment.hpp"
#include "pxcnn/image.hpp"
#include "pxcnn/layers.hpp"
#include "pxcnn/metrics.hpp"
#include "pxcnn/model.hpp"
#include "pxcnn/random.hpp"
#include "pxcnn/report.hpp"
#include "pxcnn/tensor.hpp"

#endif  // PXCNN_PXCNN_HPP_
