// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lodgs/errors.hpp"
#include "lodgs/core.hpp"
#include "lodgs/lod.hpp"
#include "lodgs/scene.hpp"
#include "lodgs/image.hpp"
#include "lodgs/parallel.hpp"
#include "lodgs/raster.hpp"
#include "lodgs/grad.hpp"
#include "lodgs/metrics.hpp"
#include "lodgs/dataset.hpp"
#include "lodgs/train.hpp"
#include "lodgs/io.hpp"
#include "lodgs/cli.hpp"
