#pragma once

// Umbrella header.
#include "hamshape/common.hpp"
#include "hamshape/kdtree.hpp"
#include "hamshape/geometry.hpp"
#include "hamshape/shapes.hpp"
#include "hamshape/basis.hpp"
#include "hamshape/energy.hpp"
#include "hamshape/dynamics.hpp"
#include "hamshape/optim.hpp"
#include "hamshape/metrics.hpp"
#include "hamshape/io.hpp"
#include "hamshape/pipeline.hpp"
#include "hamshape/verification.hpp"
