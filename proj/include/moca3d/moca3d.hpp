#pragma once

#include "moca3d/cuboid_iou.hpp"
#include "moca3d/dataset.hpp"
#include "moca3d/dense_fields.hpp"
#include "moca3d/error.hpp"
#include "moca3d/fit.hpp"
#include "moca3d/geometry.hpp"
#include "moca3d/gradcheck.hpp"
#include "moca3d/hungarian.hpp"
#include "moca3d/losses.hpp"
#include "moca3d/metrics.hpp"
#include "moca3d/rectify.hpp"
#include "moca3d/synthetic.hpp"
