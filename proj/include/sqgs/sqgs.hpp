#pragma once

#include "adam.hpp"
#include "camera.hpp"
#include "checkpoint.hpp"
#include "cluster.hpp"
#include "common.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "gradients.hpp"
#include "hybrid.hpp"
#include "image.hpp"
#include "image_io.hpp"
#include "kdtree.hpp"
#include "losses.hpp"
#include "optimize.hpp"
#include "rays.hpp"
#include "render.hpp"
#include "scene_io.hpp"
#include "sh.hpp"
#include "sq_core.hpp"
#include "synthetic.hpp"
