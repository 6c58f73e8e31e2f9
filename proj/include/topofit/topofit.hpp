#pragma once

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/density.hpp"
#include "topofit/eval.hpp"
#include "topofit/gradcheck.hpp"
#include "topofit/image.hpp"
#include "topofit/losses.hpp"
#include "topofit/mesh.hpp"
#include "topofit/octree.hpp"
#include "topofit/params.hpp"
#include "topofit/renderer.hpp"
#include "topofit/scene_io.hpp"
#include "topofit/synth.hpp"
#include "topofit/threads.hpp"
#include "topofit/trainer.hpp"
#include "topofit/triplanes.hpp"
