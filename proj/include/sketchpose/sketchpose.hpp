#pragma once

#include "sketchpose/config.hpp"
#include "sketchpose/fitter.hpp"
#include "sketchpose/heatmap.hpp"
#include "sketchpose/io.hpp"
#include "sketchpose/losses.hpp"
#include "sketchpose/metrics.hpp"
#include "sketchpose/projection.hpp"
#include "sketchpose/regressor.hpp"
#include "sketchpose/render.hpp"
#include "sketchpose/rotation.hpp"
#include "sketchpose/skeleton.hpp"
#include "sketchpose/synth.hpp"
#include "sketchpose/types.hpp"
