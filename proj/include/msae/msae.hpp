#pragma once

#include "msae/checkpoint.hpp"
#include "msae/datagen.hpp"
#include "msae/error.hpp"
#include "msae/io.hpp"
#include "msae/masking.hpp"
#include "msae/model/config.hpp"
#include "msae/model/layers.hpp"
#include "msae/model/msae.hpp"
#include "msae/model/params.hpp"
#include "msae/render.hpp"
#include "msae/rng.hpp"
#include "msae/skeleton.hpp"
#include "msae/train.hpp"
