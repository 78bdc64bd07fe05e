#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "core_data.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "grf.hpp"
#include "inference.hpp"
#include "pde_gen.hpp"
#include "rng.hpp"
#include "trainer.hpp"
#include "unet.hpp"
