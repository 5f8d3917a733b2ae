#pragma once

#include "netaug/arch.hpp"
#include "netaug/autodiff.hpp"
#include "netaug/checkpoint.hpp"
#include "netaug/datasets.hpp"
#include "netaug/error.hpp"
#include "netaug/experiment.hpp"
#include "netaug/manifest.hpp"
#include "netaug/optimizer.hpp"
#include "netaug/random.hpp"
#include "netaug/supernet.hpp"
#include "netaug/tensor.hpp"
#include "netaug/trainer.hpp"
