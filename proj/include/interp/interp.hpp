#pragma once

#include "interp/error.hpp"
#include "interp/interventions.hpp"
#include "interp/kernels.hpp"
#include "interp/model.hpp"
#include "interp/model_io.hpp"
#include "interp/module_tree.hpp"
#include "interp/prompts.hpp"
#include "interp/rename.hpp"
#include "interp/rng.hpp"
#include "interp/tensor.hpp"
#include "interp/tokenizer.hpp"
#include "interp/trace.hpp"
#include "interp/validation.hpp"
