#pragma once

#include "poisonlab/config.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/dual.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/eval.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/pipeline.hpp"
#include "poisonlab/poison.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/surgery.hpp"
#include "poisonlab/synth.hpp"
#include "poisonlab/trainers.hpp"
