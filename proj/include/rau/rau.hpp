#pragma once

#include "rau/checkpoint.hpp"
#include "rau/config.hpp"
#include "rau/corpus.hpp"
#include "rau/edit_matrix.hpp"
#include "rau/editor.hpp"
#include "rau/encoder.hpp"
#include "rau/errors.hpp"
#include "rau/labeler.hpp"
#include "rau/metrics.hpp"
#include "rau/model.hpp"
#include "rau/relation.hpp"
#include "rau/segmenter.hpp"
#include "rau/tensor.hpp"
#include "rau/trainer.hpp"
