#pragma once

#include "ovlens/analogy.hpp"
#include "ovlens/error.hpp"
#include "ovlens/lens.hpp"
#include "ovlens/matrix.hpp"
#include "ovlens/model_store.hpp"
#include "ovlens/report.hpp"
#include "ovlens/svd.hpp"
#include "ovlens/tensor_file.hpp"
#include "ovlens/tokenizer.hpp"
#include "ovlens/toy.hpp"
#include "ovlens/transformer.hpp"
