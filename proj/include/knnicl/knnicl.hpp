#pragma once

#include "knnicl/corpus.hpp"
#include "knnicl/datastore.hpp"
#include "knnicl/decode.hpp"
#include "knnicl/distribution.hpp"
#include "knnicl/error.hpp"
#include "knnicl/harness.hpp"
#include "knnicl/lm.hpp"
#include "knnicl/prompt.hpp"
#include "knnicl/selection.hpp"
#include "knnicl/synthetic.hpp"
#include "knnicl/textcore.hpp"
#include "knnicl/treebank.hpp"
