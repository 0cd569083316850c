#pragma once

#include "mcsr/io/checkpoint.hpp"
#include "mcsr/io/corpus.hpp"
#include "mcsr/io/image.hpp"
#include "mcsr/io/phantom.hpp"
