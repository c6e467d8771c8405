#ifndef REVFACE_REVFACE_HPP_
#define REVFACE_REVFACE_HPP_

#include "revface/anonymizers.hpp"
#include "revface/autoencoder.hpp"
#include "revface/dataset.hpp"
#include "revface/deanon.hpp"
#include "revface/filters.hpp"
#include "revface/harness.hpp"
#include "revface/image.hpp"
#include "revface/log.hpp"
#include "revface/metrics.hpp"
#include "revface/parallel.hpp"
#include "revface/pca.hpp"
#include "revface/png_io.hpp"
#include "revface/recognition.hpp"
#include "revface/rng.hpp"
#include "revface/synthetic.hpp"

#endif  // REVFACE_REVFACE_HPP_
