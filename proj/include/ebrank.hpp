#ifndef EBRANK_HPP
#define EBRANK_HPP

#include "ebrank/distributions.hpp"
#include "ebrank/mixture.hpp"
#include "ebrank/npmle.hpp"
#include "ebrank/posterior.hpp"
#include "ebrank/selection.hpp"
#include "ebrank/simlab.hpp"
#include "ebrank/rankio.hpp"
#include "ebrank/io.hpp"

#endif
