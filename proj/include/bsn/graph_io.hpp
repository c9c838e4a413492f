#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "bsn/graph.hpp"

namespace bsn {

// Line-oriented text format, version 1:
//
//   bsn-graph 1
//   layer <id> <d0>x<d1>x... <none|relu>
//   edge <src> <dst> <Kind> in=<int> out=<int> k=<int> s=<int> f=<int> bias=<0|1>
//        slot=<name|-> fixed=<0|1> [madds=<real> params=<real>]
//   end
//
// Layers are written in topological order, edges sorted by (dst, src).
// '#' starts a comment; blank lines are ignored. madds/params, when present,
// override the analytic cost of the edge.
std::string serialize_graph(const SuperNetGraph& g);
SuperNetGraph parse_graph(std::string_view text);

// bsn-mask 1 followed by one "<src> <dst> <0|1>" line per edge. Edges not
// listed are 0.
std::string serialize_mask(const SuperNetGraph& g, const Mask& h);
Mask parse_mask(const SuperNetGraph& g, std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace bsn
