#include "bsn/graph_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace bsn {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string_view> content_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

long long parse_int(const std::string& s, int line_no) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected integer, got '" + s + "'");
  }
  return v;
}

double parse_real(const std::string& s, int line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected number, got '" + s + "'");
}

void expect_header(const std::vector<std::string_view>& lines, std::string_view magic) {
  if (lines.empty()) throw Error(Errc::ParseError, "empty input");
  const auto head = split_ws(lines[0]);
  if (head.size() != 2 || head[0] != magic) throw Error(Errc::ParseError, "missing '" + std::string(magic) + "' header");
  if (head[1] != "1") throw Error(Errc::ParseError, "unsupported " + std::string(magic) + " version " + head[1]);
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_graph(const SuperNetGraph& g) {
  std::ostringstream out;
  out << "bsn-graph 1\n";
  for (const auto& l : g.layers()) {
    out << "layer " << l.id << ' ' << shape_string(l.shape) << ' '
        << (l.activation == Activation::ReLU ? "relu" : "none") << '\n';
  }
  for (const auto& e : g.edges()) {
    const auto& m = e.module;
    out << "edge " << g.layer(e.src).id << ' ' << g.layer(e.dst).id << ' ' << module_kind_name(m.kind)
        << " in=" << m.in_channels << " out=" << m.out_channels << " k=" << m.kernel << " s=" << m.stride
        << " f=" << m.factor << " bias=" << (m.bias ? 1 : 0) << " slot=" << (m.slot.empty() ? "-" : m.slot)
        << " fixed=" << (e.fixed ? 1 : 0);
    if (e.cost_meta) out << " madds=" << format_real(e.cost_meta->mult_adds) << " params=" << format_real(e.cost_meta->params);
    out << '\n';
  }
  out << "end\n";
  return out.str();
}

SuperNetGraph parse_graph(std::string_view text) {
  const auto lines = content_lines(text);
  expect_header(lines, "bsn-graph");
  std::vector<LayerSpec> layers;
  std::vector<EdgeSpec> edges;
  bool ended = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int no = static_cast<int>(i + 1);
    const auto tok = split_ws(lines[i]);
    if (ended) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": content after 'end'");
    if (tok[0] == "end") {
      ended = true;
    } else if (tok[0] == "layer") {
      if (tok.size() != 4) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": layer needs id, shape, activation");
      LayerSpec l;
      l.id = static_cast<int>(parse_int(tok[1], no));
      std::size_t start = 0;
      while (start <= tok[2].size()) {
        std::size_t x = tok[2].find('x', start);
        if (x == std::string::npos) x = tok[2].size();
        l.shape.push_back(static_cast<int>(parse_int(tok[2].substr(start, x - start), no)));
        start = x + 1;
      }
      if (tok[3] == "relu") {
        l.activation = Activation::ReLU;
      } else if (tok[3] != "none") {
        throw Error(Errc::ParseError, "line " + std::to_string(no) + ": unknown activation '" + tok[3] + "'");
      }
      layers.push_back(std::move(l));
    } else if (tok[0] == "edge") {
      if (tok.size() < 4) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": edge needs src, dst, kind");
      EdgeSpec e;
      e.src = static_cast<int>(parse_int(tok[1], no));
      e.dst = static_cast<int>(parse_int(tok[2], no));
      const auto kind = parse_module_kind(tok[3]);
      if (!kind) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": unknown module kind '" + tok[3] + "'");
      e.module.kind = *kind;
      std::optional<double> madds, params;
      for (std::size_t t = 4; t < tok.size(); ++t) {
        const auto eq = tok[t].find('=');
        if (eq == std::string::npos) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": expected key=value");
        const std::string key = tok[t].substr(0, eq);
        const std::string value = tok[t].substr(eq + 1);
        if (key == "in") e.module.in_channels = static_cast<int>(parse_int(value, no));
        else if (key == "out") e.module.out_channels = static_cast<int>(parse_int(value, no));
        else if (key == "k") e.module.kernel = static_cast<int>(parse_int(value, no));
        else if (key == "s") e.module.stride = static_cast<int>(parse_int(value, no));
        else if (key == "f") e.module.factor = static_cast<int>(parse_int(value, no));
        else if (key == "bias") e.module.bias = parse_int(value, no) != 0;
        else if (key == "slot") e.module.slot = value == "-" ? "" : value;
        else if (key == "fixed") e.fixed = parse_int(value, no) != 0;
        else if (key == "madds") madds = parse_real(value, no);
        else if (key == "params") params = parse_real(value, no);
        else throw Error(Errc::ParseError, "line " + std::to_string(no) + ": unknown edge field '" + key + "'");
      }
      if (madds.has_value() != params.has_value()) {
        throw Error(Errc::ParseError, "line " + std::to_string(no) + ": madds and params must be given together");
      }
      if (madds) e.cost_meta = CostMeta{*madds, *params};
      edges.push_back(std::move(e));
    } else {
      throw Error(Errc::ParseError, "line " + std::to_string(no) + ": unknown record '" + tok[0] + "'");
    }
  }
  if (!ended) throw Error(Errc::ParseError, "missing 'end' record");
  return build_graph(std::move(layers), std::move(edges));
}

std::string serialize_mask(const SuperNetGraph& g, const Mask& h) {
  check_conforms(g, h);
  std::ostringstream out;
  out << "bsn-mask 1\n";
  for (int e = 0; e < g.num_edges(); ++e) {
    out << g.layer(g.edge(e).src).id << ' ' << g.layer(g.edge(e).dst).id << ' ' << (h[e] ? 1 : 0) << '\n';
  }
  return out.str();
}

Mask parse_mask(const SuperNetGraph& g, std::string_view text) {
  const auto lines = content_lines(text);
  expect_header(lines, "bsn-mask");
  Mask h = Mask::none(g);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int no = static_cast<int>(i + 1);
    const auto tok = split_ws(lines[i]);
    if (tok.size() != 3) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": expected '<src> <dst> <bit>'");
    const auto e = g.find_edge_by_id(static_cast<int>(parse_int(tok[0], no)), static_cast<int>(parse_int(tok[1], no)));
    if (!e) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": no such edge in the graph");
    const auto bit = parse_int(tok[2], no);
    if (bit != 0 && bit != 1) throw Error(Errc::ParseError, "line " + std::to_string(no) + ": bit must be 0 or 1");
    h.bits[*e] = static_cast<std::uint8_t>(bit);
  }
  return h;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << text;
}

}  // namespace bsn
