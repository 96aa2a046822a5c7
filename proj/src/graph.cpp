#include "qaoa2/graph.hpp"

#include "qaoa2/log.hpp"
#include "qaoa2/rng.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace qaoa2 {

WeightedGraph::WeightedGraph(int num_nodes, std::vector<Edge> edges) : num_nodes_(num_nodes) {
  if (num_nodes < 1) throw std::invalid_argument("graph must have at least one node");
  adjacency_.resize(num_nodes);
  std::set<std::pair<int, int>> seen;
  for (Edge e : edges) {
    if (e.u < 0 || e.v < 0 || e.u >= num_nodes || e.v >= num_nodes) {
      throw std::invalid_argument("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                                  ") out of range");
    }
    if (e.u == e.v) throw std::invalid_argument("self loop on node " + std::to_string(e.u));
    if (!std::isfinite(e.w)) throw std::invalid_argument("non-finite edge weight");
    if (e.u > e.v) std::swap(e.u, e.v);
    if (!seen.insert({e.u, e.v}).second) {
      throw std::invalid_argument("duplicate edge (" + std::to_string(e.u) + "," +
                                  std::to_string(e.v) + ")");
    }
    if (e.w == 0.0) continue;
    edges_.push_back(e);
    adjacency_[e.u].emplace_back(e.v, e.w);
    adjacency_[e.v].emplace_back(e.u, e.w);
  }
  for (auto& row : adjacency_) std::sort(row.begin(), row.end());
}

Eigen::MatrixXd WeightedGraph::adjacency_matrix() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_nodes_, num_nodes_);
  for (const Edge& e : edges_) {
    a(e.u, e.v) = e.w;
    a(e.v, e.u) = e.w;
  }
  return a;
}

double WeightedGraph::positive_weight() const {
  double s = 0.0;
  for (const Edge& e : edges_) s += std::max(e.w, 0.0);
  return s;
}

double WeightedGraph::negative_weight() const {
  double s = 0.0;
  for (const Edge& e : edges_) s += std::min(e.w, 0.0);
  return s;
}

double WeightedGraph::total_weight() const {
  double s = 0.0;
  for (const Edge& e : edges_) s += e.w;
  return s;
}

double WeightedGraph::max_abs_weight() const {
  double m = 0.0;
  for (const Edge& e : edges_) m = std::max(m, std::abs(e.w));
  return m;
}

double QuboInstance::evaluate(const Eigen::VectorXi& x) const {
  Eigen::VectorXd xd = x.cast<double>();
  return xd.dot(Q * xd) + c.dot(xd);
}

ParseError::ParseError(const std::string& path, int line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

InstanceFormat parse_format(const std::string& name) {
  if (name == "edge-list" || name == "edgelist" || name == "maxcut") return InstanceFormat::EdgeList;
  if (name == "qubo") return InstanceFormat::Qubo;
  throw std::invalid_argument("unknown instance format '" + name + "'");
}

namespace {

struct LineReader {
  std::istream& in;
  std::string source;
  int line_no = 0;

  // Next non-blank, non-comment line split into tokens; false at EOF.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      tokens.clear();
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, line_no, what); }

  long long to_int(const std::string& tok, const char* what) const {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail(std::string("expected integer ") + what + ", got '" + tok + "'");
    }
    return v;
  }

  double to_real(const std::string& tok, const char* what) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
      fail(std::string("expected real ") + what + ", got '" + tok + "'");
    }
    return v;
  }
};

}  // namespace

WeightedGraph parse_edge_list(std::istream& in, const std::string& source) {
  LineReader reader{in, source};
  std::vector<std::string> tok;
  if (!reader.next(tok)) reader.fail("empty file, expected header 'N M'");
  if (tok.size() != 2) reader.fail("malformed header, expected 'N M'");
  const long long n = reader.to_int(tok[0], "node count");
  const long long m = reader.to_int(tok[1], "edge count");
  if (n < 1) reader.fail("node count must be positive");
  if (m < 0) reader.fail("edge count must be non-negative");

  std::vector<Edge> edges;
  std::set<std::pair<int, int>> seen;
  for (long long i = 0; i < m; ++i) {
    if (!reader.next(tok)) {
      reader.fail("header announces " + std::to_string(m) + " edges, found " + std::to_string(i));
    }
    if (tok.size() != 3) reader.fail("expected 'u v w'");
    const long long u = reader.to_int(tok[0], "node id");
    const long long v = reader.to_int(tok[1], "node id");
    const double w = reader.to_real(tok[2], "weight");
    if (u < 1 || v < 1 || u > n || v > n) reader.fail("node id out of range 1.." + std::to_string(n));
    if (u == v) reader.fail("self loop on node " + std::to_string(u));
    const std::pair<int, int> key = std::minmax(static_cast<int>(u - 1), static_cast<int>(v - 1));
    if (!seen.insert(key).second) {
      reader.fail("duplicate edge " + std::to_string(u) + " " + std::to_string(v));
    }
    edges.push_back({key.first, key.second, w});
  }
  if (reader.next(tok)) reader.fail("trailing data after " + std::to_string(m) + " edges");
  return WeightedGraph(static_cast<int>(n), std::move(edges));
}

QuboInstance parse_qubo(std::istream& in, const std::string& source) {
  LineReader reader{in, source};
  std::vector<std::string> tok;
  if (!reader.next(tok)) reader.fail("empty file, expected header 'n'");
  if (tok.empty() || tok.size() > 2) reader.fail("malformed header, expected 'n' or 'n m'");
  const long long n = reader.to_int(tok[0], "variable count");
  if (n < 1) reader.fail("variable count must be positive");
  long long expected = -1;
  if (tok.size() == 2) {
    expected = reader.to_int(tok[1], "entry count");
    if (expected < 0) reader.fail("entry count must be non-negative");
  }

  QuboInstance q;
  q.n = static_cast<int>(n);
  q.Q = Eigen::MatrixXd::Zero(n, n);
  q.c = Eigen::VectorXd::Zero(n);
  long long count = 0;
  while (reader.next(tok)) {
    if (tok.size() != 3) reader.fail("expected 'i j q'");
    const long long i = reader.to_int(tok[0], "index");
    const long long j = reader.to_int(tok[1], "index");
    const double v = reader.to_real(tok[2], "coefficient");
    if (i < 1 || j < 1 || i > n || j > n) reader.fail("index out of range 1.." + std::to_string(n));
    if (i == j) {
      q.c(i - 1) += v;
    } else {
      q.Q(i - 1, j - 1) += v;
    }
    ++count;
  }
  if (expected >= 0 && count != expected) {
    reader.fail("header announces " + std::to_string(expected) + " entries, found " +
                std::to_string(count));
  }
  q.Q = 0.5 * (q.Q + q.Q.transpose()).eval();
  return q;
}

std::variant<WeightedGraph, QuboInstance> parse_instance(const std::filesystem::path& path,
                                                         InstanceFormat format) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  if (format == InstanceFormat::EdgeList) return parse_edge_list(in, path.string());
  return parse_qubo(in, path.string());
}

WeightedGraph load_maxcut_graph(const std::filesystem::path& path, InstanceFormat format) {
  auto parsed = parse_instance(path, format);
  if (auto* g = std::get_if<WeightedGraph>(&parsed)) return std::move(*g);
  return qubo_to_maxcut(std::get<QuboInstance>(parsed)).graph;
}

void write_edge_list(std::ostream& out, const WeightedGraph& g) {
  out << g.num_nodes() << ' ' << g.num_edges() << '\n';
  out.precision(17);
  for (const Edge& e : g.edges()) out << e.u + 1 << ' ' << e.v + 1 << ' ' << e.w << '\n';
}

MaxCutReduction qubo_to_maxcut(const QuboInstance& q) {
  // f = K + sum_{i<j} J_ij z_i z_j + sum_i h_i z_i with J_ij = Q_ij / 2,
  // h_i = -(c_i + sum_{j != i} Q_ij) / 2, K = sum_{i<j} Q_ij / 2 + sum_i c_i / 2.
  // Coupling J to a cut weight w = 2J gives f = K + W/2 - cut, W = sum w.
  const int n = q.n;
  std::vector<Edge> edges;
  double constant = 0.5 * q.c.sum();
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      row += q.Q(i, j);
      if (j > i) {
        constant += 0.5 * q.Q(i, j);
        edges.push_back({i + 1, j + 1, q.Q(i, j)});
      }
    }
    edges.push_back({0, i + 1, -(q.c(i) + row)});
  }
  MaxCutReduction r;
  r.graph = WeightedGraph(n + 1, std::move(edges));
  r.offset = constant + 0.5 * r.graph.total_weight();
  return r;
}

SpinVector embed_qubo_assignment(const Eigen::VectorXi& x) {
  SpinVector z(x.size() + 1);
  z(0) = 1;
  for (Eigen::Index i = 0; i < x.size(); ++i) z(i + 1) = 1 - 2 * x(i);
  return z;
}

WeightedGraph normalize_edge_weights(const WeightedGraph& g) {
  const double m = g.max_abs_weight();
  if (m == 0.0) throw std::invalid_argument("cannot normalize a graph without nonzero weights");
  std::vector<Edge> edges = g.edges();
  for (Edge& e : edges) e.w /= m;
  return WeightedGraph(g.num_nodes(), std::move(edges));
}

WeightedGraph scale_edge_weights(const WeightedGraph& g, double factor) {
  std::vector<Edge> edges = g.edges();
  for (Edge& e : edges) e.w *= factor;
  return WeightedGraph(g.num_nodes(), std::move(edges));
}

bool is_spin_vector(const SpinVector& z) {
  return (z.array() == 1 || z.array() == -1).all();
}

double performance_ratio(double cut, double opt, double neg) {
  const double denom = opt - neg;
  if (!(denom > 0.0)) {
    throw std::invalid_argument("performance ratio undefined: OPT - Neg = " + std::to_string(denom));
  }
  if (cut > opt) {
    warn("cut " + std::to_string(cut) + " exceeds best-known value " + std::to_string(opt));
  }
  return (cut - neg) / denom;
}

BruteForceResult brute_force_maxcut(const WeightedGraph& g, int max_nodes) {
  const int n = g.num_nodes();
  if (n > max_nodes) {
    throw std::invalid_argument("brute force limited to " + std::to_string(max_nodes) + " nodes");
  }
  SpinVector z = SpinVector::Ones(n);
  BruteForceResult best{0.0, z};
  double cut = 0.0;
  // Gray code over nodes 1..n-1; flipping node v changes the cut by
  // sum_u w_uv z_u z_v (uncut edges become cut and vice versa).
  const std::uint64_t states = n > 1 ? (std::uint64_t{1} << (n - 1)) : 1;
  for (std::uint64_t i = 1; i < states; ++i) {
    const int v = 1 + std::countr_zero(i);
    double delta = 0.0;
    for (auto [u, w] : g.neighbors(v)) delta += w * z(u) * z(v);
    z(v) = -z(v);
    cut += delta;
    if (cut > best.value) {
      best.value = cut;
      best.spins = z;
    }
  }
  // Re-evaluate the winner exactly to shed accumulated rounding.
  best.value = cut_value(g, best.spins);
  return best;
}

BestKnownTable BestKnownTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return parse(in, path.string());
}

BestKnownTable BestKnownTable::parse(std::istream& in, const std::string& source) {
  BestKnownTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(source, line_no, "expected 'name,value'");
    std::string name = line.substr(0, comma);
    std::string value = line.substr(comma + 1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(v)) {
      if (line_no == 1) continue;  // header row
      throw ParseError(source, line_no, "non-numeric optimum '" + value + "'");
    }
    table.values_[name] = v;
  }
  return table;
}

void BestKnownTable::set(const std::string& name, double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("best-known value must be finite");
  values_[name] = value;
}

bool BestKnownTable::contains(const std::string& name) const { return values_.count(name) > 0; }

double BestKnownTable::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("no best-known value for '" + name + "'");
  return it->second;
}

double optimum_value(const WeightedGraph& g, const std::string& name, const BestKnownTable* table) {
  if (g.num_nodes() <= 20) return brute_force_maxcut(g, 20).value;
  if (table == nullptr || !table->contains(name)) {
    throw std::out_of_range("no best-known value for '" + name + "' and N = " +
                            std::to_string(g.num_nodes()) + " is too large for brute force");
  }
  return table->at(name);
}

std::string instance_name(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  auto dot = name.rfind('.');
  if (dot != std::string::npos && dot + 1 < name.size()) {
    const std::string ext = name.substr(dot + 1);
    if (std::all_of(ext.begin(), ext.end(), [](unsigned char ch) { return std::isalpha(ch); })) {
      name.erase(dot);
    }
  }
  return name;
}

std::uint64_t graph_hash(const WeightedGraph& g) {
  std::ostringstream ss;
  write_edge_list(ss, g);
  return fnv1a(ss.str());
}

}  // namespace qaoa2
