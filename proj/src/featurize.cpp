#include "cqa/featurize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "cqa/errors.hpp"

namespace cqa {

namespace {

struct NodeView {
  const ResidueRecord* res;
  std::int32_t chain;  // chain ordinal
  std::int32_t seq;    // per-chain ordinal
};

std::vector<NodeView> flatten(const ComplexStructure& s) {
  std::vector<NodeView> nodes;
  nodes.reserve(static_cast<std::size_t>(s.total_residues()));
  for (std::size_t ci = 0; ci < s.chains.size(); ++ci)
    for (const ResidueRecord& r : s.chains[ci].residues)
      nodes.push_back(NodeView{&r, static_cast<std::int32_t>(ci), r.seq_index});
  return nodes;
}

}  // namespace

EdgeList build_knn_graph(const ComplexStructure& s, int k) {
  const std::vector<NodeView> nodes = flatten(s);
  const std::int32_t n = static_cast<std::int32_t>(nodes.size());
  if (n < 2) throw EmptyStructure("k-NN graph needs at least 2 residues");
  const int k_eff = std::min<int>(k, n - 1);

  EdgeList edges;
  edges.src.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(k_eff));
  edges.dst.reserve(edges.src.capacity());

  std::vector<std::int32_t> order;
  for (std::int32_t i = 0; i < n; ++i) {
    order.clear();
    for (std::int32_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    const Vec3 pi = *nodes[static_cast<std::size_t>(i)].res->ca;
    std::partial_sort(order.begin(), order.begin() + k_eff, order.end(),
                      [&](std::int32_t a, std::int32_t b) {
                        const double da = distance_sq(pi, *nodes[static_cast<std::size_t>(a)].res->ca);
                        const double db = distance_sq(pi, *nodes[static_cast<std::size_t>(b)].res->ca);
                        if (da != db) return da < db;
                        const NodeView& na = nodes[static_cast<std::size_t>(a)];
                        const NodeView& nb = nodes[static_cast<std::size_t>(b)];
                        if (na.chain != nb.chain) return na.chain < nb.chain;
                        return na.seq < nb.seq;
                      });
    for (int t = 0; t < k_eff; ++t) {
      edges.src.push_back(order[static_cast<std::size_t>(t)]);
      edges.dst.push_back(i);
    }
  }
  return edges;
}

double normalize_angle(double theta_degrees) { return (theta_degrees + 180.0) / 360.0; }

Dihedrals compute_dihedrals(const ComplexStructure& s) {
  Dihedrals out;
  for (const Chain& chain : s.chains) {
    const auto& res = chain.residues;
    const std::size_t n = res.size();
    // Carbonyl carbon per residue: parsed when present, otherwise placed
    // 1.52 A from CA toward the next residue's N.
    std::vector<std::optional<Vec3>> cprime(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (res[i].c.has_value()) {
        cprime[i] = res[i].c;
      } else if (i + 1 < n && res[i + 1].n.has_value() && res[i].ca.has_value()) {
        const Vec3 ca = *res[i].ca;
        const Vec3 dir = (*res[i + 1].n - ca).normalized();
        if (dir.norm() > 0) cprime[i] = ca + dir * 1.52;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double phi = 0.0, psi = 0.0;
      if (i > 0 && cprime[i - 1].has_value() && res[i].n.has_value() && res[i].ca.has_value() &&
          cprime[i].has_value())
        phi = dihedral_deg(*cprime[i - 1], *res[i].n, *res[i].ca, *cprime[i]);
      if (i + 1 < n && res[i].n.has_value() && res[i].ca.has_value() && cprime[i].has_value() &&
          res[i + 1].n.has_value())
        psi = dihedral_deg(*res[i].n, *res[i].ca, *cprime[i], *res[i + 1].n);
      if (!std::isfinite(phi)) phi = 0.0;
      if (!std::isfinite(psi)) psi = 0.0;
      out.phi.push_back(phi);
      out.psi.push_back(psi);
    }
  }
  return out;
}

SecondaryStructure classify_secondary_structure(double phi_deg, double psi_deg) {
  // +180 and -180 are the same torsion; classify on the [-180, 180) branch.
  const double phi = phi_deg >= 180.0 ? phi_deg - 360.0 : phi_deg;
  const double psi = psi_deg >= 180.0 ? psi_deg - 360.0 : psi_deg;
  if (phi >= -100.0 && phi <= -30.0 && psi >= -80.0 && psi <= -5.0)
    return SecondaryStructure::Helix;
  const bool strand_psi = (psi >= 80.0 && psi <= 180.0) || (psi >= -180.0 && psi <= -170.0);
  if (phi >= -180.0 && phi <= -80.0 && strand_psi) return SecondaryStructure::Strand;
  return SecondaryStructure::Coil;
}

std::vector<SecondaryStructure> compute_secondary_structure(const Dihedrals& d) {
  std::vector<SecondaryStructure> out(d.phi.size());
  for (std::size_t i = 0; i < d.phi.size(); ++i)
    out[i] = classify_secondary_structure(d.phi[i], d.psi[i]);
  return out;
}

std::vector<SecondaryStructure> compute_secondary_structure(const ComplexStructure& s) {
  return compute_secondary_structure(compute_dihedrals(s));
}

namespace {

constexpr double kProbeRadius = 1.4;
constexpr int kSpherePoints = 92;

double vdw_radius(char element) {
  switch (element) {
    case 'N': return 1.55;
    case 'O': return 1.52;
    default: return 1.70;  // carbon
  }
}

// Theoretical per-residue maximum accessible surface areas (A^2).
double max_asa(ResidueType t) {
  static const std::array<double, kNumResidueTypes> table = {
      129.0, 274.0, 195.0, 193.0, 167.0, 225.0, 223.0, 104.0, 224.0, 197.0, 201.0,
      236.0, 224.0, 240.0, 159.0, 155.0, 172.0, 285.0, 263.0, 174.0, 200.0};
  return table[static_cast<std::size_t>(residue_index(t))];
}

std::vector<Vec3> sphere_points(int n) {
  // Deterministic golden-spiral point set on the unit sphere.
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  const double golden_angle = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double theta = golden_angle * static_cast<double>(i);
    pts.push_back(Vec3{r * std::cos(theta), r * std::sin(theta), z});
  }
  return pts;
}

struct SurfaceAtom {
  Vec3 pos;
  double radius;
  std::int32_t residue;
};

}  // namespace

std::vector<double> compute_rasa(const ComplexStructure& s) {
  const std::vector<NodeView> nodes = flatten(s);
  std::vector<SurfaceAtom> atoms;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const ResidueRecord& r = *nodes[i].res;
    const auto push = [&](const std::optional<Vec3>& a, char elem) {
      if (a.has_value())
        atoms.push_back(SurfaceAtom{*a, vdw_radius(elem), static_cast<std::int32_t>(i)});
    };
    push(r.n, 'N');
    push(r.ca, 'C');
    push(r.c, 'C');
    push(r.o, 'O');
    push(r.cb, 'C');
  }

  const std::vector<Vec3> unit = sphere_points(kSpherePoints);
  std::vector<double> asa(nodes.size(), 0.0);

  // Neighbor prefilter: atoms whose inflated spheres can overlap.
  const std::size_t na = atoms.size();
  for (std::size_t ai = 0; ai < na; ++ai) {
    const SurfaceAtom& a = atoms[ai];
    const double ra = a.radius + kProbeRadius;
    std::vector<const SurfaceAtom*> close;
    for (std::size_t bi = 0; bi < na; ++bi) {
      if (bi == ai) continue;
      const SurfaceAtom& b = atoms[bi];
      const double reach = ra + b.radius + kProbeRadius;
      if (distance_sq(a.pos, b.pos) < reach * reach) close.push_back(&b);
    }
    int exposed = 0;
    for (const Vec3& u : unit) {
      const Vec3 p = a.pos + u * ra;
      bool buried = false;
      for (const SurfaceAtom* b : close) {
        const double rb = b->radius + kProbeRadius;
        if (distance_sq(p, b->pos) < rb * rb) {
          buried = true;
          break;
        }
      }
      if (!buried) exposed++;
    }
    asa[static_cast<std::size_t>(a.residue)] +=
        4.0 * M_PI * ra * ra * static_cast<double>(exposed) / static_cast<double>(kSpherePoints);
  }

  std::vector<double> rasa(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    rasa[i] = std::clamp(asa[i] / max_asa(nodes[i].res->residue_type), 0.0, 1.0);
  return rasa;
}

Tensor<float> laplacian_pe(const EdgeList& edges, std::int32_t num_nodes, int dim) {
  const std::int32_t n = num_nodes;
  // Undirected union of the directed k-NN edges, for the Laplacian only.
  std::set<std::pair<std::int32_t, std::int32_t>> und;
  for (std::int64_t m = 0; m < edges.size(); ++m) {
    const std::int32_t a = edges.src[static_cast<std::size_t>(m)];
    const std::int32_t b = edges.dst[static_cast<std::size_t>(m)];
    if (a == b) continue;
    und.insert({std::min(a, b), std::max(a, b)});
  }
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [a, b] : und) {
    adj(a, b) = 1.0;
    adj(b, a) = 1.0;
  }
  Eigen::VectorXd deg = adj.rowwise().sum();
  Eigen::VectorXd dinv = deg.unaryExpr([](double d) { return d > 0 ? 1.0 / std::sqrt(d) : 0.0; });
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - dinv.asDiagonal() * adj * dinv.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success)
    throw SolverFailure("Laplacian eigendecomposition did not converge");
  const Eigen::MatrixXd& vecs = solver.eigenvectors();  // ascending eigenvalues

  Tensor<float> pe(n, dim);
  const int avail = std::min<int>(dim, n - 1);
  for (int c = 0; c < avail; ++c) {
    Eigen::VectorXd v = vecs.col(c + 1);  // skip the trivial constant mode
    // Sign convention: make the largest-magnitude entry positive.
    int arg = 0;
    for (int r = 1; r < n; ++r)
      if (std::abs(v(r)) > std::abs(v(arg))) arg = r;
    if (v(arg) < 0) v = -v;
    for (int r = 0; r < n; ++r) pe(r, c) = static_cast<float>(v(r));
  }
  return pe;
}

double edge_positional_encoding(std::int32_t seq_i, std::int32_t seq_j, bool same_chain) {
  if (!same_chain) return 1.0;
  const double sep = std::abs(static_cast<double>(seq_i) - static_cast<double>(seq_j));
  return std::min(sep, static_cast<double>(kEdgePeClamp)) / static_cast<double>(kEdgePeClamp);
}

Tensor<float> assemble_edge_features(const ComplexStructure& s, const EdgeList& edges) {
  const std::vector<NodeView> nodes = flatten(s);
  const std::int64_t m = edges.size();
  Tensor<float> feats(m, kEdgeFeatureDim);
  for (std::int64_t e = 0; e < m; ++e) {
    const NodeView& srcv = nodes[static_cast<std::size_t>(edges.src[static_cast<std::size_t>(e)])];
    const NodeView& dstv = nodes[static_cast<std::size_t>(edges.dst[static_cast<std::size_t>(e)])];
    const ResidueRecord& rs = *srcv.res;
    const ResidueRecord& rd = *dstv.res;

    const Vec3 ca_s = *rs.ca;
    const Vec3 ca_d = *rd.ca;
    const Vec3 cb_s = rs.cb.value_or(ca_s);  // glycine fallback
    const Vec3 cb_d = rd.cb.value_or(ca_d);
    const Vec3 n_s = rs.n.value_or(ca_s);
    const Vec3 o_d = rd.o.value_or(ca_d);

    const double d_ca = distance(ca_s, ca_d);
    const double d_cb = distance(cb_s, cb_d);
    const double d_no = distance(n_s, o_d);
    const bool same_chain = srcv.chain == dstv.chain;

    feats(e, 0) = static_cast<float>(std::clamp(d_ca / kDistanceScale, 0.0, 1.0));
    feats(e, 1) = static_cast<float>(std::clamp(d_cb / kDistanceScale, 0.0, 1.0));
    feats(e, 2) = static_cast<float>(std::clamp(d_no / kDistanceScale, 0.0, 1.0));
    feats(e, 3) = d_ca < kContactCutoff ? 1.0f : 0.0f;
    feats(e, 4) = (same_chain && std::abs(srcv.seq - dstv.seq) == 1) ? 1.0f : 0.0f;
    feats(e, 5) = static_cast<float>(edge_positional_encoding(dstv.seq, srcv.seq, same_chain));
  }
  require_finite(feats, "assemble_edge_features");
  return feats;
}

Tensor<float> assemble_node_features(const ComplexStructure& s, const EdgeList& edges) {
  const std::vector<NodeView> nodes = flatten(s);
  const std::int32_t n = static_cast<std::int32_t>(nodes.size());

  const Dihedrals dih = compute_dihedrals(s);
  const std::vector<SecondaryStructure> ss = compute_secondary_structure(dih);
  const std::vector<double> rasa = compute_rasa(s);
  const Tensor<float> pe = laplacian_pe(edges, n, kLapPeDim);

  if (static_cast<std::int32_t>(dih.phi.size()) != n ||
      static_cast<std::int32_t>(rasa.size()) != n || pe.rows() != n || pe.cols() != kLapPeDim)
    throw ShapeMismatch("node feature block has unexpected width");

  Tensor<float> feats(n, kNodeFeatureDim);
  for (std::int32_t i = 0; i < n; ++i) {
    const std::size_t iu = static_cast<std::size_t>(i);
    feats(i, residue_index(nodes[iu].res->residue_type)) = 1.0f;
    feats(i, 21 + static_cast<int>(ss[iu])) = 1.0f;
    feats(i, 24) = static_cast<float>(rasa[iu]);
    feats(i, 25) = static_cast<float>(normalize_angle(dih.phi[iu]));
    feats(i, 26) = static_cast<float>(normalize_angle(dih.psi[iu]));
    for (int c = 0; c < kLapPeDim; ++c) feats(i, 27 + c) = pe(i, c);
  }
  require_finite(feats, "assemble_node_features");
  return feats;
}

ProteinGraph featurize(const ComplexStructure& s, int k) {
  ProteinGraph g;
  g.target_id = s.target_id;
  g.decoy_id = s.decoy_id;
  g.num_nodes = static_cast<std::int32_t>(s.total_residues());
  g.edges = build_knn_graph(s, k);
  g.node_features = assemble_node_features(s, g.edges);
  g.edge_features = assemble_edge_features(s, g.edges);
  const std::vector<NodeView> nodes = flatten(s);
  g.node_chain.reserve(nodes.size());
  g.node_seq.reserve(nodes.size());
  for (const NodeView& nv : nodes) {
    g.node_chain.push_back(nv.chain);
    g.node_seq.push_back(nv.seq);
  }
  return g;
}

namespace {

constexpr char kGraphMagic[4] = {'C', 'Q', 'G', 'R'};

void write_f32(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(float))));
}

void write_i32(std::ofstream& out, const std::vector<std::int32_t>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(std::int32_t)));
}

}  // namespace

void save_graph(const ProteinGraph& g, const std::string& path) {
  nlohmann::ordered_json header;
  header["format_version"] = 1;
  header["target_id"] = g.target_id;
  header["decoy_id"] = g.decoy_id;
  header["num_nodes"] = g.num_nodes;
  header["num_edges"] = g.edges.size();
  header["node_feature_names"] = {"res_onehot:21", "ss3:3", "rasa:1", "phi:1", "psi:1", "lap_pe:8"};
  header["edge_feature_names"] = {"d_ca", "d_cb", "d_no", "contact", "chain_adj", "edge_pe"};
  header["blobs"] = nlohmann::ordered_json::array({
      nlohmann::ordered_json{{"name", "node_features"}, {"dtype", "f32"}, {"rows", g.node_features.rows()}, {"cols", g.node_features.cols()}},
      nlohmann::ordered_json{{"name", "edge_features"}, {"dtype", "f32"}, {"rows", g.edge_features.rows()}, {"cols", g.edge_features.cols()}},
      nlohmann::ordered_json{{"name", "edge_src"}, {"dtype", "i32"}, {"rows", g.edges.size()}, {"cols", 1}},
      nlohmann::ordered_json{{"name", "edge_dst"}, {"dtype", "i32"}, {"rows", g.edges.size()}, {"cols", 1}},
      nlohmann::ordered_json{{"name", "node_chain"}, {"dtype", "i32"}, {"rows", g.num_nodes}, {"cols", 1}},
      nlohmann::ordered_json{{"name", "node_seq"}, {"dtype", "i32"}, {"rows", g.num_nodes}, {"cols", 1}},
  });
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write graph cache: " + path);
  out.write(kGraphMagic, 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  write_f32(out, g.node_features);
  write_f32(out, g.edge_features);
  write_i32(out, g.edges.src);
  write_i32(out, g.edges.dst);
  write_i32(out, g.node_chain);
  write_i32(out, g.node_seq);
  if (!out) throw FormatError("short write to graph cache: " + path);
}

ProteinGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open graph cache: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kGraphMagic, 4) != 0)
    throw FormatError("not a graph cache file: " + path);
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw FormatError("truncated graph cache header: " + path);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad graph cache header: ") + e.what());
  }
  if (header.at("format_version").get<int>() != 1)
    throw FormatError("unsupported graph cache version");

  ProteinGraph g;
  g.target_id = header.at("target_id").get<std::string>();
  g.decoy_id = header.at("decoy_id").get<std::string>();
  g.num_nodes = header.at("num_nodes").get<std::int32_t>();
  const std::int64_t m = header.at("num_edges").get<std::int64_t>();

  const auto read_f32 = [&](std::int64_t rows, std::int64_t cols) {
    Tensor<float> t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(float))));
    return t;
  };
  const auto read_i32 = [&](std::int64_t count) {
    std::vector<std::int32_t> v(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 4));
    return v;
  };

  for (const auto& blob : header.at("blobs")) {
    const std::string name = blob.at("name").get<std::string>();
    const std::int64_t rows = blob.at("rows").get<std::int64_t>();
    const std::int64_t cols = blob.at("cols").get<std::int64_t>();
    if (name == "node_features") g.node_features = read_f32(rows, cols);
    else if (name == "edge_features") g.edge_features = read_f32(rows, cols);
    else if (name == "edge_src") g.edges.src = read_i32(rows);
    else if (name == "edge_dst") g.edges.dst = read_i32(rows);
    else if (name == "node_chain") g.node_chain = read_i32(rows);
    else if (name == "node_seq") g.node_seq = read_i32(rows);
    else throw FormatError("unknown blob in graph cache: " + name);
  }
  if (!in) throw FormatError("truncated graph cache data: " + path);
  if (g.edges.size() != m || g.node_features.rows() != g.num_nodes)
    throw FormatError("inconsistent graph cache dimensions: " + path);
  return g;
}

bool operator==(const ProteinGraph& a, const ProteinGraph& b) {
  return a.target_id == b.target_id && a.decoy_id == b.decoy_id && a.num_nodes == b.num_nodes &&
         a.edges.src == b.edges.src && a.edges.dst == b.edges.dst &&
         a.node_chain == b.node_chain && a.node_seq == b.node_seq &&
         a.node_features.shape() == b.node_features.shape() &&
         a.edge_features.shape() == b.edge_features.shape() &&
         a.node_features.storage() == b.node_features.storage() &&
         a.edge_features.storage() == b.edge_features.storage();
}

}  // namespace cqa
