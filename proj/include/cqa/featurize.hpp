#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cqa/structio.hpp"
#include "cqa/tensor.hpp"

namespace cqa {

constexpr int kNodeFeatureDim = 35;  // 21 one-hot + 3 SS + rASA + phi + psi + 8 LapPE
constexpr int kEdgeFeatureDim = 6;   // dCA, dCB, dNO, contact, chain_adj, edge_pe
constexpr int kDefaultNeighbors = 10;
constexpr int kLapPeDim = 8;
constexpr double kDistanceScale = 20.0;      // Angstrom divisor for distance features
constexpr int kEdgePeClamp = 64;             // sequence-separation clamp
constexpr double kContactCutoff = 8.0;       // CA-CA contact threshold (strict <)

struct EdgeList {
  // Edge m runs src[m] -> dst[m]; grouped by dst, nearest first.
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> dst;
  std::int64_t size() const { return static_cast<std::int64_t>(src.size()); }
};

struct ProteinGraph {
  std::string target_id;
  std::string decoy_id;
  std::int32_t num_nodes = 0;
  EdgeList edges;
  Tensor<float> node_features;  // N x 35
  Tensor<float> edge_features;  // M x 6
  std::vector<std::int32_t> node_chain;  // chain ordinal per node
  std::vector<std::int32_t> node_seq;    // per-chain ordinal per node
};

// k nearest CA neighbors per node (Euclidean), ties broken by
// (chain ordinal, seq ordinal); k is clamped to N-1.
EdgeList build_knn_graph(const ComplexStructure& s, int k = kDefaultNeighbors);

struct Dihedrals {
  std::vector<double> phi;  // degrees in [-180, 180], 0 at chain termini
  std::vector<double> psi;
};
Dihedrals compute_dihedrals(const ComplexStructure& s);

// Min-max map of [-180, 180] degrees onto [0, 1].
double normalize_angle(double theta_degrees);

enum class SecondaryStructure : std::uint8_t { Helix = 0, Strand = 1, Coil = 2 };

// Ramachandran-box classifier standing in for DSSP's 3-state assignment.
SecondaryStructure classify_secondary_structure(double phi_deg, double psi_deg);
std::vector<SecondaryStructure> compute_secondary_structure(const ComplexStructure& s);
std::vector<SecondaryStructure> compute_secondary_structure(const Dihedrals& d);

// Shrake-Rupley accessible surface over retained backbone atoms + CB,
// probe 1.4 A, 92 sphere points, relative to per-residue-type maxima.
std::vector<double> compute_rasa(const ComplexStructure& s);

// Eigenvectors of the symmetric normalized Laplacian for the 8 smallest
// nontrivial eigenvalues; zero-padded when N-1 < 8; per-column sign fixed so
// the largest-magnitude entry is positive.
Tensor<float> laplacian_pe(const EdgeList& edges, std::int32_t num_nodes, int dim = kLapPeDim);

double edge_positional_encoding(std::int32_t seq_i, std::int32_t seq_j, bool same_chain);

Tensor<float> assemble_edge_features(const ComplexStructure& s, const EdgeList& edges);
Tensor<float> assemble_node_features(const ComplexStructure& s, const EdgeList& edges);

ProteinGraph featurize(const ComplexStructure& s, int k = kDefaultNeighbors);

// Graph cache container: JSON header + little-endian 32-bit blobs
// (see docs/formats.md). Round-trips bit-exactly.
void save_graph(const ProteinGraph& g, const std::string& path);
ProteinGraph load_graph(const std::string& path);

bool operator==(const ProteinGraph& a, const ProteinGraph& b);

}  // namespace cqa
