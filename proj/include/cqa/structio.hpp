#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "cqa/geom.hpp"

namespace cqa {

// 20 standard amino acids in alphabetical three-letter-code order, plus UNK.
enum class ResidueType : std::uint8_t {
  ALA = 0, ARG, ASN, ASP, CYS, GLN, GLU, GLY, HIS, ILE,
  LEU, LYS, MET, PHE, PRO, SER, THR, TRP, TYR, VAL,
  UNK = 20,
};

constexpr int kNumResidueTypes = 21;

// Stable index for one-hot encoding: ALA..VAL = 0..19, anything else = 20.
int residue_index(ResidueType t);
ResidueType residue_type_from_code(const std::string& three_letter);
const char* residue_code(ResidueType t);

struct ResidueRecord {
  char chain_id = ' ';
  int seq_index = 0;   // per-chain ordinal after collapsing (resSeq, iCode)
  int auth_seq = 0;    // author residue number, kept for pairing diagnostics
  char icode = ' ';
  ResidueType residue_type = ResidueType::UNK;
  std::optional<Vec3> ca;
  std::optional<Vec3> cb;
  std::optional<Vec3> n;
  std::optional<Vec3> o;
  std::optional<Vec3> c;  // backbone carbonyl carbon, kept when present for dihedrals
};

struct Chain {
  char id = ' ';
  std::vector<ResidueRecord> residues;
};

struct ComplexStructure {
  std::string target_id;
  std::string decoy_id;
  std::vector<Chain> chains;

  int total_residues() const {
    int n = 0;
    for (const Chain& c : chains) n += static_cast<int>(c.residues.size());
    return n;
  }
};

struct ParseStats {
  int dropped_no_ca = 0;       // residues discarded for lacking a CA atom
  int duplicate_atoms = 0;     // repeated atom names within a residue (first kept)
  int skipped_altloc = 0;      // atoms with altLoc other than ' ' or 'A'
  int substituted_backbone = 0;  // residues where N or O fell back to CA
};

struct ParseOptions {
  bool allow_single_chain = false;
  std::string target_id;
  std::string decoy_id;
};

// Parse fixed-column ATOM records (PDB v3.3). First MODEL only, altLoc ' ' or
// 'A', HETATM ignored. Residues are ordered within each chain by
// (resSeq, iCode) and re-numbered 0..n-1; chains keep first-appearance order.
ComplexStructure parse_pdb(std::istream& in, const ParseOptions& opts = {},
                           ParseStats* stats = nullptr);
ComplexStructure parse_pdb_file(const std::string& path, const ParseOptions& opts = {},
                                ParseStats* stats = nullptr);

// Internal JSON dump, see docs/formats.md. Round-trips exactly.
std::string to_json(const ComplexStructure& s);
ComplexStructure structure_from_json(const std::string& text);

bool operator==(const ResidueRecord& a, const ResidueRecord& b);
bool operator==(const Chain& a, const Chain& b);
bool operator==(const ComplexStructure& a, const ComplexStructure& b);

}  // namespace cqa
