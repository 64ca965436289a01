#include "cqa/structio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cqa/errors.hpp"

namespace cqa {

namespace {

const std::array<const char*, kNumResidueTypes> kResidueCodes = {
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU",
    "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL", "UNK"};

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_coord(const std::string& line, std::size_t pos, std::size_t len) {
  const std::string field = trim(line.substr(pos, len));
  if (field.empty()) throw MalformedRecord("empty coordinate field in ATOM record");
  double v = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw MalformedRecord("bad coordinate field '" + field + "' in ATOM record");
  return v;
}

int parse_resseq(const std::string& line) {
  const std::string field = trim(line.substr(22, 4));
  if (field.empty()) throw MalformedRecord("empty residue number in ATOM record");
  int v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw MalformedRecord("bad residue number '" + field + "' in ATOM record");
  return v;
}

struct RawResidue {
  int auth_seq = 0;
  char icode = ' ';
  std::string res_name;
  std::optional<Vec3> ca, cb, n, o, c;
  int order_key() const { return auth_seq; }
};

}  // namespace

int residue_index(ResidueType t) { return static_cast<int>(t); }

ResidueType residue_type_from_code(const std::string& three_letter) {
  for (int i = 0; i < kNumResidueTypes - 1; ++i)
    if (three_letter == kResidueCodes[static_cast<std::size_t>(i)]) return static_cast<ResidueType>(i);
  return ResidueType::UNK;
}

const char* residue_code(ResidueType t) { return kResidueCodes[static_cast<std::size_t>(residue_index(t))]; }

ComplexStructure parse_pdb(std::istream& in, const ParseOptions& opts, ParseStats* stats) {
  ParseStats local;
  ParseStats& st = stats ? *stats : local;
  st = ParseStats{};

  // (chain, resSeq, iCode) -> accumulated atoms. Residues are sorted by
  // numbering inside each chain, so line order does not matter.
  std::vector<char> chain_order;
  std::map<char, std::map<std::pair<int, char>, RawResidue>> chains;

  std::string line;
  int models_seen = 0;
  while (std::getline(in, line)) {
    if (line.rfind("MODEL", 0) == 0) {
      if (++models_seen > 1) break;
      continue;
    }
    if (line.rfind("ENDMDL", 0) == 0) break;
    if (line.rfind("ATOM", 0) != 0) continue;  // HETATM and everything else ignored
    if (line.size() < 54) throw MalformedRecord("ATOM record shorter than coordinate columns");

    const std::string atom_name = trim(line.substr(12, 4));
    const char alt_loc = line[16];
    if (alt_loc != ' ' && alt_loc != 'A') {
      st.skipped_altloc++;
      continue;
    }
    if (atom_name != "CA" && atom_name != "CB" && atom_name != "N" && atom_name != "O" &&
        atom_name != "C")
      continue;

    const std::string res_name = trim(line.substr(17, 3));
    const char chain_id = line[21];
    const int res_seq = parse_resseq(line);
    const char icode = line.size() > 26 ? line[26] : ' ';
    const Vec3 pos{parse_coord(line, 30, 8), parse_coord(line, 38, 8), parse_coord(line, 46, 8)};

    if (!chains.count(chain_id)) chain_order.push_back(chain_id);
    RawResidue& res = chains[chain_id][{res_seq, icode}];
    if (res.res_name.empty()) {
      res.res_name = res_name;
      res.auth_seq = res_seq;
      res.icode = icode;
    }
    std::optional<Vec3>* slot = nullptr;
    if (atom_name == "CA") slot = &res.ca;
    else if (atom_name == "CB") slot = &res.cb;
    else if (atom_name == "N") slot = &res.n;
    else if (atom_name == "O") slot = &res.o;
    else slot = &res.c;
    if (slot->has_value()) {
      st.duplicate_atoms++;  // keep first
    } else {
      *slot = pos;
    }
  }

  ComplexStructure out;
  out.target_id = opts.target_id;
  out.decoy_id = opts.decoy_id;
  for (char cid : chain_order) {
    Chain chain;
    chain.id = cid;
    int ordinal = 0;
    for (auto& [key, raw] : chains[cid]) {
      if (!raw.ca.has_value()) {
        st.dropped_no_ca++;
        continue;
      }
      ResidueRecord r;
      r.chain_id = cid;
      r.seq_index = ordinal++;
      r.auth_seq = raw.auth_seq;
      r.icode = raw.icode;
      r.residue_type = residue_type_from_code(raw.res_name);
      r.ca = raw.ca;
      r.cb = raw.cb;
      r.n = raw.n;
      r.o = raw.o;
      r.c = raw.c;
      if (!r.n.has_value() || !r.o.has_value()) {
        st.substituted_backbone++;
        if (!r.n.has_value()) r.n = r.ca;
        if (!r.o.has_value()) r.o = r.ca;
      }
      chain.residues.push_back(std::move(r));
    }
    if (!chain.residues.empty()) out.chains.push_back(std::move(chain));
  }

  if (out.chains.empty()) throw EmptyStructure("no residues with CA atoms found");
  if (out.total_residues() < 2) throw EmptyStructure("structure has fewer than 2 residues");
  if (!opts.allow_single_chain && out.chains.size() < 2)
    throw EmptyStructure("complex mode requires at least 2 chains (use the single-chain flag for monomers)");
  return out;
}

ComplexStructure parse_pdb_file(const std::string& path, const ParseOptions& opts, ParseStats* stats) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open PDB file: " + path);
  return parse_pdb(in, opts, stats);
}

namespace {

nlohmann::ordered_json atom_json(const std::optional<Vec3>& a) {
  if (!a.has_value()) return nullptr;
  return nlohmann::ordered_json::array({a->x, a->y, a->z});
}

std::optional<Vec3> atom_from_json(const nlohmann::ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return Vec3{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::string to_json(const ComplexStructure& s) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["target_id"] = s.target_id;
  j["decoy_id"] = s.decoy_id;
  j["chains"] = nlohmann::ordered_json::array();
  for (const Chain& chain : s.chains) {
    nlohmann::ordered_json jc;
    jc["id"] = std::string(1, chain.id);
    jc["residues"] = nlohmann::ordered_json::array();
    for (const ResidueRecord& r : chain.residues) {
      nlohmann::ordered_json jr;
      jr["seq"] = r.seq_index;
      jr["auth_seq"] = r.auth_seq;
      jr["icode"] = std::string(1, r.icode);
      jr["type"] = residue_code(r.residue_type);
      jr["ca"] = atom_json(r.ca);
      jr["cb"] = atom_json(r.cb);
      jr["n"] = atom_json(r.n);
      jr["o"] = atom_json(r.o);
      jr["c"] = atom_json(r.c);
      jc["residues"].push_back(std::move(jr));
    }
    j["chains"].push_back(std::move(jc));
  }
  return j.dump();
}

ComplexStructure structure_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad structure JSON: ") + e.what());
  }
  ComplexStructure s;
  s.target_id = j.at("target_id").get<std::string>();
  s.decoy_id = j.at("decoy_id").get<std::string>();
  for (const auto& jc : j.at("chains")) {
    Chain chain;
    chain.id = jc.at("id").get<std::string>().at(0);
    for (const auto& jr : jc.at("residues")) {
      ResidueRecord r;
      r.chain_id = chain.id;
      r.seq_index = jr.at("seq").get<int>();
      r.auth_seq = jr.at("auth_seq").get<int>();
      r.icode = jr.at("icode").get<std::string>().at(0);
      r.residue_type = residue_type_from_code(jr.at("type").get<std::string>());
      r.ca = atom_from_json(jr.at("ca"));
      r.cb = atom_from_json(jr.at("cb"));
      r.n = atom_from_json(jr.at("n"));
      r.o = atom_from_json(jr.at("o"));
      r.c = atom_from_json(jr.at("c"));
      chain.residues.push_back(std::move(r));
    }
    s.chains.push_back(std::move(chain));
  }
  return s;
}

namespace {
bool same_atom(const std::optional<Vec3>& a, const std::optional<Vec3>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a.has_value()) return true;
  return a->x == b->x && a->y == b->y && a->z == b->z;
}
}  // namespace

bool operator==(const ResidueRecord& a, const ResidueRecord& b) {
  return a.chain_id == b.chain_id && a.seq_index == b.seq_index && a.auth_seq == b.auth_seq &&
         a.icode == b.icode && a.residue_type == b.residue_type && same_atom(a.ca, b.ca) &&
         same_atom(a.cb, b.cb) && same_atom(a.n, b.n) && same_atom(a.o, b.o) && same_atom(a.c, b.c);
}

bool operator==(const Chain& a, const Chain& b) { return a.id == b.id && a.residues == b.residues; }

bool operator==(const ComplexStructure& a, const ComplexStructure& b) {
  return a.target_id == b.target_id && a.decoy_id == b.decoy_id && a.chains == b.chains;
}

}  // namespace cqa
