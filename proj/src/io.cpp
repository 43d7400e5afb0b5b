/*=========================================================================
 *
 *  Copyright the geomatch authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         http://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#include "geomatch/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace geomatch {

namespace fs = std::filesystem;

void atomic_write(const std::string& path, const std::string& content) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out << content;
  }
  fs::rename(tmp, target);
}

std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

namespace {

// reads the next token skipping whitespace and '#' comments
std::string pgm_token(std::istream& in) {
  std::string tok;
  for (;;) {
    const int c = in.get();
    if (c == EOF) {
      if (tok.empty()) throw FormatError("unexpected end of PGM header");
      return tok;
    }
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      if (!tok.empty()) return tok;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(c));
  }
}

}  // namespace

PgmImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open PGM file " + path);
  const std::string magic = pgm_token(in);
  if (magic != "P2" && magic != "P5") throw FormatError("bad PGM magic '" + magic + "'");
  PgmImage img;
  img.width = std::stoi(pgm_token(in));
  img.height = std::stoi(pgm_token(in));
  img.maxval = std::stoi(pgm_token(in));
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535)
    throw FormatError("bad PGM dimensions");
  const std::size_t count = std::size_t(img.width) * img.height;
  img.values.resize(count);
  if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) img.values[i] = std::stod(pgm_token(in)) / img.maxval;
  } else {
    // pgm_token consumed the single whitespace after maxval already
    const int bytes = img.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (std::size_t(in.gcount()) != raw.size()) throw FormatError("truncated PGM payload");
    for (std::size_t i = 0; i < count; ++i) {
      const int v = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
      img.values[i] = double(v) / img.maxval;
    }
  }
  return img;
}

void save_pgm(const std::string& path, const PgmImage& img, bool binary) {
  std::ostringstream out;
  out << (binary ? "P5" : "P2") << "\n" << img.width << " " << img.height << "\n" << img.maxval
      << "\n";
  auto quant = [&](double v) {
    const long q = std::lround(std::min(1.0, std::max(0.0, v)) * img.maxval);
    return int(q);
  };
  if (binary) {
    const int bytes = img.maxval > 255 ? 2 : 1;
    for (double v : img.values) {
      const int q = quant(v);
      if (bytes == 2) out.put(char(q >> 8));
      out.put(char(q & 0xff));
    }
  } else {
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      out << quant(img.values[i]);
      out << ((i % 16 == 15) ? "\n" : " ");
    }
    out << "\n";
  }
  atomic_write(path, out.str());
}

IntensityGrid grid_from_pgm(const PgmImage& img) {
  if (img.width != img.height) throw FormatError("image lattice must be square");
  IntensityGrid g;
  g.res = img.width - 1;
  if (g.res < 1) throw FormatError("image lattice too small");
  g.values.resize(img.values.size());
  // PGM rows run top-down; the lattice's j axis runs bottom-up
  for (int j = 0; j <= g.res; ++j)
    for (int i = 0; i <= g.res; ++i)
      g.at(i, j) = img.values[std::size_t(img.width) * (g.res - j) + i];
  return g;
}

PgmImage pgm_from_grid(const IntensityGrid& grid, int maxval) {
  PgmImage img;
  img.width = img.height = grid.res + 1;
  img.maxval = maxval;
  img.values.resize(grid.values.size());
  for (int j = 0; j <= grid.res; ++j)
    for (int i = 0; i <= grid.res; ++i)
      img.values[std::size_t(img.width) * (grid.res - j) + i] = grid.at(i, j);
  return img;
}

// ---------------------------------------------------------------------------
// Sidecar images
// ---------------------------------------------------------------------------

PiecewiseImage load_image(const std::string& path_pgm, const std::string& path_sidecar) {
  std::ifstream in(path_sidecar);
  if (!in) throw FormatError("cannot open sidecar " + path_sidecar);
  const fs::path dir = fs::path(path_sidecar).parent_path();

  std::vector<IntensityGrid> grids;
  std::vector<LipschitzDomain> pieces;
  std::string line;
  bool single = false;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "single") {
      single = true;
    } else if (word == "piece") {
      std::string gridref, polyword;
      int k = 0;
      if (!(ls >> gridref >> polyword >> k) || polyword != "polygon")
        throw FormatError("sidecar: bad piece record");
      LipschitzDomain d;
      for (int i = 0; i < k; ++i) {
        double x, y;
        if (!(ls >> x >> y)) throw FormatError("sidecar: truncated polygon");
        d.vertices.push_back({x, y});
      }
      pieces.push_back(std::move(d));
      const std::string gpath = gridref == "=main" ? path_pgm : (dir / gridref).string();
      grids.push_back(grid_from_pgm(load_pgm(gpath)));
    } else {
      throw FormatError("sidecar: unknown record '" + word + "'");
    }
  }
  if (single) {
    if (!pieces.empty()) throw FormatError("sidecar: 'single' plus piece records");
    return single_piece_image(grid_from_pgm(load_pgm(path_pgm)));
  }
  if (pieces.empty()) throw FormatError("sidecar: no pieces");
  return project(std::move(grids), std::move(pieces));
}

void save_image(const std::string& dir, const std::string& base, const PiecewiseImage& img,
                int maxval) {
  fs::create_directories(dir);
  std::ostringstream sidecar;
  if (img.pieces.size() == 1) {
    save_pgm((fs::path(dir) / (base + ".pgm")).string(), pgm_from_grid(img.intensities[0], maxval));
    sidecar << "single\n";
  } else {
    for (std::size_t p = 0; p < img.pieces.size(); ++p) {
      const std::string name = base + "_piece" + std::to_string(p) + ".pgm";
      save_pgm((fs::path(dir) / name).string(), pgm_from_grid(img.intensities[p], maxval));
      sidecar << "piece " << name << " polygon " << img.pieces[p].vertices.size();
      for (const Vec2 v : img.pieces[p].vertices)
        sidecar << " " << format_g17(v.x) << " " << format_g17(v.y);
      sidecar << "\n";
    }
  }
  atomic_write((fs::path(dir) / (base + ".txt")).string(), sidecar.str());
  save_curve((fs::path(dir) / (base + ".curve")).string(), img.jump);
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

void save_curve(const std::string& path, const JumpCurve& curve) {
  std::ostringstream out;
  for (const auto& seg : curve.segments) {
    out << format_g17(seg.a.x) << " " << format_g17(seg.a.y) << " " << format_g17(seg.b.x) << " "
        << format_g17(seg.b.y) << " " << format_g17(seg.normal.x) << " "
        << format_g17(seg.normal.y) << " " << format_g17(seg.f_plus) << " "
        << format_g17(seg.f_minus) << "\n";
  }
  atomic_write(path, out.str());
}

JumpCurve load_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open curve file " + path);
  JumpCurve curve;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    JumpSegment seg;
    if (!(ls >> seg.a.x >> seg.a.y >> seg.b.x >> seg.b.y >> seg.normal.x >> seg.normal.y >>
          seg.f_plus >> seg.f_minus)) {
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      throw FormatError("bad curve record: " + line);
    }
    curve.segments.push_back(seg);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Momenta
// ---------------------------------------------------------------------------

void save_momenta(const std::string& path, const MomentumTriple& mom, int grid_n) {
  std::ostringstream out;
  out << "momenta " << grid_n << " " << mom.p_b.size() << "\n";
  for (std::size_t f = 0; f < mom.p_a.size(); ++f) {
    if (mom.p_a[f].x != 0 || mom.p_a[f].y != 0)
      out << "a " << int(f) % grid_n << " " << int(f) / grid_n << " " << format_g17(mom.p_a[f].x)
          << " " << format_g17(mom.p_a[f].y) << "\n";
  }
  for (std::size_t k = 0; k < mom.p_b.size(); ++k)
    if (mom.p_b[k].x != 0 || mom.p_b[k].y != 0)
      out << "b " << k << " " << format_g17(mom.p_b[k].x) << " " << format_g17(mom.p_b[k].y)
          << "\n";
  for (std::size_t f = 0; f < mom.p_c.size(); ++f)
    if (mom.p_c[f] != 0)
      out << "c " << int(f) % grid_n << " " << int(f) / grid_n << " " << format_g17(mom.p_c[f])
          << "\n";
  atomic_write(path, out.str());
}

MomentumTriple load_momenta(const std::string& path, int* grid_n_out, int* n_curve_out) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open momenta file " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("momenta file: missing header");
  std::istringstream hs(line);
  std::string word;
  int grid_n = 0, n_curve = 0;
  if (!(hs >> word >> grid_n >> n_curve) || word != "momenta" || grid_n < 1 || n_curve < 0)
    throw FormatError("momenta file: bad header");
  MomentumTriple mom = MomentumTriple::zero(std::size_t(grid_n) * grid_n, n_curve);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "a" || kind == "c") {
      int i, j;
      if (!(ls >> i >> j) || i < 0 || i >= grid_n || j < 0 || j >= grid_n)
        throw FormatError("momenta record out of range: " + line);
      const std::size_t f = std::size_t(i) + std::size_t(grid_n) * j;
      if (kind == "a") {
        if (!(ls >> mom.p_a[f].x >> mom.p_a[f].y)) throw FormatError("bad record: " + line);
      } else {
        if (!(ls >> mom.p_c[f])) throw FormatError("bad record: " + line);
      }
    } else if (kind == "b") {
      int k;
      if (!(ls >> k) || k < 0 || k >= n_curve) throw FormatError("momenta record out of range");
      if (!(ls >> mom.p_b[k].x >> mom.p_b[k].y)) throw FormatError("bad record: " + line);
    } else {
      throw FormatError("momenta file: unknown kind '" + kind + "'");
    }
  }
  if (grid_n_out) *grid_n_out = grid_n;
  if (n_curve_out) *n_curve_out = n_curve;
  return mom;
}

// ---------------------------------------------------------------------------
// Hamiltonian state files
// ---------------------------------------------------------------------------

void save_hamiltonian_state(const std::string& path, const HamiltonianState& state) {
  std::ostringstream out;
  out << "hamiltonian_state " << state.n << " " << state.r << " " << state.Q0.size() << "\n";
  for (std::size_t k = 0; k < state.Q0.size(); ++k)
    out << "curve " << format_g17(state.Q0[k].x) << " " << format_g17(state.Q0[k].y) << " "
        << format_g17(state.P0[k].x) << " " << format_g17(state.P0[k].y) << " "
        << format_g17(state.curve_weights[k]) << "\n";
  for (int i = 0; i < state.r; ++i) {
    out << "pieceQ " << i;
    for (double v : state.Q[i]) out << " " << format_g17(v);
    out << "\npieceP " << i;
    for (double v : state.P[i]) out << " " << format_g17(v);
    out << "\n";
    if (!state.pieces.empty()) {
      out << "polygon " << i << " " << state.pieces[i].vertices.size();
      for (const Vec2 v : state.pieces[i].vertices)
        out << " " << format_g17(v.x) << " " << format_g17(v.y);
      out << "\n";
    }
  }
  atomic_write(path, out.str());
}

HamiltonianState load_hamiltonian_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open state file " + path);
  HamiltonianState st;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("state file: missing header");
  {
    std::istringstream hs(line);
    std::string word;
    int ncurve = 0;
    if (!(hs >> word >> st.n >> st.r >> ncurve) || word != "hamiltonian_state")
      throw FormatError("state file: bad header");
    st.Q0.reserve(ncurve);
  }
  st.Q.assign(st.r, std::vector<double>(std::size_t(st.n) * st.n, 0.0));
  st.P.assign(st.r, std::vector<double>(std::size_t(st.n) * st.n, 0.0));
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "curve") {
      Vec2 q, p;
      double w;
      if (!(ls >> q.x >> q.y >> p.x >> p.y >> w)) throw FormatError("bad curve record");
      st.Q0.push_back(q);
      st.P0.push_back(p);
      st.curve_weights.push_back(w);
    } else if (word == "pieceQ" || word == "pieceP") {
      int i;
      if (!(ls >> i) || i < 0 || i >= st.r) throw FormatError("piece index out of range");
      auto& dst = word == "pieceQ" ? st.Q[i] : st.P[i];
      for (auto& v : dst)
        if (!(ls >> v)) throw FormatError("truncated piece grid");
    } else if (word == "polygon") {
      int i, k;
      if (!(ls >> i >> k)) throw FormatError("bad polygon record");
      if (st.pieces.empty()) st.pieces.resize(st.r);
      for (int v = 0; v < k; ++v) {
        Vec2 p;
        if (!(ls >> p.x >> p.y)) throw FormatError("truncated polygon record");
        st.pieces[i].vertices.push_back(p);
      }
    } else {
      throw FormatError("state file: unknown record '" + word + "'");
    }
  }
  st.validate();
  return st;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

void flow_rows(std::ostringstream& out, const FlowState& st, int base_id) {
  for (std::size_t i = 0; i < st.positions.size(); ++i) {
    const Mat2& D = st.differentials[i];
    out << format_g17(st.time) << "," << base_id + int(i) << "," << format_g17(st.positions[i].x)
        << "," << format_g17(st.positions[i].y) << "," << format_g17(D.a) << ","
        << format_g17(D.b) << "," << format_g17(D.c) << "," << format_g17(D.d) << ","
        << format_g17(st.jacobians[i]) << "\n";
  }
}

}  // namespace

void save_trajectory_csv(const std::string& path, const ShootingTrajectory& traj) {
  std::ostringstream out;
  out << "t,particle_id,x,y,d11,d12,d21,d22,jac\n";
  const int curve_base = int(traj.problem.grid_nodes.size());
  for (const auto& st : traj.states) {
    flow_rows(out, st.grid_flow, 0);
    flow_rows(out, st.curve_flow, curve_base);
  }
  atomic_write(path, out.str());
}

void save_flow_csv(const std::string& path, const FlowTrajectory& traj) {
  std::ostringstream out;
  out << "t,particle_id,x,y,d11,d12,d21,d22,jac\n";
  for (const auto& st : traj.states) flow_rows(out, st, 0);
  atomic_write(path, out.str());
}

void save_speed_csv(const std::string& path, const ShootingTrajectory& traj) {
  std::ostringstream out;
  out << "t,v_norm_sq,s_norm_sq\n";
  for (const auto& st : traj.states)
    out << format_g17(st.time) << "," << format_g17(st.speed_v_sq) << ","
        << format_g17(st.speed_s_sq) << "\n";
  atomic_write(path, out.str());
}

void save_series_csv(const std::string& path, const std::string& header,
                     const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  out << header << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_g17(row[i]);
    out << "\n";
  }
  atomic_write(path, out.str());
}

}  // namespace geomatch
