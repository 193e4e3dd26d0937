// SPDX-License-Identifier: Apache-2.0

#include "hetserve/latency_model.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "hetserve/errors.h"
#include "hetserve/io.h"
#include "json_util.h"

namespace hetserve {

using detail::json;

LatencyParams LatencyParams::scaled(double factor) const {
  LatencyParams out = *this;
  for (double& c : out.coef) c *= factor;
  return out;
}

bool LatencyParams::all_finite() const {
  return std::all_of(coef.begin(), coef.end(), [](double c) { return std::isfinite(c); });
}

double prefill_time(const LatencyParams& params, std::int64_t batch_size,
                    Tokens input_len) {
  const auto& p = params.coef;
  const double b = static_cast<double>(batch_size);
  const double len = static_cast<double>(input_len);
  return p[0] * b * len + p[1] * b + p[2] * len + p[3];
}

double decode_iteration_time(const LatencyParams& params, Tokens cached_len,
                             std::int64_t batch_size) {
  const auto& p = params.coef;
  const double b = static_cast<double>(batch_size);
  const double len = static_cast<double>(cached_len);
  return p[4] * b * len + p[5] * b + p[6] * len + p[7];
}

namespace {

// Sum over k = 1..O of (I + k).
double cached_length_sum(Tokens input_len, Tokens output_len) {
  const double in = static_cast<double>(input_len);
  const double out = static_cast<double>(output_len);
  return out * in + out * (out + 1.0) / 2.0;
}

}  // namespace

double decode_time(const LatencyParams& params, std::int64_t batch_size,
                   Tokens input_len, Tokens output_len) {
  const auto& p = params.coef;
  const double b = static_cast<double>(batch_size);
  const double s = cached_length_sum(input_len, output_len);
  return (p[4] * b + p[6]) * s + (p[5] * b + p[7]) * static_cast<double>(output_len);
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

constexpr std::size_t kCols = 4;
using Row = std::array<double, kCols>;
using Mat4 = std::array<std::array<double, kCols>, kCols>;

Row prefill_row(const ProfilingSample& s) {
  const double b = static_cast<double>(s.batch_size);
  const double len = static_cast<double>(s.input_len);
  return {b * len, b, len, 1.0};
}

Row decode_row(const ProfilingSample& s) {
  const double b = static_cast<double>(s.batch_size);
  const double sum = cached_length_sum(s.input_len, s.output_len);
  const double out = static_cast<double>(s.output_len);
  return {b * sum, b * out, sum, out};
}

// Eigenvalues of a symmetric 4x4 matrix by cyclic Jacobi rotations.
std::array<double, kCols> symmetric_eigenvalues(Mat4 a) {
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < kCols; ++i)
      for (std::size_t j = i + 1; j < kCols; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-300) break;
    for (std::size_t p = 0; p < kCols; ++p) {
      for (std::size_t q = p + 1; q < kCols; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < kCols; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < kCols; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  return {a[0][0], a[1][1], a[2][2], a[3][3]};
}

// Solves (G + ridge*I) x = rhs by Cholesky; G must be positive semidefinite.
Row cholesky_solve(const Mat4& g, double ridge, const Row& rhs) {
  Mat4 l{};
  for (std::size_t i = 0; i < kCols; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = g[i][j] + (i == j ? ridge : 0.0);
      for (std::size_t k = 0; k < j; ++k) sum -= l[i][k] * l[j][k];
      if (i == j) {
        if (sum <= 0.0) throw FitError("normal equations are not positive definite");
        l[i][i] = std::sqrt(sum);
      } else {
        l[i][j] = sum / l[j][j];
      }
    }
  }
  Row y{};
  for (std::size_t i = 0; i < kCols; ++i) {
    double sum = rhs[i];
    for (std::size_t k = 0; k < i; ++k) sum -= l[i][k] * y[k];
    y[i] = sum / l[i][i];
  }
  Row x{};
  for (std::size_t i = kCols; i-- > 0;) {
    double sum = y[i];
    for (std::size_t k = i + 1; k < kCols; ++k) sum -= l[k][i] * x[k];
    x[i] = sum / l[i][i];
  }
  return x;
}

struct PhaseFit {
  Row coef{};
  double residual_norm = 0.0;
  double condition = 0.0;
};

PhaseFit solve_least_squares(const std::vector<Row>& rows, const std::vector<double>& y,
                             std::string_view phase) {
  // Column equilibration keeps b*I (~1e4) and the constant column on the same
  // scale before forming the normal equations.
  Row scale{};
  for (const Row& r : rows)
    for (std::size_t j = 0; j < kCols; ++j) scale[j] += r[j] * r[j];
  for (std::size_t j = 0; j < kCols; ++j) {
    if (scale[j] == 0.0) {
      throw FitError(fmt::format("{} design: column {} is identically zero", phase, j + 1));
    }
    scale[j] = std::sqrt(scale[j]);
  }

  Mat4 gram{};
  Row rhs{};
  for (std::size_t n = 0; n < rows.size(); ++n) {
    Row r;
    for (std::size_t j = 0; j < kCols; ++j) r[j] = rows[n][j] / scale[j];
    for (std::size_t i = 0; i < kCols; ++i) {
      rhs[i] += r[i] * y[n];
      for (std::size_t j = 0; j < kCols; ++j) gram[i][j] += r[i] * r[j];
    }
  }

  auto eig = symmetric_eigenvalues(gram);
  const double lmax = *std::max_element(eig.begin(), eig.end());
  const double lmin = *std::min_element(eig.begin(), eig.end());
  PhaseFit fit;
  fit.condition = lmin > 0.0 ? std::sqrt(lmax / lmin) : INFINITY;
  if (!(fit.condition < 1e12)) {
    throw FitError(fmt::format(
        "{} design matrix is rank-deficient (condition number {:.3g})", phase,
        fit.condition));
  }

  double trace = 0.0;
  for (std::size_t i = 0; i < kCols; ++i) trace += gram[i][i];
  const double ridge = 1e-12 * trace;

  // The ridge only conditions the factorization; iterative refinement against
  // the unregularized system removes its bias.
  Row x = cholesky_solve(gram, ridge, rhs);
  for (int iter = 0; iter < 3; ++iter) {
    Row resid = rhs;
    for (std::size_t i = 0; i < kCols; ++i)
      for (std::size_t j = 0; j < kCols; ++j) resid[i] -= gram[i][j] * x[j];
    Row dx = cholesky_solve(gram, ridge, resid);
    for (std::size_t i = 0; i < kCols; ++i) x[i] += dx[i];
  }

  for (std::size_t j = 0; j < kCols; ++j) fit.coef[j] = x[j] / scale[j];

  double ss = 0.0;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    double pred = 0.0;
    for (std::size_t j = 0; j < kCols; ++j) pred += rows[n][j] * fit.coef[j];
    ss += (y[n] - pred) * (y[n] - pred);
  }
  fit.residual_norm = std::sqrt(ss);
  return fit;
}

void check_samples(const std::vector<ProfilingSample>& samples, Phase phase) {
  const std::string_view name = phase == Phase::kPrefill ? "prefill" : "decode";
  if (samples.size() < kCols) {
    throw FitError(fmt::format("need at least {} {} samples, got {}", kCols, name,
                               samples.size()));
  }
  std::set<std::int64_t> batch_sizes;
  std::set<std::int64_t> shapes;
  for (const auto& s : samples) {
    if (s.phase != phase) {
      throw FitError(fmt::format("{} sample list contains a sample of the other phase", name));
    }
    if (s.batch_size < 1 || s.input_len < 1 || s.output_len < 1 ||
        !(s.seconds > 0.0) || !std::isfinite(s.seconds)) {
      throw FitError(fmt::format(
          "{} sample has a non-positive field (batch_size={}, input_len={}, "
          "output_len={}, seconds={})",
          name, s.batch_size, s.input_len, s.output_len, s.seconds));
    }
    batch_sizes.insert(s.batch_size);
    // Prefill needs two input lengths; decode needs two values of the mean
    // cached length I + (O + 1) / 2 so that S and O are not collinear.
    shapes.insert(phase == Phase::kPrefill ? s.input_len
                                           : 2 * s.input_len + s.output_len + 1);
  }
  if (batch_sizes.size() < 2) {
    throw FitError(fmt::format(
        "{} design is rank-deficient: all samples share batch_size={}", name,
        *batch_sizes.begin()));
  }
  if (shapes.size() < 2) {
    throw FitError(fmt::format("{} design is rank-deficient: {}", name,
                               phase == Phase::kPrefill
                                   ? "all samples share one input_len"
                                   : "input_len/output_len do not vary"));
  }
}

}  // namespace

FitResult fit_params(const std::vector<ProfilingSample>& prefill_samples,
                     const std::vector<ProfilingSample>& decode_samples) {
  check_samples(prefill_samples, Phase::kPrefill);
  check_samples(decode_samples, Phase::kDecode);

  std::vector<Row> rows;
  std::vector<double> y;
  for (const auto& s : prefill_samples) {
    rows.push_back(prefill_row(s));
    y.push_back(s.seconds);
  }
  PhaseFit prefill = solve_least_squares(rows, y, "prefill");

  rows.clear();
  y.clear();
  for (const auto& s : decode_samples) {
    rows.push_back(decode_row(s));
    y.push_back(s.seconds);
  }
  PhaseFit decode = solve_least_squares(rows, y, "decode");

  FitResult result;
  for (std::size_t j = 0; j < kCols; ++j) {
    result.params.coef[j] = prefill.coef[j];
    result.params.coef[kCols + j] = decode.coef[j];
  }
  result.prefill_residual_norm = prefill.residual_norm;
  result.decode_residual_norm = decode.residual_norm;
  result.residual_norm = std::hypot(prefill.residual_norm, decode.residual_norm);
  result.prefill_condition = prefill.condition;
  result.decode_condition = decode.condition;

  // Both models are bilinear in (b, I), so their minimum over the profiled
  // box sits at a corner; O enters decode quadratically, so every observed O
  // is checked.
  auto bounds = [](const std::vector<ProfilingSample>& samples) {
    std::int64_t bmin = samples[0].batch_size, bmax = bmin;
    Tokens imin = samples[0].input_len, imax = imin;
    std::set<Tokens> outs;
    for (const auto& s : samples) {
      bmin = std::min(bmin, s.batch_size);
      bmax = std::max(bmax, s.batch_size);
      imin = std::min(imin, s.input_len);
      imax = std::max(imax, s.input_len);
      outs.insert(s.output_len);
    }
    return std::make_tuple(std::array{bmin, bmax}, std::array{imin, imax}, outs);
  };
  {
    auto [bs, is, os] = bounds(prefill_samples);
    for (auto b : bs)
      for (auto i : is)
        if (prefill_time(result.params, b, i) <= 0.0) result.nonpositive_on_grid = true;
  }
  {
    auto [bs, is, os] = bounds(decode_samples);
    for (auto b : bs)
      for (auto i : is)
        for (auto o : os)
          if (decode_time(result.params, b, i, o) <= 0.0) result.nonpositive_on_grid = true;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter table and file formats

void ParamsTable::set(const std::string& machine, std::int64_t tp_degree,
                      LatencyParams params, double residual_norm) {
  entries_[{machine, tp_degree}] = Entry{params, residual_norm};
}

const LatencyParams* ParamsTable::find(std::string_view machine,
                                       std::int64_t tp_degree) const {
  auto it = entries_.find({std::string(machine), tp_degree});
  return it == entries_.end() ? nullptr : &it->second.params;
}

const LatencyParams& ParamsTable::at(std::string_view machine,
                                     std::int64_t tp_degree) const {
  const LatencyParams* p = find(machine, tp_degree);
  if (p == nullptr) {
    throw ValidationError(fmt::format("no fitted parameters for machine '{}' at tp_degree {}",
                                      machine, tp_degree));
  }
  return *p;
}

ParamsTable parse_params(std::string_view text) {
  ParamsTable table;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    std::string where = fmt::format("params line {}", line_no);
    try {
      json rec = detail::parse_json(line, line_no);
      detail::check_keys(rec, {"machine_name", "tp_degree", "p1", "p2", "p3", "p4", "p5",
                               "p6", "p7", "p8", "residual_norm"},
                         where);
      LatencyParams params;
      for (std::size_t i = 0; i < 8; ++i) {
        params.coef[i] = detail::get_number(rec, fmt::format("p{}", i + 1), where);
      }
      if (!params.all_finite()) throw ValidationError(where + ": non-finite coefficient");
      double residual = rec.contains("residual_norm")
                            ? detail::get_number(rec, "residual_norm", where)
                            : 0.0;
      std::string machine = detail::get_string(rec, "machine_name", where);
      std::int64_t tp = detail::get_int(rec, "tp_degree", where);
      if (tp < 1) throw ValidationError(where + ": tp_degree must be >= 1");
      if (table.find(machine, tp) != nullptr) {
        throw ValidationError(
            fmt::format("{}: duplicate entry for ({}, {})", where, machine, tp));
      }
      table.set(machine, tp, params, residual);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  });
  return table;
}

std::string serialize_params(const ParamsTable& table) {
  std::string out;
  for (const auto& [key, entry] : table.entries()) {
    json rec;
    rec["machine_name"] = key.first;
    rec["tp_degree"] = key.second;
    for (std::size_t i = 0; i < 8; ++i) rec[fmt::format("p{}", i + 1)] = entry.params.coef[i];
    rec["residual_norm"] = entry.residual_norm;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

ParamsTable load_params(const std::filesystem::path& path) {
  return parse_params(read_file(path));
}

std::vector<SampleGroup> parse_samples(std::string_view text) {
  std::vector<SampleGroup> groups;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    std::string where = fmt::format("samples line {}", line_no);
    try {
      json rec = detail::parse_json(line, line_no);
      detail::check_keys(rec, {"phase", "batch_size", "input_len", "output_len", "seconds",
                               "machine_name", "tp_degree"},
                         where);
      ProfilingSample s;
      std::string phase = detail::get_string(rec, "phase", where);
      if (phase == "prefill") {
        s.phase = Phase::kPrefill;
      } else if (phase == "decode") {
        s.phase = Phase::kDecode;
      } else {
        throw ValidationError(fmt::format("{}: phase must be 'prefill' or 'decode'", where));
      }
      s.batch_size = detail::get_int(rec, "batch_size", where);
      s.input_len = detail::get_int(rec, "input_len", where);
      s.output_len = detail::get_int(rec, "output_len", where);
      s.seconds = detail::get_number(rec, "seconds", where);
      if (s.batch_size < 1 || s.input_len < 1 || s.output_len < 1 || !(s.seconds > 0.0)) {
        throw ValidationError(where + ": all fields must be positive");
      }
      std::string machine = rec.contains("machine_name")
                                ? detail::get_string(rec, "machine_name", where)
                                : std::string("default");
      std::int64_t tp = rec.contains("tp_degree") ? detail::get_int(rec, "tp_degree", where) : 1;
      auto it = std::find_if(groups.begin(), groups.end(), [&](const SampleGroup& g) {
        return g.machine_name == machine && g.tp_degree == tp;
      });
      if (it == groups.end()) {
        groups.push_back(SampleGroup{machine, tp, {}, {}});
        it = std::prev(groups.end());
      }
      (s.phase == Phase::kPrefill ? it->prefill : it->decode).push_back(s);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  });
  return groups;
}

std::string serialize_samples(const std::vector<SampleGroup>& groups) {
  std::string out;
  for (const auto& g : groups) {
    for (const auto* list : {&g.prefill, &g.decode}) {
      for (const auto& s : *list) {
        json rec = {{"machine_name", g.machine_name},
                    {"tp_degree", g.tp_degree},
                    {"phase", s.phase == Phase::kPrefill ? "prefill" : "decode"},
                    {"batch_size", s.batch_size},
                    {"input_len", s.input_len},
                    {"output_len", s.output_len},
                    {"seconds", s.seconds}};
        out += rec.dump();
        out += '\n';
      }
    }
  }
  return out;
}

}  // namespace hetserve
